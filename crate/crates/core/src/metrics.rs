//! Special functions and evaluation formulas.
//!
//! `erf` is evaluated by its Maclaurin series near the origin and by the
//! Laplace continued fraction of `erfc` in the tails. `erf_inv` starts from a
//! rational approximation and is refined by Halley steps on whichever of
//! `erf` / `erfc` keeps relative precision.

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use crate::error::{Error, Result};

/// Switch point between the series and the continued fraction.
const SERIES_LIMIT: f64 = 2.0;

pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    if a <= SERIES_LIMIT {
        erf_series(x)
    } else {
        (1.0 - erfc_cf(a)).copysign(x)
    }
}

pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > SERIES_LIMIT {
        erfc_cf(x)
    } else if x < -SERIES_LIMIT {
        2.0 - erfc_cf(-x)
    } else {
        1.0 - erf_series(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // 2/√π Σ (−1)ⁿ x^{2n+1} / (n!(2n+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x2 / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    FRAC_2_SQRT_PI * sum
}

/// `erfc(x)` for `x > 0` via modified Lentz on
/// `x + (1/2)/(x + 1/(x + (3/2)/(x + …)))`.
fn erfc_cf(x: f64) -> f64 {
    if x > 27.3 {
        return 0.0;
    }
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..5000 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal upper tail `1 − Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn erf_inv(y: f64) -> Result<f64> {
    if !(y.abs() < 1.0) {
        return Err(Error::Domain {
            what: "erf_inv argument",
            value: y,
        });
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let a = y.abs();
    let mut x = giles_initial(a);
    for _ in 0..8 {
        // residual in the function with better relative accuracy at this point
        let r = if a < 0.5 {
            erf(x) - a
        } else {
            (1.0 - a) - erfc(x)
        };
        let deriv = FRAC_2_SQRT_PI * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        let u = r / deriv;
        let step = u / (1.0 + x * u);
        x -= step;
        if step.abs() <= 1e-16 * x.abs() {
            break;
        }
    }
    Ok(x.copysign(y))
}

/// Single-precision rational approximation used as the starting point.
fn giles_initial(x: f64) -> f64 {
    let mut w = -((1.0 - x) * (1.0 + x)).ln();
    let p = if w < 5.0 {
        w -= 2.5;
        let mut p = 2.810_226_36e-08;
        for c in [
            3.432_739_39e-07,
            -3.523_387_7e-06,
            -4.391_506_54e-06,
            0.000_218_580_87,
            -0.001_253_725_03,
            -0.004_177_681_64,
            0.246_640_727,
            1.501_409_41,
        ] {
            p = c + p * w;
        }
        p
    } else {
        w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        for c in [
            0.000_100_950_558,
            0.001_349_343_22,
            -0.003_673_428_44,
            0.005_739_507_73,
            -0.007_622_461_3,
            0.009_438_870_47,
            1.001_674_06,
            2.832_976_82,
        ] {
            p = c + p * w;
        }
        p
    };
    p * x
}

/// Chance-constraint margin `√2·erf⁻¹(2√v − 1)`.
///
/// Defined on `[0.25, 1)`; `v = 0.25` gives zero.
pub fn eta(v: f64) -> Result<f64> {
    if !(0.25..1.0).contains(&v) {
        return Err(Error::Domain {
            what: "probability threshold v",
            value: v,
        });
    }
    Ok(SQRT_2 * erf_inv(2.0 * v.sqrt() - 1.0)?)
}

/// Covariance of the projected quantization noise for one user,
/// `R_q = (P_p/2)·α·ρ·β·[[1, −cos2θ], [−cos2θ, 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNoiseCov {
    pub theta: f64,
    pub scale: f64,
    pub matrix: Matrix2<f64>,
    /// Symmetric positive-definite square root.
    pub sqrt: Matrix2<f64>,
    /// Closed-form inverse square root (minimum-MSE whitening matrix).
    pub inv_sqrt: Matrix2<f64>,
}

impl QNoiseCov {
    /// `R_q^{1/2}·1₂`, the per-row standard-deviation offset used by the margin constraint.
    pub fn sqrt_times_ones(&self) -> Vector2<f64> {
        self.sqrt * Vector2::new(1.0, 1.0)
    }
}

pub fn qnoise_cov(theta: f64, p_p: f64, alpha: f64, rho: f64, beta: f64) -> Result<QNoiseCov> {
    let half_pi = PI / 2.0;
    if !(theta > 0.0 && theta < half_pi) || (theta - half_pi).abs() < 1e-12 {
        return Err(Error::UnsupportedConstellation { theta });
    }
    let scale = 0.5 * p_p * alpha * rho * beta;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain {
            what: "quantization-noise scale (P_p/2)αρβ",
            value: scale,
        });
    }
    let c2 = (2.0 * theta).cos();
    let matrix = Matrix2::new(1.0, -c2, -c2, 1.0) * scale;

    let eig = SymmetricEigen::new(matrix);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt = eig.eigenvectors * Matrix2::from_diagonal(&roots) * eig.eigenvectors.transpose();

    let (s, c) = theta.sin_cos();
    let k = 1.0 / ((2.0 * theta).sin() * (alpha * rho * beta * p_p).sqrt());
    let inv_sqrt = Matrix2::new(s + c, c - s, c - s, s + c) * k;

    Ok(QNoiseCov {
        theta,
        scale,
        matrix,
        sqrt,
        inv_sqrt,
    })
}

/// Probability of more than `q` bit errors in a block of `c_bits` bits with
/// independent errors at rate `p_b`.
pub fn block_error_prob(p_b: f64, c_bits: u64, q: u64) -> f64 {
    if p_b <= 0.0 || q >= c_bits {
        return 0.0;
    }
    if p_b >= 1.0 {
        return 1.0;
    }
    if q == 0 {
        return -(c_bits as f64 * (-p_b).ln_1p()).exp_m1();
    }
    let n = c_bits as f64;
    let lp = p_b.ln();
    let lq = (-p_b).ln_1p();
    // walk ln C(n, i) by recurrence; sum whichever tail is smaller to avoid cancellation
    let step = |ln_c: f64, i: u64| ln_c + ((c_bits - i) as f64).ln() - ((i + 1) as f64).ln();
    if (q as f64) < n * p_b {
        let mut ln_c = 0.0;
        let mut lower = 0.0;
        for i in 0..=q {
            lower += (ln_c + i as f64 * lp + (n - i as f64) * lq).exp();
            ln_c = step(ln_c, i);
        }
        (1.0 - lower).clamp(0.0, 1.0)
    } else {
        let mut ln_c = ln_binomial(c_bits, q + 1);
        let mut upper = 0.0;
        for i in q + 1..=c_bits {
            let t = (ln_c + i as f64 * lp + (n - i as f64) * lq).exp();
            upper += t;
            if t < 1e-18 * upper {
                break;
            }
            if i < c_bits {
                ln_c = step(ln_c, i);
            }
        }
        upper.clamp(0.0, 1.0)
    }
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// `τ = (1 − P_B)·c·T·N`.
pub fn throughput(p_block: f64, bits_per_symbol: u32, block_len: usize, receivers: usize) -> f64 {
    (1.0 - p_block) * bits_per_symbol as f64 * block_len as f64 * receivers as f64
}

/// Throughput divided by the transmit energy summed over the slots of a block.
pub fn energy_efficiency(tau: f64, slot_powers: &[f64]) -> Result<f64> {
    let energy: f64 = slot_powers.iter().sum();
    if tau == 0.0 {
        return Ok(0.0);
    }
    if !(energy > 0.0) {
        return Err(Error::InfiniteEnergyEfficiency);
    }
    Ok(tau / energy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMetrics {
    pub p_bit: f64,
    pub bits_per_block: u64,
    pub correctable: u64,
    pub p_block: f64,
    pub tau: f64,
    pub ee: f64,
}

impl BlockMetrics {
    /// Evaluate the block model for `receivers` users sharing one BER.
    pub fn evaluate(
        p_bit: f64,
        bits_per_symbol: u32,
        block_len: usize,
        receivers: usize,
        correctable: u64,
        slot_powers: &[f64],
    ) -> Result<Self> {
        let bits = bits_per_symbol as u64 * block_len as u64;
        let p_block = block_error_prob(p_bit, bits, correctable);
        let tau = throughput(p_block, bits_per_symbol, block_len, receivers);
        let ee = energy_efficiency(tau, slot_powers)?;
        Ok(BlockMetrics {
            p_bit,
            bits_per_block: bits,
            correctable,
            p_block,
            tau,
            ee,
        })
    }
}
