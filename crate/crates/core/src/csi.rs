//! Imperfect PBS-shared channel state.
//!
//! Two impairment models: element-wise Lloyd-Max scalar quantization (with the
//! additive-quantization-noise statistics used by the robust design) and an
//! additive error confined to a Euclidean ball.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{erf_inv, normal_cdf, normal_pdf, normal_sf};

pub const MIN_BITS: u32 = 1;
pub const MAX_BITS: u32 = 5;

/// Optimal scalar quantizer for a unit-variance Gaussian source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LloydMaxCodebook {
    pub bits: u32,
    pub levels: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Mean-square distortion for the unit-variance source (the distortion factor ρ).
    pub mse: f64,
}

impl LloydMaxCodebook {
    /// Nearest reconstruction level for a unit-variance sample.
    pub fn quantize(&self, x: f64) -> f64 {
        let cell = self.thresholds.partition_point(|&t| t < x);
        self.levels[cell]
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.mse
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cb: LloydMaxCodebook = serde_json::from_str(text)?;
        let n = 1usize << cb.bits;
        if cb.levels.len() != n || cb.thresholds.len() + 1 != n {
            return Err(Error::Dimension(format!(
                "codebook for {} bits needs {} levels and {} thresholds",
                cb.bits,
                n,
                n - 1
            )));
        }
        if cb.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "codebook thresholds must be strictly increasing".into(),
            ));
        }
        Ok(cb)
    }
}

/// Probability, first and second partial moments of N(0,1) on `[a, b]`.
fn cell_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let p = if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    };
    let (pa, pb) = (pdf_or_zero(a), pdf_or_zero(b));
    let m1 = pa - pb;
    let m2 = p + edge(a, pa) - edge(b, pb);
    (p, m1, m2)
}

fn pdf_or_zero(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        normal_pdf(x)
    }
}

fn edge(x: f64, pdf: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * pdf
    }
}

/// Lloyd iteration state for the standard Gaussian. Cell moments are evaluated
/// in closed form, so every run is deterministic.
#[derive(Debug, Clone)]
pub struct LloydMax {
    bits: u32,
    levels: Vec<f64>,
}

impl LloydMax {
    /// Starts from the levels at the cell-centre quantiles of N(0,1).
    pub fn new(bits: u32) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::Domain {
                what: "quantizer bits",
                value: bits as f64,
            });
        }
        let n = 1usize << bits;
        let levels = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                std::f64::consts::SQRT_2 * erf_inv(2.0 * u - 1.0).expect("u in (0,1)")
            })
            .collect();
        Ok(LloydMax { bits, levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.levels
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    fn edges(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.levels.len() + 1);
        e.push(f64::NEG_INFINITY);
        e.extend(self.thresholds());
        e.push(f64::INFINITY);
        e
    }

    /// Distortion of the current levels with midpoint thresholds.
    pub fn mse(&self) -> f64 {
        let edges = self.edges();
        self.levels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (p, m1, m2) = cell_moments(edges[i], edges[i + 1]);
                m2 - 2.0 * c * m1 + c * c * p
            })
            .sum()
    }

    /// One centroid update; returns the largest level movement.
    pub fn step(&mut self) -> f64 {
        let edges = self.edges();
        let mut moved: f64 = 0.0;
        for (i, level) in self.levels.iter_mut().enumerate() {
            let (p, m1, _) = cell_moments(edges[i], edges[i + 1]);
            let c = m1 / p;
            moved = moved.max((c - *level).abs());
            *level = c;
        }
        moved
    }

    pub fn into_codebook(self) -> LloydMaxCodebook {
        let mse = self.mse();
        let thresholds = self.thresholds();
        LloydMaxCodebook {
            bits: self.bits,
            levels: self.levels,
            thresholds,
            mse,
        }
    }
}

pub fn lloyd_max_train(bits: u32, max_iters: usize, tol: f64) -> Result<LloydMaxCodebook> {
    let mut lm = LloydMax::new(bits)?;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        residual = lm.step();
        if residual < tol {
            return Ok(lm.into_codebook());
        }
    }
    Err(Error::NonConvergence {
        bits,
        iterations: max_iters,
        residual,
        levels: lm.levels,
    })
}

/// Trains with the default tolerance (1e−10) and iteration cap.
pub fn lloyd_max_default(bits: u32) -> Result<LloydMaxCodebook> {
    lloyd_max_train(bits, 200_000, 1e-10)
}

/// Quantizes real and imaginary parts separately after normalizing them to
/// unit variance with the ensemble scale `√(β/2)`.
pub fn quantize_channel(h: &[Complex64], codebook: &LloydMaxCodebook, beta: f64) -> Vec<Complex64> {
    let s = (beta / 2.0).sqrt();
    h.iter()
        .map(|v| {
            Complex64::new(
                s * codebook.quantize(v.re / s),
                s * codebook.quantize(v.im / s),
            )
        })
        .collect()
}

pub fn quantize_matrix(
    h: &DMatrix<Complex64>,
    codebook: &LloydMaxCodebook,
    beta: f64,
) -> DMatrix<Complex64> {
    let s = (beta / 2.0).sqrt();
    h.map(|v| {
        Complex64::new(
            s * codebook.quantize(v.re / s),
            s * codebook.quantize(v.im / s),
        )
    })
}

/// Additive-quantization-noise parameters for one link class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AqnmParams {
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl AqnmParams {
    pub fn new(rho: f64, beta: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Domain {
                what: "distortion factor rho",
                value: rho,
            });
        }
        if !(beta > 0.0) {
            return Err(Error::Domain {
                what: "channel variance beta",
                value: beta,
            });
        }
        Ok(AqnmParams {
            rho,
            alpha: 1.0 - rho,
            beta,
        })
    }

    pub fn from_codebook(cb: &LloydMaxCodebook, beta: f64) -> Result<Self> {
        AqnmParams::new(cb.mse, beta)
    }

    /// Per-entry variance `αρβ` of the quantization noise.
    pub fn noise_variance(&self) -> f64 {
        self.alpha * self.rho * self.beta
    }
}

/// Quantization settings for the PBS → PU and PBS → CU links.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCsi {
    pub b_p: u32,
    pub b_c: u32,
    pub primary: AqnmParams,
    pub cognitive: AqnmParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorSampling {
    /// `‖e‖ = ε` exactly.
    Sphere,
    /// Uniform in `‖e‖ ≤ ε`.
    Ball,
}

impl std::str::FromStr for ErrorSampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ErrorSampling::Sphere),
            "ball" => Ok(ErrorSampling::Ball),
            other => Err(Error::Config(format!("unknown error sampling `{other}`"))),
        }
    }
}

impl std::fmt::Display for ErrorSampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorSampling::Sphere => "sphere",
            ErrorSampling::Ball => "ball",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedError {
    pub epsilon_p: f64,
    pub epsilon_c: f64,
    pub sampling: ErrorSampling,
}

impl BoundedError {
    pub fn new(epsilon_p: f64, epsilon_c: f64, sampling: ErrorSampling) -> Result<Self> {
        for (what, v) in [("epsilon_p", epsilon_p), ("epsilon_c", epsilon_c)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain { what, value: v });
            }
        }
        Ok(BoundedError {
            epsilon_p,
            epsilon_c,
            sampling,
        })
    }
}

/// Isotropic complex error of length `m` on the sphere or in the ball of radius `epsilon`.
pub fn sample_bounded_error<R: Rng + ?Sized>(
    m: usize,
    epsilon: f64,
    sampling: ErrorSampling,
    rng: &mut R,
) -> Vec<Complex64> {
    if epsilon == 0.0 || m == 0 {
        return vec![Complex64::new(0.0, 0.0); m];
    }
    let mut dir: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = dir.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let radius = match sampling {
        ErrorSampling::Sphere => epsilon,
        // radial CDF of the uniform ball in 2m real dimensions is r^{2m}
        ErrorSampling::Ball => epsilon * rng.random::<f64>().powf(1.0 / (2 * m) as f64),
    };
    let k = radius / norm;
    for v in dir.iter_mut() {
        *v *= k;
    }
    dir
}

/// Adds one bounded error row per user to a channel matrix.
pub fn perturb_rows<R: Rng + ?Sized>(
    h: &DMatrix<Complex64>,
    epsilon: f64,
    sampling: ErrorSampling,
    rng: &mut R,
) -> DMatrix<Complex64> {
    let mut out = h.clone();
    for k in 0..h.nrows() {
        let e = sample_bounded_error(h.ncols(), epsilon, sampling, rng);
        for (c, ev) in e.into_iter().enumerate() {
            out[(k, c)] += ev;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::channel::complex_gaussian;

    const TABLE: [f64; 5] = [0.3634, 0.1175, 0.03454, 0.009497, 0.002499];

    #[test]
    fn one_bit_closed_form() {
        let cb = lloyd_max_default(1).unwrap();
        let l = (2.0 / std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(cb.levels[0], -l, epsilon = 1e-9);
        assert_abs_diff_eq!(cb.levels[1], l, epsilon = 1e-9);
        assert_abs_diff_eq!(cb.mse, 1.0 - 2.0 / std::f64::consts::PI, epsilon = 1e-9);
        assert!((cb.mse / TABLE[0] - 1.0).abs() < 0.01);
    }

    #[test]
    fn three_bit_distortion() {
        let cb = lloyd_max_default(3).unwrap();
        assert!((cb.mse / TABLE[2] - 1.0).abs() < 0.01, "{}", cb.mse);
    }

    #[test]
    fn fixed_point_conditions() {
        for bits in 1..=5 {
            let cb = lloyd_max_default(bits).unwrap();
            assert_eq!(cb.levels.len(), 1 << bits);
            assert!(cb.thresholds.windows(2).all(|w| w[0] < w[1]));
            for (i, t) in cb.thresholds.iter().enumerate() {
                assert_abs_diff_eq!(*t, 0.5 * (cb.levels[i] + cb.levels[i + 1]), epsilon = 1e-12);
            }
            let mut edges = vec![f64::NEG_INFINITY];
            edges.extend(&cb.thresholds);
            edges.push(f64::INFINITY);
            for (i, l) in cb.levels.iter().enumerate() {
                let (p, m1, _) = cell_moments(edges[i], edges[i + 1]);
                assert_abs_diff_eq!(*l, m1 / p, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn distortion_decreases_every_iteration() {
        for bits in [2, 4] {
            let mut lm = LloydMax::new(bits).unwrap();
            // start from a deliberately poor uniform grid
            let n = lm.levels.len();
            lm.levels = (0..n)
                .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
                .collect();
            let mut prev = lm.mse();
            for _ in 0..50 {
                let moved = lm.step();
                let now = lm.mse();
                // the decrease is second order in the movement, so tiny
                // steps only have to stay within rounding of the previous value
                if moved > 1e-5 {
                    assert!(now < prev, "bits={bits}: {now} !< {prev}");
                } else {
                    assert!(now <= prev + 1e-15, "bits={bits}: {now} > {prev}");
                }
                prev = now;
            }
        }
    }

    #[test]
    fn rejects_out_of_range_bits() {
        assert!(LloydMax::new(0).is_err());
        assert!(LloydMax::new(6).is_err());
    }

    #[test]
    fn non_convergence_reports_state() {
        match lloyd_max_train(4, 3, 1e-14) {
            Err(Error::NonConvergence {
                iterations,
                levels,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(levels.len(), 16);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    fn empirical_rho(bits: u32, vectors: usize, seed: u64) -> f64 {
        let cb = lloyd_max_default(bits).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut err, mut pow) = (0.0, 0.0);
        for _ in 0..vectors {
            let h: Vec<Complex64> = (0..8).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let q = quantize_channel(&h, &cb, 1.0);
            err += h
                .iter()
                .zip(&q)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
            pow += h.iter().map(|a| a.norm_sqr()).sum::<f64>();
        }
        err / pow
    }

    #[test]
    fn quantizer_distortion_two_bits() {
        let rho = empirical_rho(2, 10_000, 1);
        assert!((rho / TABLE[1] - 1.0).abs() < 0.05, "{rho}");
    }

    #[test]
    fn quantizer_distortion_five_bits() {
        let rho = empirical_rho(5, 10_000, 2);
        assert!((rho / TABLE[4] - 1.0).abs() < 0.10, "{rho}");
    }

    #[test]
    fn quantization_noise_uncorrelated_with_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for bits in 2..=5 {
            let cb = lloyd_max_default(bits).unwrap();
            let alpha = cb.alpha();
            let n = 80_000;
            let mut cross = Complex64::new(0.0, 0.0);
            let (mut ph, mut pn) = (0.0, 0.0);
            for _ in 0..n {
                let h = complex_gaussian(&mut rng, 1.0);
                let q = quantize_channel(&[h], &cb, 1.0)[0];
                let nq = q - alpha * h;
                cross += h.conj() * nq;
                ph += h.norm_sqr();
                pn += nq.norm_sqr();
            }
            let corr = cross.norm() / (ph * pn).sqrt();
            assert!(corr < 0.02, "bits={bits}: {corr}");
        }
    }

    #[test]
    fn quantization_noise_covariance_matches_model() {
        let bits = 2;
        let beta = 1.0;
        let cb = lloyd_max_default(bits).unwrap();
        let aq = AqnmParams::from_codebook(&cb, beta).unwrap();
        let m = 4;
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cov = DMatrix::<Complex64>::zeros(m, m);
        for _ in 0..n {
            let h: Vec<Complex64> = (0..m).map(|_| complex_gaussian(&mut rng, beta)).collect();
            let q = quantize_channel(&h, &cb, beta);
            let nq = nalgebra::DVector::from_iterator(
                m,
                h.iter().zip(&q).map(|(a, b)| b - aq.alpha * a),
            );
            cov += &nq * nq.adjoint();
        }
        cov /= Complex64::new(n as f64, 0.0);
        let target = aq.noise_variance();
        for i in 0..m {
            assert!((cov[(i, i)].re / target - 1.0).abs() < 0.05);
            for j in 0..m {
                if i != j {
                    assert!(cov[(i, j)].norm() < 0.02 * target * 3.0);
                }
            }
        }
    }

    #[test]
    fn aqnm_params() {
        let a = AqnmParams::new(0.1175, 1.0).unwrap();
        assert_eq!(a.alpha, 1.0 - 0.1175);
        assert!(AqnmParams::new(0.0, 1.0).is_err());
        assert!(AqnmParams::new(1.0, 1.0).is_err());
        assert!(AqnmParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn aqnm_inversion_is_exact_for_synthetic_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = AqnmParams::new(0.03454, 1.0).unwrap();
        for _ in 0..100 {
            let h: Vec<Complex64> = (0..8).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let nq: Vec<Complex64> = (0..8)
                .map(|_| complex_gaussian(&mut rng, a.noise_variance()))
                .collect();
            let hq: Vec<Complex64> = h.iter().zip(&nq).map(|(x, n)| a.alpha * x + n).collect();
            for i in 0..8 {
                let back = (hq[i] - nq[i]) / a.alpha;
                assert!((back - h[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_keeps_noise_covariance() {
        let cb = lloyd_max_default(3).unwrap();
        let alpha = cb.alpha();
        let s = Complex64::from_polar(1.0, 0.25 * std::f64::consts::PI);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 40_000;
        let (mut v_plain, mut v_rot, mut rr, mut ii) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let h = complex_gaussian(&mut rng, 1.0);
            let nq = quantize_channel(&[h], &cb, 1.0)[0] - alpha * h;
            let nr = s.conj() * nq;
            v_plain += nq.norm_sqr();
            v_rot += nr.norm_sqr();
            rr += nr.re * nr.re;
            ii += nr.im * nr.im;
        }
        assert_abs_diff_eq!(v_plain, v_rot, epsilon = 1e-9 * v_plain);
        assert!((rr / ii - 1.0).abs() < 0.05);
    }

    #[test]
    fn bounded_error_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(
            sample_bounded_error(6, 0.0, ErrorSampling::Sphere, &mut rng)
                .iter()
                .all(|v| v.norm() == 0.0)
        );
        for _ in 0..100 {
            let e = sample_bounded_error(8, 0.3, ErrorSampling::Sphere, &mut rng);
            let n = e.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn ball_radial_median() {
        let m = 4;
        let eps = 0.7;
        let r_half = eps / 2f64.powf(1.0 / (2 * m) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut inside = 0usize;
        for _ in 0..n {
            let e = sample_bounded_error(m, eps, ErrorSampling::Ball, &mut rng);
            let r = e.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(r <= eps + 1e-12);
            if r <= r_half {
                inside += 1;
            }
        }
        let frac = inside as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn codebook_json_round_trip() {
        let cb = lloyd_max_default(2).unwrap();
        let text = cb.to_json().unwrap();
        let back = LloydMaxCodebook::from_json(&text).unwrap();
        assert_eq!(cb, back);
        assert!(LloydMaxCodebook::from_json(
            r#"{"bits":2,"levels":[0.0],"thresholds":[],"mse":0.1}"#
        )
        .is_err());
    }
}
