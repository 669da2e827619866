//! Constraint builders for the power-minimizing SLP designs and the CR-PALP
//! baseline.
//!
//! Every design yields the same QP shape, `minimize ‖x̌_c‖² s.t. G·x̌_c ≥ g`,
//! with two rows per user: primary users first, in order, then cognitive
//! users. For user `k` of either population the rows are
//!
//! ```text
//! a·℧(s_k*·h_cbs,k)·x̌_c ≥ margin_k − ℧(s_k*·h_pbs,k)·x̌_p
//! ```
//!
//! where `h_cbs` is the (exact) CBS link, `h_pbs` the shared PBS link, `a` a
//! per-population gain and `margin_k` a per-row requirement:
//!
//! | design        | `a` | `margin_k`                        | PBS link used  |
//! |---------------|-----|-----------------------------------|----------------|
//! | perfect       | 1   | `δ⁰`                              | exact          |
//! | norm-bounded  | 1   | `δ⁰ + √2·ε·‖x̌_p‖`                 | estimate `ĥ`   |
//! | quantized     | α   | `η·(R_q^{1/2}·1₂) + α·δ⁰`         | quantized `h^Q`|

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{gram_inverse, rotated_channel, row_vec, ChannelSet};
use crate::csi::AqnmParams;
use crate::error::{Error, Result};
use crate::geometry::{complexify, mho, realify};
use crate::metrics::{eta, qnoise_cov};
use crate::qp::{solve_min_norm, QpOptions, QpSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    Perfect,
    NormBounded,
    Aqnm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Population {
    Primary,
    Cognitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowUser {
    pub population: Population,
    pub index: usize,
}

/// The per-slot symbols and PBS transmit vector the constraints depend on.
#[derive(Debug, Clone, Copy)]
pub struct SlotInput<'a> {
    pub s_p: &'a DVector<Complex64>,
    pub s_c: &'a DVector<Complex64>,
    pub x_p: &'a DVector<Complex64>,
    /// Sector half-angle `π/D`.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecodeProblem {
    pub g: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub design: Design,
    /// Owner of each constraint row.
    pub rows: Vec<RowUser>,
}

impl PrecodeProblem {
    pub fn solve(&self, opts: &QpOptions) -> Result<QpSolution> {
        solve_min_norm(&self.g, &self.rhs, opts)
    }

    pub fn n_vars(&self) -> usize {
        self.g.ncols()
    }
}

/// Complex CBS transmit vector from its real stacking.
pub fn transmit_vector(x_real: &DVector<f64>) -> DVector<Complex64> {
    DVector::from_vec(complexify(x_real.as_slice()))
}

struct PopulationSpec<'a> {
    cbs: &'a DMatrix<Complex64>,
    pbs: &'a DMatrix<Complex64>,
    symbols: &'a DVector<Complex64>,
    gain: f64,
    margin: [f64; 2],
    population: Population,
}

fn assemble(
    design: Design,
    slot: &SlotInput<'_>,
    pops: [PopulationSpec<'_>; 2],
) -> Result<PrecodeProblem> {
    let n_rows: usize = pops.iter().map(|p| 2 * p.cbs.nrows()).sum();
    let m_c = pops[0].cbs.ncols();
    if pops[1].cbs.ncols() != m_c {
        return Err(Error::Dimension(
            "CBS links disagree on antenna count".into(),
        ));
    }
    let x_p_real = realify(slot.x_p.as_slice());
    let mut g = DMatrix::zeros(n_rows, 2 * m_c);
    let mut rhs = DVector::zeros(n_rows);
    let mut rows = Vec::with_capacity(n_rows);
    let mut r = 0;
    for pop in &pops {
        if pop.symbols.len() != pop.cbs.nrows() || pop.pbs.nrows() != pop.cbs.nrows() {
            return Err(Error::Dimension(
                "symbol count does not match user count".into(),
            ));
        }
        if pop.pbs.ncols() != slot.x_p.len() {
            return Err(Error::Dimension("PBS link width does not match x_p".into()));
        }
        for k in 0..pop.cbs.nrows() {
            let s = pop.symbols[k];
            let cbs_block = mho(&rotated_channel(&row_vec(pop.cbs, k), s), slot.theta);
            let pbs_block = mho(&rotated_channel(&row_vec(pop.pbs, k), s), slot.theta);
            let offset = pbs_block.apply(&x_p_real);
            for i in 0..2 {
                for c in 0..2 * m_c {
                    g[(r + i, c)] = pop.gain * cbs_block.rows[(i, c)];
                }
                rhs[r + i] = pop.margin[i] - offset[i];
                rows.push(RowUser {
                    population: pop.population,
                    index: k,
                });
            }
            r += 2;
        }
    }
    Ok(PrecodeProblem {
        g,
        rhs,
        design,
        rows,
    })
}

/// Power-minimizing SLP with exact CSI.
pub fn build_perfect(
    ch: &ChannelSet,
    slot: &SlotInput<'_>,
    delta_p0: f64,
    delta_c0: f64,
) -> Result<PrecodeProblem> {
    assemble(
        Design::Perfect,
        slot,
        [
            PopulationSpec {
                cbs: &ch.h_cp,
                pbs: &ch.h_pp,
                symbols: slot.s_p,
                gain: 1.0,
                margin: [delta_p0; 2],
                population: Population::Primary,
            },
            PopulationSpec {
                cbs: &ch.h_cc,
                pbs: &ch.h_pc,
                symbols: slot.s_c,
                gain: 1.0,
                margin: [delta_c0; 2],
                population: Population::Cognitive,
            },
        ],
    )
}

/// Worst-case robust SLP for PBS-link errors with `‖e_p‖ ≤ ε_p`, `‖e_c‖ ≤ ε_c`.
/// `ch` carries the shared estimates `ĥ_pp`, `ĥ_pc`.
pub fn build_norm_bounded(
    ch: &ChannelSet,
    slot: &SlotInput<'_>,
    delta_p0: f64,
    delta_c0: f64,
    eps_p: f64,
    eps_c: f64,
) -> Result<PrecodeProblem> {
    if !(eps_p >= 0.0 && eps_c >= 0.0) {
        return Err(Error::Domain {
            what: "error bound",
            value: eps_p.min(eps_c),
        });
    }
    let xp_norm = slot.x_p.norm();
    let mp = delta_p0 + SQRT_2 * eps_p * xp_norm;
    let mc = delta_c0 + SQRT_2 * eps_c * xp_norm;
    assemble(
        Design::NormBounded,
        slot,
        [
            PopulationSpec {
                cbs: &ch.h_cp,
                pbs: &ch.h_pp,
                symbols: slot.s_p,
                gain: 1.0,
                margin: [mp; 2],
                population: Population::Primary,
            },
            PopulationSpec {
                cbs: &ch.h_cc,
                pbs: &ch.h_pc,
                symbols: slot.s_c,
                gain: 1.0,
                margin: [mc; 2],
                population: Population::Cognitive,
            },
        ],
    )
}

/// Parameters of the chance-constrained design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AqnmDesign {
    pub primary: AqnmParams,
    pub cognitive: AqnmParams,
    /// Probability threshold for the primary users, in `(0.5, 1)`.
    pub v1: f64,
    /// Probability threshold for the cognitive users, in `(0.5, 1)`.
    pub v2: f64,
    /// PBS power entering the noise covariance.
    pub p_p: f64,
}

/// Per-row margin `η·R_q^{1/2}·1₂ + α·δ⁰` for one population.
pub fn aqnm_margin(
    params: &AqnmParams,
    v: f64,
    delta0: f64,
    theta: f64,
    p_p: f64,
) -> Result<[f64; 2]> {
    if !(v > 0.5 && v <= 1.0) {
        return Err(Error::Domain {
            what: "probability threshold v (must lie in (0.5, 1])",
            value: v,
        });
    }
    let eta = eta(v)?;
    let cov = qnoise_cov(theta, p_p, params.alpha, params.rho, params.beta)?;
    let sd = cov.sqrt_times_ones();
    Ok([
        eta * sd[0] + params.alpha * delta0,
        eta * sd[1] + params.alpha * delta0,
    ])
}

/// Chance-constrained robust SLP under the additive quantization-noise model.
/// `ch` carries the quantized PBS links `h^Q_pp`, `h^Q_pc`.
pub fn build_aqnm(
    ch: &ChannelSet,
    slot: &SlotInput<'_>,
    delta_p0: f64,
    delta_c0: f64,
    design: &AqnmDesign,
) -> Result<PrecodeProblem> {
    let mp = aqnm_margin(&design.primary, design.v1, delta_p0, slot.theta, design.p_p)?;
    let mc = aqnm_margin(
        &design.cognitive,
        design.v2,
        delta_c0,
        slot.theta,
        design.p_p,
    )?;
    assemble(
        Design::Aqnm,
        slot,
        [
            PopulationSpec {
                cbs: &ch.h_cp,
                pbs: &ch.h_pp,
                symbols: slot.s_p,
                gain: design.primary.alpha,
                margin: mp,
                population: Population::Primary,
            },
            PopulationSpec {
                cbs: &ch.h_cc,
                pbs: &ch.h_pc,
                symbols: slot.s_c,
                gain: design.cognitive.alpha,
                margin: mc,
                population: Population::Cognitive,
            },
        ],
    )
}

/// CR-PALP internals for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CrPalpState {
    /// `M_c × (N_p + N_c)`.
    pub w_c: DMatrix<Complex64>,
    pub f_p: f64,
    pub f_c: f64,
    /// `diag(s)·|HHᴴ|·diag(s)ᴴ` over all `N_p + N_c` users.
    pub q_phi: DMatrix<Complex64>,
    /// Selection diagonal of the primary users.
    pub a: DVector<f64>,
    /// Selection diagonal of the cognitive users.
    pub b: DVector<f64>,
}

impl CrPalpState {
    /// Cognitive-cognitive block of `Q^φ`.
    pub fn q_phi_cognitive(&self) -> DMatrix<Complex64> {
        let n_p = self.a.iter().filter(|v| **v == 1.0).count();
        let n = self.a.len();
        self.q_phi.view((n_p, n_p), (n - n_p, n - n_p)).into_owned()
    }
}

/// CR-PALP: the CBS precodes `s = [s_p; s_c]` so that, together with the PBS
/// signal, each PU sees `f_p·s_p` and each CU sees its phase-aligned
/// correlation term plus the residual `(f_p − f_c)·H_pc·W_p·s_p`.
///
/// `w_p` is the PBS precoder before power scaling (ZF for exact PU delivery).
/// Returns `x_c = f_c·W_c·s` with `‖x_c‖² = P_c`.
pub fn crpalp_precode(
    ch: &ChannelSet,
    w_p: &DMatrix<Complex64>,
    s_p: &DVector<Complex64>,
    s_c: &DVector<Complex64>,
    p_p: f64,
    p_c: f64,
) -> Result<(DVector<Complex64>, CrPalpState)> {
    let n_p = ch.h_cp.nrows();
    let n_c = ch.h_cc.nrows();
    let n = n_p + n_c;
    let m_c = ch.h_cp.ncols();
    if n > m_c {
        return Err(Error::SingularChannel("CR-PALP needs N_p + N_c ≤ M_c"));
    }
    let mut h = DMatrix::zeros(n, m_c);
    h.view_mut((0, 0), (n_p, m_c)).copy_from(&ch.h_cp);
    h.view_mut((n_p, 0), (n_c, m_c)).copy_from(&ch.h_cc);
    let gram_inv = gram_inverse(&h)?;
    let gram = &h * h.adjoint();

    let mut s = DVector::zeros(n);
    s.rows_mut(0, n_p).copy_from(s_p);
    s.rows_mut(n_p, n_c).copy_from(s_c);

    let q_phi = DMatrix::from_fn(n, n, |i, j| s[i] * gram[(i, j)].norm() * s[j].conj());

    // V_p is the PBS contribution at every user, padded to act on the full s
    let mut v_p = DMatrix::zeros(n, n);
    v_p.view_mut((0, 0), (n_p, n_p))
        .copy_from(&(&ch.h_pp * w_p));
    v_p.view_mut((n_p, 0), (n_c, n_p))
        .copy_from(&(&ch.h_pc * w_p));

    let a = DVector::from_fn(n, |i, _| if i < n_p { 1.0 } else { 0.0 });
    let b = a.map(|v| 1.0 - v);
    let mut target = DMatrix::zeros(n, n);
    for i in 0..n_p {
        target[(i, i)] = Complex64::new(1.0, 0.0);
    }
    target
        .view_mut((n_p, n_p), (n_c, n_c))
        .copy_from(&q_phi.view((n_p, n_p), (n_c, n_c)));

    let w_c = h.adjoint() * gram_inv * (target - v_p);

    let wp_s = w_p * s_p;
    let wp_energy = wp_s.norm_squared();
    let wc_s = &w_c * &s;
    let wc_energy = wc_s.norm_squared();
    if !(wp_energy > 0.0) {
        return Err(Error::SingularChannel("PBS precoder output is zero"));
    }
    if !(wc_energy > 0.0) {
        return Err(Error::SingularChannel("CR-PALP precoder output is zero"));
    }
    let f_p = (p_p / wp_energy).sqrt();
    let f_c = (p_c / wc_energy).sqrt();
    let x_c = wc_s * Complex64::new(f_c, 0.0);
    Ok((
        x_c,
        CrPalpState {
            w_c,
            f_p,
            f_c,
            q_phi,
            a,
            b,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{pbs_transmit, sample_channels, zf_precoder, PbsMode, SystemDims};
    use crate::geometry::{psk_points, safety_margin, RotatedSymbol};
    use crate::qp::QpOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        ch: ChannelSet,
        s_p: DVector<Complex64>,
        s_c: DVector<Complex64>,
        x_p: DVector<Complex64>,
        w_p: DMatrix<Complex64>,
        theta: f64,
    }

    fn fixture(seed: u64) -> Fixture {
        let dims = SystemDims::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = sample_channels(&dims, &mut rng);
        let psk = psk_points(4).unwrap();
        let s_p = DVector::from_fn(dims.n_p, |_, _| psk.point(rng.random_range(0..4)));
        let s_c = DVector::from_fn(dims.n_c, |_, _| psk.point(rng.random_range(0..4)));
        let w_p = zf_precoder(&ch.h_pp).unwrap();
        let x_p = pbs_transmit(
            &ch.h_pp,
            Some(&w_p),
            &s_p,
            dims.p_p,
            PbsMode::ZeroForcing,
            &mut rng,
        )
        .unwrap()
        .x_p;
        Fixture {
            ch,
            s_p,
            s_c,
            x_p,
            w_p,
            theta: psk.theta(),
        }
    }

    impl Fixture {
        fn slot(&self) -> SlotInput<'_> {
            SlotInput {
                s_p: &self.s_p,
                s_c: &self.s_c,
                x_p: &self.x_p,
                theta: self.theta,
            }
        }
    }

    #[test]
    fn perfect_solution_meets_margins() {
        for seed in 0..20 {
            let fx = fixture(seed);
            let p = build_perfect(&fx.ch, &fx.slot(), 1.9, 1.2).unwrap();
            assert_eq!(p.g.nrows(), 16);
            assert_eq!(p.rows[0].population, Population::Primary);
            assert_eq!(p.rows[8].population, Population::Cognitive);
            let sol = p.solve(&QpOptions::default()).unwrap();
            assert!(sol.is_optimal());
            let x_c = transmit_vector(&sol.x);
            let r_p = &fx.ch.h_pp * &fx.x_p + &fx.ch.h_cp * &x_c;
            let r_c = &fx.ch.h_cc * &x_c + &fx.ch.h_pc * &fx.x_p;
            for k in 0..4 {
                let sm = safety_margin(RotatedSymbol::new(r_p[k], fx.s_p[k]), fx.theta);
                assert!(sm >= 1.9 - 1e-6, "PU {k}: {sm}");
                let sm = safety_margin(RotatedSymbol::new(r_c[k], fx.s_c[k]), fx.theta);
                assert!(sm >= 1.2 - 1e-6, "CU {k}: {sm}");
            }
        }
    }

    #[test]
    fn zero_margins_and_pbs_already_inside_gives_zero() {
        // single PU/CU with the PBS signal landing exactly on each symbol
        let s = DVector::from_element(1, Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4));
        let x_p = DVector::from_element(1, Complex64::new(1.0, 0.0));
        let ch = ChannelSet {
            h_pp: DMatrix::from_element(1, 1, s[0] * 2.0),
            h_cp: DMatrix::from_row_slice(
                1,
                2,
                &[Complex64::new(0.4, 0.1), Complex64::new(-0.3, 0.7)],
            ),
            h_pc: DMatrix::from_element(1, 1, s[0] * 0.5),
            h_cc: DMatrix::from_row_slice(
                1,
                2,
                &[Complex64::new(1.1, -0.2), Complex64::new(0.2, 0.3)],
            ),
        };
        let slot = SlotInput {
            s_p: &s,
            s_c: &s,
            x_p: &x_p,
            theta: std::f64::consts::FRAC_PI_4,
        };
        let sol = build_perfect(&ch, &slot, 0.0, 0.0)
            .unwrap()
            .solve(&QpOptions::default())
            .unwrap();
        assert!(sol.is_optimal());
        assert_eq!(sol.x.norm(), 0.0);
    }

    #[test]
    fn norm_bounded_reduces_to_perfect_at_zero() {
        let fx = fixture(3);
        let a = build_perfect(&fx.ch, &fx.slot(), 1.5, 1.5).unwrap();
        let b = build_norm_bounded(&fx.ch, &fx.slot(), 1.5, 1.5, 0.0, 0.0).unwrap();
        assert_eq!(a.g, b.g);
        assert_eq!(a.rhs, b.rhs);
    }

    #[test]
    fn norm_bounded_inflation_is_closed_form() {
        let fx = fixture(4);
        let b0 = build_norm_bounded(&fx.ch, &fx.slot(), 1.5, 1.5, 0.0, 0.0).unwrap();
        let b1 = build_norm_bounded(&fx.ch, &fx.slot(), 1.5, 1.5, 0.3, 0.3).unwrap();
        let want = SQRT_2 * 0.3 * fx.x_p.norm();
        for i in 0..b0.rhs.len() {
            assert!((b1.rhs[i] - b0.rhs[i] - want).abs() < 1e-12);
        }
        assert_eq!(b0.g, b1.g);
    }

    #[test]
    fn aqnm_g_is_alpha_scaled() {
        let fx = fixture(5);
        let p = AqnmParams::new(0.1175, 1.0).unwrap();
        let c = AqnmParams::new(0.03454, 1.0).unwrap();
        let design = AqnmDesign {
            primary: p,
            cognitive: c,
            v1: 0.9,
            v2: 0.8,
            p_p: 10.0,
        };
        let base = build_perfect(&fx.ch, &fx.slot(), 1.5, 1.5).unwrap();
        let q = build_aqnm(&fx.ch, &fx.slot(), 1.5, 1.5, &design).unwrap();
        for r in 0..16 {
            let a = if r < 8 { p.alpha } else { c.alpha };
            for col in 0..16 {
                assert!((q.g[(r, col)] - a * base.g[(r, col)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn aqnm_vanishing_noise_matches_perfect() {
        let fx = fixture(6);
        let tiny = AqnmParams::new(1e-8, 1.0).unwrap();
        let design = AqnmDesign {
            primary: tiny,
            cognitive: tiny,
            v1: 0.9,
            v2: 0.9,
            p_p: 10.0,
        };
        let base = build_perfect(&fx.ch, &fx.slot(), 1.5, 1.2).unwrap();
        let q = build_aqnm(&fx.ch, &fx.slot(), 1.5, 1.2, &design).unwrap();
        assert!((q.rhs - base.rhs).amax() < 1e-3);
    }

    #[test]
    fn aqnm_qpsk_margin_closed_form() {
        let p = AqnmParams::new(0.1175, 1.0).unwrap();
        let m = aqnm_margin(&p, 0.9, 1.5, std::f64::consts::FRAC_PI_4, 10.0).unwrap();
        let want = eta(0.9).unwrap() * (5.0 * p.alpha * p.rho * p.beta).sqrt() + p.alpha * 1.5;
        assert!((m[0] - want).abs() < 1e-12 && (m[1] - want).abs() < 1e-12);
    }

    #[test]
    fn aqnm_rejects_bpsk_and_bad_v() {
        let p = AqnmParams::new(0.1175, 1.0).unwrap();
        assert!(matches!(
            aqnm_margin(&p, 0.9, 1.5, std::f64::consts::FRAC_PI_2, 10.0),
            Err(Error::UnsupportedConstellation { .. })
        ));
        assert!(aqnm_margin(&p, 0.5, 1.5, 0.5, 10.0).is_err());
        assert!(aqnm_margin(&p, 1.0, 1.5, 0.5, 10.0).is_err());
    }

    #[test]
    fn crpalp_structure() {
        for seed in 0..10 {
            let fx = fixture(seed);
            let p_c = 3.7;
            let (x_c, st) = crpalp_precode(&fx.ch, &fx.w_p, &fx.s_p, &fx.s_c, 10.0, p_c).unwrap();
            assert!((x_c.norm_squared() / p_c - 1.0).abs() < 1e-9);
            assert_eq!(&st.a + &st.b, DVector::from_element(8, 1.0));
            let x_p = &fx.w_p * &fx.s_p * Complex64::new(st.f_p, 0.0);
            let y_p = &fx.ch.h_pp * &x_p + &fx.ch.h_cp * &x_c;
            for k in 0..4 {
                assert!((y_p[k] - fx.s_p[k] * st.f_p).norm() < 1e-9);
            }
            let y_c = &fx.ch.h_cc * &x_c + &fx.ch.h_pc * &x_p;
            let want = &fx.ch.h_pc * &fx.w_p * &fx.s_p * Complex64::new(st.f_p - st.f_c, 0.0)
                + st.q_phi_cognitive() * &fx.s_c * Complex64::new(st.f_c, 0.0);
            assert!((y_c - want).camax() < 1e-6);
        }
    }

    #[test]
    fn crpalp_rejects_too_many_users() {
        let dims = SystemDims {
            m_c: 6,
            ..SystemDims::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = sample_channels(&dims, &mut rng);
        let w_p = zf_precoder(&ch.h_pp).unwrap();
        let s = DVector::from_element(4, Complex64::new(1.0, 0.0));
        assert!(matches!(
            crpalp_precode(&ch, &w_p, &s, &s, 10.0, 1.0),
            Err(Error::SingularChannel(_))
        ));
    }
}
