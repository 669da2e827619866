//! Monte-Carlo engine.
//!
//! Each realization draws one channel set and transmits one block of `T`
//! slots over it. Realization `r` owns the ChaCha stream `r` under the master
//! seed, so results do not depend on how realizations are scheduled.

use std::sync::OnceLock;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{watts_to_dbw, CsiKind, PrecoderKind, SimConfig};
use crate::channel::{complex_gaussian, pbs_transmit, sample_channels, zf_precoder, ChannelSet};
use crate::csi::{lloyd_max_default, perturb_rows, quantize_matrix, AqnmParams, LloydMaxCodebook};
use crate::error::{Error, Result};
use crate::geometry::{psk_points, PskConstellation};
use crate::metrics::{block_error_prob, energy_efficiency, throughput};
use crate::precoders::{
    build_aqnm, build_norm_bounded, build_perfect, crpalp_precode, transmit_vector, AqnmDesign,
    SlotInput,
};
use crate::qp::{QpOptions, QpStatus};

static CODEBOOKS: [OnceLock<LloydMaxCodebook>; 5] = [const { OnceLock::new() }; 5];

/// Default-trained codebook, cached for the life of the process.
pub fn cached_codebook(bits: u32) -> Result<LloydMaxCodebook> {
    if !(1..=5).contains(&bits) {
        return Err(Error::Config(format!(
            "quantizer bits must be in 1..=5, got {bits}"
        )));
    }
    let slot = &CODEBOOKS[bits as usize - 1];
    if let Some(cb) = slot.get() {
        return Ok(cb.clone());
    }
    let cb = lloyd_max_default(bits)?;
    Ok(slot.get_or_init(|| cb).clone())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub ber_pu: f64,
    pub ber_cu: f64,
    /// PU BER with the CBS silent, over the same channels, symbols and noise.
    pub ber_pu_primary_only: f64,
    /// Block error rate from the BER through the binomial block model.
    pub bler_pu: f64,
    pub bler_cu: f64,
    /// Fraction of (user, block) pairs with more than `Q` bit errors.
    pub bler_pu_empirical: f64,
    pub bler_cu_empirical: f64,
    /// Bits the CBS delivers per block to its CUs; the numerator of `ee`.
    pub tau: f64,
    /// Bits delivered per block to the PUs.
    pub tau_pu: f64,
    /// Mean per-slot CBS power `‖x_c‖²`, watts.
    pub mean_power: f64,
    pub power_dbw: f64,
    pub ee: f64,
    pub outage_frac: f64,
    /// 95% normal-approximation half-widths.
    pub ci_ber_pu: f64,
    pub ci_ber_cu: f64,
    pub ci_ber_pu_primary_only: f64,
    /// Slots whose solve ended without a verified optimum (counted as outages).
    pub solver_failures: u64,
    pub slots: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    pu_errors: u64,
    cu_errors: u64,
    pu0_errors: u64,
    pu_bits: u64,
    cu_bits: u64,
    pu_block_errors: u64,
    cu_block_errors: u64,
    power: f64,
    outages: u64,
    solver_failures: u64,
    slots: u64,
}

struct Context {
    psk: PskConstellation,
    codebooks: Option<(LloydMaxCodebook, LloydMaxCodebook)>,
    aqnm: Option<AqnmDesign>,
    opts: QpOptions,
}

impl Context {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let psk = psk_points(cfg.psk_order)?;
        let codebooks = match cfg.csi_kind() {
            CsiKind::Quantized => Some((
                cached_codebook(cfg.b_p.unwrap_or_default())?,
                cached_codebook(cfg.b_c.unwrap_or_default())?,
            )),
            _ => None,
        };
        let aqnm = match (&codebooks, cfg.precoder) {
            (Some((cp, cc)), PrecoderKind::PmslpAqnm) => Some(AqnmDesign {
                primary: AqnmParams::from_codebook(cp, cfg.beta_p)?,
                cognitive: AqnmParams::from_codebook(cc, cfg.beta_c)?,
                v1: cfg.v1.unwrap_or_default(),
                v2: cfg.v2.unwrap_or_default(),
                p_p: cfg.dims.p_p,
            }),
            _ => None,
        };
        Ok(Context {
            psk,
            codebooks,
            aqnm,
            opts: QpOptions::default(),
        })
    }
}

/// The channel set the CBS designs against: its own links are exact, the
/// PBS-shared links carry the configured impairment.
fn shared_csi<R: Rng + ?Sized>(
    cfg: &SimConfig,
    ctx: &Context,
    truth: &ChannelSet,
    rng: &mut R,
) -> ChannelSet {
    match cfg.csi_kind() {
        CsiKind::Perfect => truth.clone(),
        CsiKind::NormBounded => {
            let h_pp = perturb_rows(
                &truth.h_pp,
                cfg.eps_p.unwrap_or(0.0),
                cfg.error_sampling,
                rng,
            );
            let h_pc = perturb_rows(
                &truth.h_pc,
                cfg.eps_c.unwrap_or(0.0),
                cfg.error_sampling,
                rng,
            );
            truth.with_pbs_links(h_pp, h_pc)
        }
        CsiKind::Quantized => {
            let (cp, cc) = ctx
                .codebooks
                .as_ref()
                .expect("codebooks loaded for quantized csi");
            let h_pp = quantize_matrix(&truth.h_pp, cp, cfg.beta_p);
            let h_pc = quantize_matrix(&truth.h_pc, cc, cfg.beta_c);
            truth.with_pbs_links(h_pp, h_pc)
        }
    }
}

fn draw_symbols<R: Rng + ?Sized>(
    psk: &PskConstellation,
    n: usize,
    rng: &mut R,
) -> (Vec<usize>, DVector<Complex64>) {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..psk.order())).collect();
    let s = DVector::from_iterator(n, idx.iter().map(|&i| psk.point(i)));
    (idx, s)
}

fn count_errors(
    psk: &PskConstellation,
    sent: &[usize],
    y: &DVector<Complex64>,
    per_user: &mut [u64],
) -> u64 {
    let mut total = 0;
    for (k, &d) in sent.iter().enumerate() {
        let e = psk.bit_errors(d, psk.detect(y[k]).index) as u64;
        per_user[k] += e;
        total += e;
    }
    total
}

fn run_realization(cfg: &SimConfig, ctx: &Context, index: usize) -> Result<Tally> {
    let dims = &cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let truth = sample_channels(dims, &mut rng);
    let shared = shared_csi(cfg, ctx, &truth, &mut rng);
    let w_p = zf_precoder(&truth.h_pp)?;
    let bps = ctx.psk.bits_per_symbol() as u64;
    let theta = ctx.psk.theta();

    let mut t = Tally::default();
    let mut pu_user_errors = vec![0u64; dims.n_p];
    let mut cu_user_errors = vec![0u64; dims.n_c];
    let mut pu0_user_errors = vec![0u64; dims.n_p];

    for _ in 0..cfg.block_len {
        let (idx_p, s_p) = draw_symbols(&ctx.psk, dims.n_p, &mut rng);
        let (idx_c, s_c) = draw_symbols(&ctx.psk, dims.n_c, &mut rng);
        let x_p = pbs_transmit(
            &truth.h_pp,
            Some(&w_p),
            &s_p,
            dims.p_p,
            cfg.pbs_mode,
            &mut rng,
        )?
        .x_p;

        let x_c = if cfg.precoder == PrecoderKind::CrPalp {
            Some(crpalp_precode(&truth, &w_p, &s_p, &s_c, dims.p_p, cfg.p_c)?.0)
        } else {
            let slot = SlotInput {
                s_p: &s_p,
                s_c: &s_c,
                x_p: &x_p,
                theta,
            };
            let problem = match cfg.precoder {
                PrecoderKind::PmslpPerfect => {
                    build_perfect(&truth, &slot, cfg.delta_p0, cfg.delta_c0)?
                }
                PrecoderKind::NonRobust => {
                    build_perfect(&shared, &slot, cfg.delta_p0, cfg.delta_c0)?
                }
                PrecoderKind::PmslpNormBounded => build_norm_bounded(
                    &shared,
                    &slot,
                    cfg.delta_p0,
                    cfg.delta_c0,
                    cfg.eps_p.unwrap_or(0.0),
                    cfg.eps_c.unwrap_or(0.0),
                )?,
                PrecoderKind::PmslpAqnm => build_aqnm(
                    &shared,
                    &slot,
                    cfg.delta_p0,
                    cfg.delta_c0,
                    ctx.aqnm.as_ref().expect("aqnm design prepared"),
                )?,
                PrecoderKind::CrPalp => unreachable!(),
            };
            let sol = problem.solve(&ctx.opts)?;
            match sol.status {
                QpStatus::Optimal => Some(transmit_vector(&sol.x)),
                QpStatus::Infeasible => None,
                QpStatus::MaxIterations => {
                    t.solver_failures += 1;
                    None
                }
            }
        };

        let n_p = DVector::from_fn(dims.n_p, |_, _| complex_gaussian(&mut rng, dims.sigma2_p));
        let n_c = DVector::from_fn(dims.n_c, |_, _| complex_gaussian(&mut rng, dims.sigma2_c));

        let pbs_at_pu = &truth.h_pp * &x_p;
        let pbs_at_cu = &truth.h_pc * &x_p;
        let y0 = &pbs_at_pu + &n_p;
        t.pu0_errors += count_errors(&ctx.psk, &idx_p, &y0, &mut pu0_user_errors);

        match x_c {
            Some(x_c) => {
                let y_p = pbs_at_pu + &truth.h_cp * &x_c + &n_p;
                let y_c = &truth.h_cc * &x_c + pbs_at_cu + &n_c;
                t.pu_errors += count_errors(&ctx.psk, &idx_p, &y_p, &mut pu_user_errors);
                t.cu_errors += count_errors(&ctx.psk, &idx_c, &y_c, &mut cu_user_errors);
                t.power += x_c.norm_squared();
            }
            None => {
                // CBS stays silent: PUs see the primary-only signal, CUs get nothing
                t.outages += 1;
                t.pu_errors += count_errors(&ctx.psk, &idx_p, &y0, &mut pu_user_errors);
                for e in cu_user_errors.iter_mut() {
                    *e += bps;
                }
                t.cu_errors += bps * dims.n_c as u64;
            }
        }
        t.pu_bits += bps * dims.n_p as u64;
        t.cu_bits += bps * dims.n_c as u64;
        t.slots += 1;
    }
    t.pu_block_errors = pu_user_errors
        .iter()
        .filter(|&&e| e > cfg.correctable)
        .count() as u64;
    t.cu_block_errors = cu_user_errors
        .iter()
        .filter(|&&e| e > cfg.correctable)
        .count() as u64;
    Ok(t)
}

/// Pairwise sum, fixed association order.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

fn half_width(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn run(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let ctx = Context::new(cfg)?;
    let tallies: Vec<Tally> = if cfg.parallel {
        (0..cfg.realizations)
            .into_par_iter()
            .map(|r| run_realization(cfg, &ctx, r))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.realizations)
            .map(|r| run_realization(cfg, &ctx, r))
            .collect::<Result<_>>()?
    };

    let sum = |f: fn(&Tally) -> u64| tallies.iter().map(f).sum::<u64>();
    let slots = sum(|t| t.slots);
    let pu_bits = sum(|t| t.pu_bits);
    let cu_bits = sum(|t| t.cu_bits);
    let ber_pu = ratio(sum(|t| t.pu_errors), pu_bits);
    let ber_cu = ratio(sum(|t| t.cu_errors), cu_bits);
    let ber_pu0 = ratio(sum(|t| t.pu0_errors), pu_bits);
    let powers: Vec<f64> = tallies.iter().map(|t| t.power).collect();
    let mean_power = pairwise_sum(&powers) / slots as f64;

    let bps = psk_points(cfg.psk_order)?.bits_per_symbol();
    let block_bits = bps as u64 * cfg.block_len as u64;
    let bler_pu = block_error_prob(ber_pu, block_bits, cfg.correctable);
    let bler_cu = block_error_prob(ber_cu, block_bits, cfg.correctable);
    let tau_pu = throughput(bler_pu, bps, cfg.block_len, cfg.dims.n_p);
    let tau = throughput(bler_cu, bps, cfg.block_len, cfg.dims.n_c);
    let ee = match energy_efficiency(tau, &[mean_power * cfg.block_len as f64]) {
        Ok(v) => v,
        Err(Error::InfiniteEnergyEfficiency) => f64::INFINITY,
        Err(e) => return Err(e),
    };

    let blocks = cfg.realizations as u64;
    Ok(SimResult {
        ber_pu,
        ber_cu,
        ber_pu_primary_only: ber_pu0,
        bler_pu,
        bler_cu,
        bler_pu_empirical: ratio(sum(|t| t.pu_block_errors), blocks * cfg.dims.n_p as u64),
        bler_cu_empirical: ratio(sum(|t| t.cu_block_errors), blocks * cfg.dims.n_c as u64),
        tau,
        tau_pu,
        mean_power,
        power_dbw: watts_to_dbw(mean_power),
        ee,
        outage_frac: ratio(sum(|t| t.outages), slots),
        ci_ber_pu: half_width(ber_pu, pu_bits),
        ci_ber_cu: half_width(ber_cu, cu_bits),
        ci_ber_pu_primary_only: half_width(ber_pu0, pu_bits),
        solver_failures: sum(|t| t.solver_failures),
        slots,
        seed: cfg.seed,
    })
}
