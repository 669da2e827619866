//! Synthetic flat-fading channels and the PBS side of the link.
//!
//! Received signals follow
//! `y_p = H_pp·x_p + H_cp·x_c + n_p` at the primary users and
//! `y_c = H_cc·x_c + H_pc·x_p + n_c` at the cognitive users.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Smallest singular-value ratio accepted before a channel is treated as rank deficient.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDims {
    /// PBS antennas.
    pub m_p: usize,
    /// CBS antennas.
    pub m_c: usize,
    /// Primary users.
    pub n_p: usize,
    /// Cognitive users.
    pub n_c: usize,
    /// PBS transmit power in watts.
    pub p_p: f64,
    pub sigma2_p: f64,
    pub sigma2_c: f64,
}

impl Default for SystemDims {
    fn default() -> Self {
        SystemDims {
            m_p: 8,
            m_c: 8,
            n_p: 4,
            n_c: 4,
            p_p: 10.0,
            sigma2_p: 1.0,
            sigma2_c: 1.0,
        }
    }
}

impl SystemDims {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.m_p, self.m_c, self.n_p, self.n_c];
        if counts.contains(&0) {
            return Err(Error::Config(
                "antenna and user counts must be positive".into(),
            ));
        }
        for (name, v) in [
            ("p_p", self.p_p),
            ("sigma2_p", self.sigma2_p),
            ("sigma2_c", self.sigma2_c),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether the CBS has enough antennas to satisfy every user generically.
    pub fn cbs_well_dimensioned(&self) -> bool {
        self.m_c >= self.n_p + self.n_c
    }
}

/// The four links. Row `k` of each matrix is the channel to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// PBS → PUs, `N_p × M_p`.
    pub h_pp: DMatrix<Complex64>,
    /// CBS → PUs, `N_p × M_c`.
    pub h_cp: DMatrix<Complex64>,
    /// PBS → CUs, `N_c × M_p`.
    pub h_pc: DMatrix<Complex64>,
    /// CBS → CUs, `N_c × M_c`.
    pub h_cc: DMatrix<Complex64>,
}

impl ChannelSet {
    pub fn dims_match(&self, dims: &SystemDims) -> bool {
        self.h_pp.shape() == (dims.n_p, dims.m_p)
            && self.h_cp.shape() == (dims.n_p, dims.m_c)
            && self.h_pc.shape() == (dims.n_c, dims.m_p)
            && self.h_cc.shape() == (dims.n_c, dims.m_c)
    }

    /// Same CBS links, PBS links replaced (e.g. by their shared, impaired versions).
    pub fn with_pbs_links(&self, h_pp: DMatrix<Complex64>, h_pc: DMatrix<Complex64>) -> Self {
        ChannelSet {
            h_pp,
            h_cp: self.h_cp.clone(),
            h_pc,
            h_cc: self.h_cc.clone(),
        }
    }
}

/// One circularly-symmetric complex Gaussian draw with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn complex_gaussian_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> DMatrix<Complex64> {
    // filled row by row so the draw order is independent of storage layout
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = complex_gaussian(rng, variance);
        }
    }
    m
}

pub fn sample_channels<R: Rng + ?Sized>(dims: &SystemDims, rng: &mut R) -> ChannelSet {
    let h_pp = complex_gaussian_matrix(rng, dims.n_p, dims.m_p, 1.0);
    let h_cp = complex_gaussian_matrix(rng, dims.n_p, dims.m_c, 1.0);
    let h_pc = complex_gaussian_matrix(rng, dims.n_c, dims.m_p, 1.0);
    let h_cc = complex_gaussian_matrix(rng, dims.n_c, dims.m_c, 1.0);
    ChannelSet {
        h_pp,
        h_cp,
        h_pc,
        h_cc,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbsMode {
    /// Zero-forcing with per-slot normalization to `P_p`.
    ZeroForcing,
    /// Gaussian transmit vector with `E‖x_p‖² = P_p`.
    White,
}

impl std::str::FromStr for PbsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zf" => Ok(PbsMode::ZeroForcing),
            "white" => Ok(PbsMode::White),
            other => Err(Error::Config(format!("unknown pbs mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PbsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PbsMode::ZeroForcing => "zf",
            PbsMode::White => "white",
        })
    }
}

/// Right pseudo-inverse `Hᴴ(HHᴴ)⁻¹` of a full-row-rank matrix.
pub fn right_pseudo_inverse(h: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let gram_inv = gram_inverse(h)?;
    Ok(h.adjoint() * gram_inv)
}

/// `(HHᴴ)⁻¹`, rejecting rank-deficient `H`.
pub fn gram_inverse(h: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    if h.nrows() > h.ncols() {
        return Err(Error::SingularChannel("more rows than columns"));
    }
    let gram = h * h.adjoint();
    // eigenvalues of HHᴴ are the squared singular values of H
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || min / max < RANK_RTOL * RANK_RTOL {
        return Err(Error::SingularChannel("rank-deficient channel matrix"));
    }
    gram.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularChannel(
            "channel Gram matrix not positive definite",
        ))
}

/// Unnormalized ZF precoder `W_p = H_ppᴴ(H_pp H_ppᴴ)⁻¹`.
pub fn zf_precoder(h_pp: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    right_pseudo_inverse(h_pp)
}

/// What the PBS sends in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PbsTransmit {
    pub x_p: DVector<Complex64>,
    /// Power scaling applied to `W_p·s_p` (ZF mode); `None` in white mode.
    pub scale: Option<f64>,
}

/// Computes `x_p`. In ZF mode pass the precoder from [`zf_precoder`] to avoid
/// refactoring `H_pp` every slot; it is recomputed when absent.
pub fn pbs_transmit<R: Rng + ?Sized>(
    h_pp: &DMatrix<Complex64>,
    w_p: Option<&DMatrix<Complex64>>,
    s_p: &DVector<Complex64>,
    p_p: f64,
    mode: PbsMode,
    rng: &mut R,
) -> Result<PbsTransmit> {
    match mode {
        PbsMode::ZeroForcing => {
            let owned;
            let w = match w_p {
                Some(w) => w,
                None => {
                    owned = zf_precoder(h_pp)?;
                    &owned
                }
            };
            let raw = w * s_p;
            let energy = raw.norm_squared();
            if !(energy > 0.0) {
                return Err(Error::SingularChannel("zero ZF output"));
            }
            let f = (p_p / energy).sqrt();
            Ok(PbsTransmit {
                x_p: raw * Complex64::new(f, 0.0),
                scale: Some(f),
            })
        }
        PbsMode::White => {
            let m = h_pp.ncols();
            let var = p_p / m as f64;
            let x_p = DVector::from_iterator(m, (0..m).map(|_| complex_gaussian(rng, var)));
            Ok(PbsTransmit { x_p, scale: None })
        }
    }
}

/// `conj(s)·h`.
pub fn rotated_channel(h: &[Complex64], s: Complex64) -> Vec<Complex64> {
    let sc = s.conj();
    h.iter().map(|v| sc * v).collect()
}

/// Row `k` of a matrix as a contiguous vector.
pub fn row_vec(m: &DMatrix<Complex64>, k: usize) -> Vec<Complex64> {
    m.row(k).iter().copied().collect()
}
