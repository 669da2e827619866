//! PSK constellation handling and the safety-margin geometry.
//!
//! A received point `r` for intended symbol `s` is rotated into the frame
//! where `s` sits on the positive real axis, `z = r·s*`. Its safety margin is
//! the distance to the nearer of the two decision boundaries of the sector,
//! `Re{z}·sinθ − |Im{z}|·cosθ` with `θ = π/D`.
//!
//! [`mho`] lifts a complex row `h` into a `2 × 2M` real block whose rows
//! evaluate the two boundary distances of `h·x` against `realify(x)`, which
//! turns the margin constraint into two linear inequalities.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// `D`-PSK on the unit circle with points `exp(jπ(2d+1)/D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PskConstellation {
    order: usize,
    theta: f64,
    points: Vec<Complex64>,
}

impl PskConstellation {
    pub fn new(order: usize) -> Result<Self> {
        psk_points(order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Half-angle of a decision sector, `π/D`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Bits carried by one symbol, `log2 D`.
    pub fn bits_per_symbol(&self) -> u32 {
        self.order.trailing_zeros()
    }

    /// Gray label of symbol `index`. Neighbouring points differ in one bit.
    pub fn gray_label(&self, index: usize) -> usize {
        index ^ (index >> 1)
    }

    /// Number of differing bits between the Gray labels of two symbols.
    pub fn bit_errors(&self, sent: usize, detected: usize) -> u32 {
        (self.gray_label(sent) ^ self.gray_label(detected)).count_ones()
    }

    pub fn detect(&self, y: Complex64) -> Detection {
        detect(y, self)
    }
}

pub fn psk_points(order: usize) -> Result<PskConstellation> {
    if order < 2 || !order.is_power_of_two() {
        return Err(Error::InvalidOrder(order));
    }
    let d = order as f64;
    let points = (0..order)
        .map(|i| Complex64::from_polar(1.0, PI * (2 * i + 1) as f64 / d))
        .collect();
    Ok(PskConstellation {
        order,
        theta: PI / d,
        points,
    })
}

/// Noise-free received point expressed in the frame of its intended symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedSymbol(pub Complex64);

impl RotatedSymbol {
    /// `z = r·conj(s)`.
    pub fn new(received: Complex64, symbol: Complex64) -> Self {
        RotatedSymbol(received * symbol.conj())
    }

    pub fn z(&self) -> Complex64 {
        self.0
    }
}

pub fn safety_margin(z: RotatedSymbol, theta: f64) -> f64 {
    let z = z.0;
    z.re * theta.sin() - z.im.abs() * theta.cos()
}

/// Two-row real lift of a complex row of length `M`. Columns are laid out as
/// real parts first, imaginary parts second, matching [`realify`].
#[derive(Debug, Clone, PartialEq)]
pub struct MhoBlock {
    pub rows: DMatrix<f64>,
}

impl MhoBlock {
    pub fn len(&self) -> usize {
        self.rows.ncols() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.rows.ncols() == 0
    }

    /// Evaluate both rows against a real-stacked vector.
    pub fn apply(&self, x_real: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self
                .rows
                .row(r)
                .iter()
                .zip(x_real)
                .map(|(a, b)| a * b)
                .sum();
        }
        out
    }
}

pub fn mho(x: &[Complex64], theta: f64) -> MhoBlock {
    let m = x.len();
    let (s, c) = theta.sin_cos();
    let mut rows = DMatrix::zeros(2, 2 * m);
    for (i, v) in x.iter().enumerate() {
        rows[(0, i)] = v.re * s - v.im * c;
        rows[(0, m + i)] = -v.re * c - v.im * s;
        rows[(1, i)] = v.re * s + v.im * c;
        rows[(1, m + i)] = v.re * c - v.im * s;
    }
    MhoBlock { rows }
}

/// `[Re{x}; Im{x}]`.
pub fn realify(x: &[Complex64]) -> Vec<f64> {
    x.iter()
        .map(|v| v.re)
        .chain(x.iter().map(|v| v.im))
        .collect()
}

/// Inverse of [`realify`].
pub fn complexify(x: &[f64]) -> Vec<Complex64> {
    let m = x.len() / 2;
    (0..m).map(|i| Complex64::new(x[i], x[m + i])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub index: usize,
    /// Set when the input was exactly zero and carries no phase.
    pub degenerate: bool,
}

/// Hard PSK decision by angular sector. Sector `d` spans
/// `[2πd/D, 2π(d+1)/D)`; a point exactly on a boundary goes to the lower index.
pub fn detect(y: Complex64, constellation: &PskConstellation) -> Detection {
    if y == Complex64::new(0.0, 0.0) {
        return Detection {
            index: 0,
            degenerate: true,
        };
    }
    let d = constellation.order;
    let mut angle = y.im.atan2(y.re);
    if angle < 0.0 {
        angle += 2.0 * PI;
    }
    let k = angle * d as f64 / (2.0 * PI);
    let floor = k.floor();
    let mut index = floor as usize % d;
    if k == floor && index > 0 {
        index -= 1;
    }
    Detection {
        index,
        degenerate: false,
    }
}
