//! Symbol-level precoding (SLP) for an overlay cognitive-radio downlink.
//!
//! A cognitive base station (CBS) shares spectrum with a primary base station
//! (PBS). The PBS hands over its data symbols and (possibly impaired) channel
//! state so the CBS can choose a per-slot transmit vector that keeps every
//! primary and cognitive user inside its constructive-interference region with
//! a prescribed safety margin, at minimum CBS power.
//!
//! Layout:
//! - [`geometry`]: PSK constellations, safety margins, the two-row margin lift
//!   of a rotated channel and real-valued stacking.
//! - [`channel`]: synthetic flat-fading channels and the PBS transmit vector.
//! - [`csi`]: Lloyd-Max quantization, additive-quantization-noise statistics
//!   and norm-bounded error injection.
//! - [`precoders`]: constraint builders for the perfect, norm-bounded and
//!   quantized-CSI designs plus the CR-PALP baseline.
//! - [`qp`]: the min-norm QP solver with KKT certificates.
//! - [`metrics`]: erf / erf⁻¹, chance-constraint margins, noise covariance,
//!   block error rate, throughput and energy efficiency.
//! - [`sim`]: seeded Monte-Carlo engine, sweep presets and config parsing.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod csi;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod precoders;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
pub use num_complex::Complex64;
