//! Seeded Monte-Carlo harness: configuration, the per-realization engine and
//! experiment sweeps.

pub mod config;
pub mod engine;
pub mod sweep;

pub use config::{CsiKind, PrecoderKind, SimConfig};
pub use engine::{run, SimResult};
pub use sweep::{sweep, write_csv, SweepRow, CSV_HEADER, PRESETS};
