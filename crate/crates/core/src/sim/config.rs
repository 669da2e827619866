//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key mirrors a field of
//! [`SimConfig`]; unknown or repeated keys are rejected.

use std::fmt;
use std::str::FromStr;

use crate::channel::{PbsMode, SystemDims};
use crate::csi::ErrorSampling;
use crate::error::{Error, Result};
use crate::geometry::psk_points;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecoderKind {
    PmslpPerfect,
    PmslpNormBounded,
    PmslpAqnm,
    /// Perfect-CSI design fed the impaired channels.
    NonRobust,
    CrPalp,
}

impl FromStr for PrecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pmslp-perfect" => Ok(PrecoderKind::PmslpPerfect),
            "pmslp-normbounded" => Ok(PrecoderKind::PmslpNormBounded),
            "pmslp-aqnm" => Ok(PrecoderKind::PmslpAqnm),
            "nonrobust-on-impaired" => Ok(PrecoderKind::NonRobust),
            "crpalp" => Ok(PrecoderKind::CrPalp),
            other => Err(Error::Config(format!("unknown precoder `{other}`"))),
        }
    }
}

impl fmt::Display for PrecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrecoderKind::PmslpPerfect => "pmslp-perfect",
            PrecoderKind::PmslpNormBounded => "pmslp-normbounded",
            PrecoderKind::PmslpAqnm => "pmslp-aqnm",
            PrecoderKind::NonRobust => "nonrobust-on-impaired",
            PrecoderKind::CrPalp => "crpalp",
        })
    }
}

/// How the PBS-shared links differ from the true ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiKind {
    Perfect,
    NormBounded,
    Quantized,
}

impl FromStr for CsiKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(CsiKind::Perfect),
            "normbounded" => Ok(CsiKind::NormBounded),
            "quantized" => Ok(CsiKind::Quantized),
            other => Err(Error::Config(format!("unknown csi model `{other}`"))),
        }
    }
}

impl fmt::Display for CsiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CsiKind::Perfect => "perfect",
            CsiKind::NormBounded => "normbounded",
            CsiKind::Quantized => "quantized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dims: SystemDims,
    /// PSK order `D`.
    pub psk_order: usize,
    /// Slots per block `T`.
    pub block_len: usize,
    /// Independent channel realizations `R`, one block each.
    pub realizations: usize,
    pub precoder: PrecoderKind,
    /// Inferred from the precoder and the impairment keys when unset.
    pub csi: Option<CsiKind>,
    pub eps_p: Option<f64>,
    pub eps_c: Option<f64>,
    pub error_sampling: ErrorSampling,
    pub b_p: Option<u32>,
    pub b_c: Option<u32>,
    pub beta_p: f64,
    pub beta_c: f64,
    pub v1: Option<f64>,
    pub v2: Option<f64>,
    pub delta_p0: f64,
    pub delta_c0: f64,
    /// CBS power for CR-PALP, watts.
    pub p_c: f64,
    pub pbs_mode: PbsMode,
    /// Bit errors a receiver corrects per block.
    pub correctable: u64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dims: SystemDims::default(),
            psk_order: 4,
            block_len: 50,
            realizations: 200,
            precoder: PrecoderKind::PmslpPerfect,
            csi: None,
            eps_p: None,
            eps_c: None,
            error_sampling: ErrorSampling::Sphere,
            b_p: None,
            b_c: None,
            beta_p: 1.0,
            beta_c: 1.0,
            v1: None,
            v2: None,
            delta_p0: 1.5,
            delta_c0: 1.5,
            p_c: 10.0,
            pbs_mode: PbsMode::ZeroForcing,
            correctable: 0,
            seed: 1,
            parallel: true,
        }
    }
}

pub const KEYS: &[&str] = &[
    "m_p",
    "m_c",
    "n_p",
    "n_c",
    "p_p_dbw",
    "sigma2_p",
    "sigma2_c",
    "psk_order",
    "block_len",
    "realizations",
    "precoder",
    "csi",
    "eps_p",
    "eps_c",
    "error_sampling",
    "b_p",
    "b_c",
    "beta_p",
    "beta_c",
    "v1",
    "v2",
    "delta_p0",
    "delta_c0",
    "p_c_dbw",
    "pbs_mode",
    "correctable",
    "seed",
    "parallel",
];

pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

pub fn watts_to_dbw(w: f64) -> f64 {
    10.0 * w.log10()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl SimConfig {
    /// Parses a config file body on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{k}`",
                    n + 1
                )));
            }
            seen.push(k);
            cfg.set(k, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key. Values of `none` clear optional keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt = |v: &str| v.eq_ignore_ascii_case("none");
        match key {
            "m_p" => self.dims.m_p = parse_value(key, value)?,
            "m_c" => self.dims.m_c = parse_value(key, value)?,
            "n_p" => self.dims.n_p = parse_value(key, value)?,
            "n_c" => self.dims.n_c = parse_value(key, value)?,
            "p_p_dbw" => self.dims.p_p = dbw_to_watts(parse_value(key, value)?),
            "sigma2_p" => self.dims.sigma2_p = parse_value(key, value)?,
            "sigma2_c" => self.dims.sigma2_c = parse_value(key, value)?,
            "psk_order" => self.psk_order = parse_value(key, value)?,
            "block_len" => self.block_len = parse_value(key, value)?,
            "realizations" => self.realizations = parse_value(key, value)?,
            "precoder" => self.precoder = value.parse()?,
            "csi" => {
                self.csi = if opt(value) {
                    None
                } else {
                    Some(value.parse()?)
                }
            }
            "eps_p" => {
                self.eps_p = if opt(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "eps_c" => {
                self.eps_c = if opt(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "error_sampling" => self.error_sampling = value.parse()?,
            "b_p" => {
                self.b_p = if opt(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "b_c" => {
                self.b_c = if opt(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "beta_p" => self.beta_p = parse_value(key, value)?,
            "beta_c" => self.beta_c = parse_value(key, value)?,
            "v1" => {
                self.v1 = if opt(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "v2" => {
                self.v2 = if opt(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "delta_p0" => self.delta_p0 = parse_value(key, value)?,
            "delta_c0" => self.delta_c0 = parse_value(key, value)?,
            "p_c_dbw" => self.p_c = dbw_to_watts(parse_value(key, value)?),
            "pbs_mode" => self.pbs_mode = value.parse()?,
            "correctable" => self.correctable = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "parallel" => self.parallel = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// The CSI model in effect.
    pub fn csi_kind(&self) -> CsiKind {
        if let Some(k) = self.csi {
            return k;
        }
        match self.precoder {
            PrecoderKind::PmslpNormBounded => CsiKind::NormBounded,
            PrecoderKind::PmslpAqnm => CsiKind::Quantized,
            PrecoderKind::PmslpPerfect | PrecoderKind::CrPalp => CsiKind::Perfect,
            PrecoderKind::NonRobust => {
                if self.b_p.is_some() || self.b_c.is_some() {
                    CsiKind::Quantized
                } else if self.eps_p.is_some() || self.eps_c.is_some() {
                    CsiKind::NormBounded
                } else {
                    CsiKind::Perfect
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.dims.validate()?;
        if self.block_len == 0 || self.realizations == 0 {
            return bad("block_len and realizations must be at least 1".into());
        }
        psk_points(self.psk_order).map_err(|e| Error::Config(e.to_string()))?;
        for (name, v) in [("delta_p0", self.delta_p0), ("delta_c0", self.delta_c0)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [
            ("beta_p", self.beta_p),
            ("beta_c", self.beta_c),
            ("p_c", self.p_c),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }

        let csi = self.csi_kind();
        let allowed: &[CsiKind] = match self.precoder {
            PrecoderKind::PmslpPerfect | PrecoderKind::CrPalp => &[CsiKind::Perfect],
            PrecoderKind::PmslpNormBounded => &[CsiKind::NormBounded],
            PrecoderKind::PmslpAqnm => &[CsiKind::Quantized],
            PrecoderKind::NonRobust => {
                &[CsiKind::Perfect, CsiKind::NormBounded, CsiKind::Quantized]
            }
        };
        if !allowed.contains(&csi) {
            return bad(format!(
                "precoder {} cannot run on csi model {csi}",
                self.precoder
            ));
        }

        let has_eps = self.eps_p.is_some() || self.eps_c.is_some();
        let has_bits = self.b_p.is_some() || self.b_c.is_some();
        match csi {
            CsiKind::NormBounded => {
                let (Some(ep), Some(ec)) = (self.eps_p, self.eps_c) else {
                    return bad("normbounded csi needs eps_p and eps_c".into());
                };
                if !(ep >= 0.0 && ec >= 0.0 && ep.is_finite() && ec.is_finite()) {
                    return bad(format!("error bounds must be non-negative, got {ep}, {ec}"));
                }
                if has_bits {
                    return bad("b_p / b_c only apply to quantized csi".into());
                }
            }
            CsiKind::Quantized => {
                let (Some(bp), Some(bc)) = (self.b_p, self.b_c) else {
                    return bad("quantized csi needs b_p and b_c".into());
                };
                if !(1..=5).contains(&bp) || !(1..=5).contains(&bc) {
                    return bad(format!("quantizer bits must be in 1..=5, got {bp}, {bc}"));
                }
                if has_eps {
                    return bad("eps_p / eps_c only apply to normbounded csi".into());
                }
            }
            CsiKind::Perfect => {
                if has_eps || has_bits {
                    return bad("impairment parameters given for perfect csi".into());
                }
            }
        }

        let has_v = self.v1.is_some() || self.v2.is_some();
        if self.precoder == PrecoderKind::PmslpAqnm {
            let (Some(v1), Some(v2)) = (self.v1, self.v2) else {
                return bad("pmslp-aqnm needs v1 and v2".into());
            };
            for v in [v1, v2] {
                if !(v > 0.5 && v < 1.0) {
                    return bad(format!(
                        "probability thresholds must lie in (0.5, 1), got {v}"
                    ));
                }
            }
            if self.psk_order < 4 {
                return bad("pmslp-aqnm needs psk_order >= 4".into());
            }
        } else if has_v {
            return bad("v1 / v2 only apply to pmslp-aqnm".into());
        }

        if self.precoder == PrecoderKind::CrPalp {
            if !self.dims.cbs_well_dimensioned() {
                return bad("crpalp needs m_c >= n_p + n_c".into());
            }
            if self.pbs_mode != PbsMode::ZeroForcing {
                return bad("crpalp needs pbs_mode = zf".into());
            }
        }
        Ok(())
    }

    /// Renders the config in the file format accepted by [`SimConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let some = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        put("m_p", self.dims.m_p.to_string());
        put("m_c", self.dims.m_c.to_string());
        put("n_p", self.dims.n_p.to_string());
        put("n_c", self.dims.n_c.to_string());
        put("p_p_dbw", watts_to_dbw(self.dims.p_p).to_string());
        put("sigma2_p", self.dims.sigma2_p.to_string());
        put("sigma2_c", self.dims.sigma2_c.to_string());
        put("psk_order", self.psk_order.to_string());
        put("block_len", self.block_len.to_string());
        put("realizations", self.realizations.to_string());
        put("precoder", self.precoder.to_string());
        put("csi", some(self.csi.map(|c| c.to_string())));
        put("eps_p", some(self.eps_p.map(|v| v.to_string())));
        put("eps_c", some(self.eps_c.map(|v| v.to_string())));
        put("error_sampling", self.error_sampling.to_string());
        put("b_p", some(self.b_p.map(|v| v.to_string())));
        put("b_c", some(self.b_c.map(|v| v.to_string())));
        put("beta_p", self.beta_p.to_string());
        put("beta_c", self.beta_c.to_string());
        put("v1", some(self.v1.map(|v| v.to_string())));
        put("v2", some(self.v2.map(|v| v.to_string())));
        put("delta_p0", self.delta_p0.to_string());
        put("delta_c0", self.delta_c0.to_string());
        put("p_c_dbw", watts_to_dbw(self.p_c).to_string());
        put("pbs_mode", self.pbs_mode.to_string());
        put("correctable", self.correctable.to_string());
        put("seed", self.seed.to_string());
        put("parallel", self.parallel.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = SimConfig::parse("").unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert!((cfg.dims.p_p - 10.0).abs() < 1e-12);
    }

    #[test]
    fn parses_comments_and_values() {
        let cfg = SimConfig::parse(
            "# quantized run\nprecoder = pmslp-aqnm\nb_p = 2 \nb_c=3\nv1 = 0.9 # primary\nv2 = 0.8\np_p_dbw = 20\n",
        )
        .unwrap();
        assert_eq!(cfg.precoder, PrecoderKind::PmslpAqnm);
        assert_eq!(cfg.csi_kind(), CsiKind::Quantized);
        assert_eq!((cfg.b_p, cfg.b_c), (Some(2), Some(3)));
        assert!((cfg.dims.p_p - 100.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(matches!(SimConfig::parse("foo = 1"), Err(Error::Config(_))));
        assert!(matches!(
            SimConfig::parse("seed = 1\nseed = 2"),
            Err(Error::Config(_))
        ));
        assert!(matches!(SimConfig::parse("seed 1"), Err(Error::Config(_))));
    }

    #[test]
    fn inconsistent_parameters_fail() {
        for text in [
            "v1 = 0.9\nv2 = 0.9",
            "precoder = pmslp-aqnm\nb_p = 2\nb_c = 2",
            "precoder = pmslp-aqnm\nb_p = 2\nb_c = 2\nv1 = 1.0\nv2 = 0.9",
            "precoder = pmslp-normbounded\neps_p = 0.3",
            "precoder = pmslp-normbounded\neps_p = -0.3\neps_c = 0.3",
            "precoder = pmslp-perfect\nb_p = 2\nb_c = 2",
            "precoder = nonrobust-on-impaired\nb_p = 2\nb_c = 9",
            "precoder = crpalp\nm_c = 6",
            "realizations = 0",
            "psk_order = 6",
            "precoder = pmslp-aqnm\npsk_order = 2\nb_p = 2\nb_c = 2\nv1 = 0.9\nv2 = 0.9",
        ] {
            assert!(SimConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn nonrobust_infers_csi() {
        let a =
            SimConfig::parse("precoder = nonrobust-on-impaired\neps_p = 0.3\neps_c = 0.1").unwrap();
        assert_eq!(a.csi_kind(), CsiKind::NormBounded);
        let b = SimConfig::parse("precoder = nonrobust-on-impaired\nb_p = 2\nb_c = 3").unwrap();
        assert_eq!(b.csi_kind(), CsiKind::Quantized);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = SimConfig::default();
        cfg.set("precoder", "pmslp-normbounded").unwrap();
        cfg.set("eps_p", "0.125").unwrap();
        cfg.set("eps_c", "0.3").unwrap();
        cfg.set("p_c_dbw", "7").unwrap();
        cfg.set("seed", "99").unwrap();
        let back = SimConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.precoder, cfg.precoder);
        assert_eq!(back.eps_p, cfg.eps_p);
        assert_eq!(back.seed, 99);
        assert!((back.p_c - cfg.p_c).abs() < 1e-9);
        assert!((back.dims.p_p - cfg.dims.p_p).abs() < 1e-9);
    }
}
