//! Named experiment presets and CSV output.
//!
//! A preset is a list of families; each family fixes a base config and sweeps
//! one variable over a grid. Overrides of the form `key=value` apply to every
//! family's base. Two override keys are special: `grid=a,b,c` replaces every
//! family's grid and `grid.<var>=a,b,c` replaces the grid of families that
//! sweep `<var>`. An empty grid yields no rows.

use std::io::Write;

use super::config::SimConfig;
use super::engine::{run, SimResult};
use crate::error::{Error, Result};

pub const PRESETS: &[&str] = &[
    "fig5-power-sweep",
    "fig6to9-epsilon-sweep",
    "fig10to12-sm-sweep",
    "fig13-bit-allocation",
];

pub const CSV_HEADER: &str =
    "preset,sweep_var,sweep_value,precoder,b_p,b_c,eps_p,eps_c,delta_p0,delta_c0,v1,v2,\
ber_pu,ber_cu,bler_pu,bler_cu,tau,power_dbw,ee,outage_frac,ci_ber_pu,ci_ber_cu,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub base: SimConfig,
    pub var: String,
    pub grid: Vec<f64>,
    /// For `b_p` sweeps: `b_c` is set to `budget − b_p`.
    pub bit_budget: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub preset: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub result: SimResult,
}

fn with(base: &SimConfig, pairs: &[(&str, &str)]) -> SimConfig {
    let mut cfg = base.clone();
    for (k, v) in pairs {
        cfg.set(k, v).expect("preset keys are valid");
    }
    cfg
}

fn family(base: SimConfig, var: &str, grid: &[f64]) -> Family {
    Family {
        base,
        var: var.to_string(),
        grid: grid.to_vec(),
        bit_budget: None,
    }
}

/// Families of a named preset before overrides.
pub fn preset_families(name: &str) -> Result<Vec<Family>> {
    let d = SimConfig::default();
    let fams = match name {
        "fig5-power-sweep" => {
            let base = with(&d, &[("delta_p0", "1.9")]);
            vec![
                family(
                    with(&base, &[("precoder", "pmslp-perfect")]),
                    "delta_c0",
                    &[0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0],
                ),
                family(
                    with(&base, &[("precoder", "crpalp")]),
                    "p_c_dbw",
                    &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
                ),
            ]
        }
        "fig6to9-epsilon-sweep" => {
            let base = with(&d, &[("delta_p0", "1.5"), ("delta_c0", "1.5")]);
            let grid = [-2.0, -1.5, -1.1, -0.9, -0.7, -0.5, -0.3];
            let mut out = Vec::new();
            for precoder in ["pmslp-normbounded", "nonrobust-on-impaired"] {
                let b = with(&base, &[("precoder", precoder), ("csi", "normbounded")]);
                out.push(family(
                    with(&b, &[("eps_p", "0.3"), ("eps_c", "0.3")]),
                    "log10_eps_p",
                    &grid,
                ));
                out.push(family(
                    with(&b, &[("eps_p", "0.3"), ("eps_c", "0.3")]),
                    "log10_eps_c",
                    &grid,
                ));
            }
            out
        }
        "fig10to12-sm-sweep" => {
            let base = with(&d, &[("delta_p0", "1.5")]);
            let grid = [1.1, 1.3, 1.5, 1.7, 1.9];
            let mut out = Vec::new();
            for b in ["2", "3"] {
                let q = with(&base, &[("b_p", b), ("b_c", b), ("csi", "quantized")]);
                out.push(family(
                    with(&q, &[("precoder", "nonrobust-on-impaired")]),
                    "delta_c0",
                    &grid,
                ));
                for v in ["0.7", "0.9"] {
                    out.push(family(
                        with(&q, &[("precoder", "pmslp-aqnm"), ("v1", v), ("v2", v)]),
                        "delta_c0",
                        &grid,
                    ));
                }
            }
            out
        }
        "fig13-bit-allocation" => {
            let base = with(
                &d,
                &[
                    ("delta_p0", "1.5"),
                    ("delta_c0", "1.5"),
                    ("csi", "quantized"),
                    ("b_p", "1"),
                    ("b_c", "4"),
                ],
            );
            let grid = [1.0, 2.0, 3.0, 4.0];
            let mut out = Vec::new();
            for cfg in [
                with(&base, &[("precoder", "nonrobust-on-impaired")]),
                with(
                    &base,
                    &[("precoder", "pmslp-aqnm"), ("v1", "0.9"), ("v2", "0.9")],
                ),
            ] {
                let mut f = family(cfg, "b_p", &grid);
                f.bit_budget = Some(5);
                out.push(f);
            }
            out
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(fams)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("bad grid value `{s}`")))
        })
        .collect()
}

/// Splits `key=value`.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn apply_overrides(families: &mut [Family], overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        if k == "grid" {
            let g = parse_grid(v)?;
            families.iter_mut().for_each(|f| f.grid = g.clone());
        } else if let Some(var) = k.strip_prefix("grid.") {
            let g = parse_grid(v)?;
            let mut hit = false;
            for f in families.iter_mut().filter(|f| f.var == var) {
                f.grid = g.clone();
                hit = true;
            }
            if !hit {
                return Err(Error::Config(format!("no family sweeps `{var}`")));
            }
        } else {
            for f in families.iter_mut() {
                f.base.set(k, v)?;
            }
        }
    }
    Ok(())
}

fn set_sweep_var(cfg: &mut SimConfig, fam: &Family, value: f64) -> Result<()> {
    match fam.var.as_str() {
        "log10_eps_p" => cfg.eps_p = Some(10f64.powf(value)),
        "log10_eps_c" => cfg.eps_c = Some(10f64.powf(value)),
        "b_p" => {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(Error::Config(format!(
                    "b_p grid value {value} is not a bit count"
                )));
            }
            let b = value as u32;
            cfg.b_p = Some(b);
            if let Some(total) = fam.bit_budget {
                let Some(rest) = total.checked_sub(b) else {
                    return Err(Error::Config(format!(
                        "b_p = {b} exceeds the bit budget {total}"
                    )));
                };
                cfg.b_c = Some(rest);
            }
        }
        var => cfg.set(var, &value.to_string())?,
    }
    Ok(())
}

/// Expands a preset into validated sweep points.
pub fn sweep_points(preset: &str, overrides: &[(String, String)]) -> Result<Vec<SweepPoint>> {
    let mut families = preset_families(preset)?;
    apply_overrides(&mut families, overrides)?;
    let mut points = Vec::new();
    for fam in &families {
        for &value in &fam.grid {
            let mut cfg = fam.base.clone();
            set_sweep_var(&mut cfg, fam, value)?;
            cfg.validate()?;
            points.push(SweepPoint {
                preset: preset.to_string(),
                sweep_var: fam.var.clone(),
                sweep_value: value,
                config: cfg,
            });
        }
    }
    Ok(points)
}

pub fn sweep(preset: &str, overrides: &[(String, String)]) -> Result<Vec<SweepRow>> {
    sweep_points(preset, overrides)?
        .into_iter()
        .map(|point| {
            let result = run(&point.config)?;
            Ok(SweepRow { point, result })
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV record in [`CSV_HEADER`] order.
pub fn csv_record(
    preset: &str,
    sweep_var: &str,
    sweep_value: Option<f64>,
    cfg: &SimConfig,
    r: &SimResult,
) -> String {
    [
        preset.to_string(),
        sweep_var.to_string(),
        opt(sweep_value),
        cfg.precoder.to_string(),
        opt(cfg.b_p),
        opt(cfg.b_c),
        opt(cfg.eps_p),
        opt(cfg.eps_c),
        cfg.delta_p0.to_string(),
        cfg.delta_c0.to_string(),
        opt(cfg.v1),
        opt(cfg.v2),
        r.ber_pu.to_string(),
        r.ber_cu.to_string(),
        r.bler_pu.to_string(),
        r.bler_cu.to_string(),
        r.tau.to_string(),
        r.power_dbw.to_string(),
        r.ee.to_string(),
        r.outage_frac.to_string(),
        r.ci_ber_pu.to_string(),
        r.ci_ber_cu.to_string(),
        r.seed.to_string(),
    ]
    .join(",")
}

pub fn write_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        let p = &row.point;
        writeln!(
            out,
            "{}",
            csv_record(
                &p.preset,
                &p.sweep_var,
                Some(p.sweep_value),
                &p.config,
                &row.result
            )
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn every_preset_expands_to_valid_points() {
        for name in PRESETS {
            let pts = sweep_points(name, &[]).unwrap();
            assert!(!pts.is_empty(), "{name}");
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(
            sweep_points("fig99", &[]),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn epsilon_preset_holds_the_other_bound() {
        for p in sweep_points("fig6to9-epsilon-sweep", &[]).unwrap() {
            let expect = 10f64.powf(p.sweep_value);
            match p.sweep_var.as_str() {
                "log10_eps_p" => {
                    assert_eq!(p.config.eps_c, Some(0.3));
                    assert!((p.config.eps_p.unwrap() - expect).abs() < 1e-12);
                }
                "log10_eps_c" => {
                    assert_eq!(p.config.eps_p, Some(0.3));
                    assert!((p.config.eps_c.unwrap() - expect).abs() < 1e-12);
                }
                other => panic!("unexpected sweep var {other}"),
            }
        }
    }

    #[test]
    fn bit_allocation_preset() {
        let pts = sweep_points("fig13-bit-allocation", &[]).unwrap();
        assert_eq!(pts.len(), 8);
        for p in pts {
            assert_eq!(p.config.b_p.unwrap() + p.config.b_c.unwrap(), 5);
            assert_eq!((p.config.delta_p0, p.config.delta_c0), (1.5, 1.5));
            if p.config.v1.is_some() {
                assert_eq!((p.config.v1, p.config.v2), (Some(0.9), Some(0.9)));
            }
        }
    }

    #[test]
    fn empty_grid_empty_table() {
        let rows = sweep("fig5-power-sweep", &ov(&[("grid", "")])).unwrap();
        assert!(rows.is_empty());
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), CSV_HEADER);
    }

    #[test]
    fn overrides_apply() {
        let pts = sweep_points(
            "fig5-power-sweep",
            &ov(&[
                ("realizations", "3"),
                ("grid.p_c_dbw", "7"),
                ("grid.delta_c0", "1,2"),
            ]),
        )
        .unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| p.config.realizations == 3));
        assert!(sweep_points("fig5-power-sweep", &ov(&[("nope", "1")])).is_err());
        assert!(sweep_points("fig5-power-sweep", &ov(&[("grid.b_p", "1")])).is_err());
    }

    #[test]
    fn csv_has_fixed_columns() {
        let rows = sweep(
            "fig13-bit-allocation",
            &ov(&[("realizations", "2"), ("block_len", "2"), ("grid", "2")]),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let n = CSV_HEADER.split(',').count();
        assert_eq!(n, 23);
        for line in text.lines() {
            assert_eq!(line.split(',').count(), n);
        }
    }
}
