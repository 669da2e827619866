use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slpcr::csi::lloyd_max_default;
use slpcr::sim::sweep::{csv_record, parse_override};
use slpcr::sim::{run, sweep, write_csv, SimConfig, SimResult, CSV_HEADER};
use slpcr::{Error, Result};

/// Solver failures above this fraction of slots abort the run.
const MAX_SOLVER_FAILURE_FRAC: f64 = 0.01;

#[derive(Parser)]
#[command(
    name = "slpcr",
    version,
    about = "Symbol-level precoding for overlay cognitive radio"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and print a CSV row.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named preset sweep.
    Sweep {
        #[arg(long)]
        preset: String,
        /// `key=value`; repeatable. `grid=a,b,c` replaces the sweep grid.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a Lloyd-Max codebook for a unit-variance Gaussian.
    Quantizer {
        #[arg(long)]
        bits: u32,
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

fn check_solver(r: &SimResult) -> Result<()> {
    if r.slots > 0 && r.solver_failures as f64 > MAX_SOLVER_FAILURE_FRAC * r.slots as f64 {
        return Err(Error::Solver(format!(
            "{} of {} slots ended without a verified optimum",
            r.solver_failures, r.slots
        )));
    }
    Ok(())
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config, seed, out } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            let mut cfg = SimConfig::parse(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let r = run(&cfg)?;
            check_solver(&r)?;
            let body = format!("{CSV_HEADER}\n{}\n", csv_record("run", "", None, &cfg, &r));
            emit(out.as_ref(), &body)
        }
        Cmd::Sweep {
            preset,
            overrides,
            out,
        } => {
            let overrides = overrides
                .iter()
                .map(|s| parse_override(s))
                .collect::<Result<Vec<_>>>()?;
            let rows = sweep(&preset, &overrides)?;
            for row in &rows {
                check_solver(&row.result)?;
            }
            let mut buf = Vec::new();
            write_csv(&mut buf, &rows)?;
            emit(out.as_ref(), &String::from_utf8_lossy(&buf))
        }
        Cmd::Quantizer { bits, export } => {
            if !(1..=5).contains(&bits) {
                return Err(Error::Config(format!("bits must be in 1..=5, got {bits}")));
            }
            let cb = lloyd_max_default(bits)?;
            println!("bits {} mse {:.6e}", cb.bits, cb.mse);
            println!("levels {:?}", cb.levels);
            if let Some(path) = export {
                fs::write(path, cb.to_json()?)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
