use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use varlag_core::cases::{CaseName, CaseSpec};
use varlag_core::driver::{compare_sod_snapshot, run, taylor_green_convergence, RunConfig};
use varlag_core::oracles::convergence_csv;

#[derive(Parser)]
#[command(name = "varlag", version, about = "Implicit high-order Lagrangian hydrodynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case described by a TOML configuration file.
    Run {
        config: PathBuf,
    },
    /// Mesh convergence study of the Taylor-Green vortex.
    Convergence {
        case: String,
        /// Polynomial degrees (BDF order follows the degree).
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        degrees: Vec<usize>,
        /// Cells per direction, multiples of 8.
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        meshes: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        t_final: f64,
        /// Directory for `convergence_k<degree>.csv`; printed only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a 1D Sod snapshot CSV with the exact Riemann solution.
    RiemannCompare {
        snapshot: PathBuf,
    },
    /// List the built-in cases.
    ListCases,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::from_file(&config).with_context(|| format!("reading {}", config.display()))?;
            let summary = run(&cfg)?;
            let last = summary.diagnostics.last().context("no diagnostics recorded")?;
            println!(
                "{}: {} steps to t = {:.6}, total energy {:.10e}, output in {}",
                cfg.case,
                summary.steps,
                summary.t_final,
                last.total,
                summary.output_dir.display()
            );
        }
        Command::Convergence { case, degrees, meshes, t_final, out } => {
            let name: CaseName = case.parse()?;
            if name != CaseName::TaylorGreen {
                bail!("convergence studies need a smooth exact solution; only taylor_green is supported");
            }
            if meshes.len() < 2 {
                bail!("need at least two meshes");
            }
            for k in degrees {
                let (u, e) = taylor_green_convergence(k, &meshes, t_final)?;
                let csv = convergence_csv(&u, &e);
                match &out {
                    Some(dir) => {
                        fs::create_dir_all(dir)?;
                        let path = dir.join(format!("convergence_k{k}.csv"));
                        fs::write(&path, &csv)?;
                        println!("k = {k}: wrote {}", path.display());
                    }
                    None => {
                        println!("# k = {k}");
                        print!("{csv}");
                    }
                }
            }
        }
        Command::RiemannCompare { snapshot } => {
            let c = compare_sod_snapshot(&snapshot)?;
            println!("t = {}", c.t);
            println!("density L1 error (per unit length) = {:.6e}", c.l1_density);
            println!("shock: numerical {:.6}, exact {:.6}, offset {:.3} cells", c.shock_numeric, c.shock_exact, c.shock_offset_cells());
        }
        Command::ListCases => {
            for c in CaseName::ALL {
                let s = CaseSpec::default_for(c);
                println!(
                    "{:<13} k={} mesh={}x{} t_final={:.4}  {}",
                    c.as_str(),
                    s.degree,
                    s.nx,
                    s.ny,
                    s.t_final,
                    c.description()
                );
            }
        }
    }
    Ok(())
}
