use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use filmflow_cli::{config::RunConfig, studies, Faults, Selector, EXIT_CONFIG, EXIT_OK, EXIT_VERIFY};

#[derive(Parser)]
#[command(name = "filmflow", version, about = "Shear-thinning thin-film flow with Tresca friction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Plain-text `key = value` configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Request bit-reproducible output (assembly is always serial).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Picard iteration with diag.csv, field dumps and report.txt.
    Run(Common),
    /// Run every value of `sweep.key` in parallel, one directory each.
    Sweep(Common),
    /// Manufactured-solution convergence on the configured mesh and its refinement.
    Mms(Common),
    /// Run verification suites and print a pass/fail table.
    Verify {
        /// constitutive, oracle, energy, complementarity, mms or all.
        #[arg(default_value = "all")]
        suite: Selector,
        /// Accepted for symmetry with the other subcommands; suites use fixed setups.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        deterministic: bool,
    },
}

fn load(common: &Common) -> Result<RunConfig, u8> {
    match RunConfig::load(&common.config) {
        Ok(mut c) => {
            c.deterministic |= common.deterministic;
            Ok(c)
        }
        Err(e) => {
            eprintln!("config error: {} ({})", e, common.config.display());
            Err(EXIT_CONFIG as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(common) => match load(&common) {
            Err(code) => code as i32,
            Ok(cfg) => match filmflow_cli::run(&cfg, &common.out) {
                Ok(summary) => {
                    println!(
                        "converged after {} Picard evaluations; distances {}",
                        summary.outcome.evaluations(),
                        studies::fmt_list(&summary.outcome.distances())
                    );
                    println!("wrote {} files to {}", summary.written.len(), common.out.display());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            },
        },
        Command::Sweep(common) => match load(&common) {
            Err(code) => code as i32,
            Ok(cfg) => match filmflow_cli::sweep(&cfg, &common.out) {
                Err(e) => {
                    eprintln!("config error: {e}");
                    EXIT_CONFIG
                }
                Ok(members) => {
                    for m in &members {
                        println!("{} -> exit {} ({}): {}", m.value, m.exit_code, m.dir.display(), m.message);
                    }
                    members.iter().map(|m| m.exit_code).max().unwrap_or(EXIT_OK)
                }
            },
        },
        Command::Mms(common) => match load(&common) {
            Err(code) => code as i32,
            Ok(cfg) => match filmflow_cli::mms(&cfg, &common.out) {
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CONFIG
                }
                Ok(study) => {
                    for (m, e) in study.meshes.iter().zip(&study.errors) {
                        println!("{}x{}  L2 error {e:.6e}", m.0, m.1);
                    }
                    let order = study.orders[0];
                    println!("observed order {order:.4}");
                    if order >= 2.0 {
                        EXIT_OK
                    } else {
                        EXIT_VERIFY
                    }
                }
            },
        },
        Command::Verify { suite, config, .. } => {
            if let Some(path) = config {
                if let Err(e) = RunConfig::load(&path) {
                    eprintln!("config error: {e} ({})", path.display());
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            }
            match filmflow_cli::verify(suite, Faults::default(), std::io::stdout().lock()) {
                Ok(true) => EXIT_OK,
                Ok(false) => EXIT_VERIFY,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_VERIFY
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
