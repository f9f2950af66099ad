//! Configuration, orchestration and file outputs for filmflow runs, sweeps
//! and verification suites.

pub mod config;
pub mod run;
pub mod studies;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{ConfigError, RunConfig};
pub use run::{run, RunError, RunSummary};
pub use verify::{verify, Faults, Selector, Suite};

/// Exit code of a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code when a verification or convergence study fails.
pub const EXIT_VERIFY: i32 = 5;

/// Directory name of one sweep member, safe for file systems.
pub fn sweep_dir(key: &str, value: &str) -> String {
    let clean: String = format!("{key}={value}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=._-".contains(c) { c } else { '_' })
        .collect();
    clean
}

/// Outcome of one sweep member.
#[derive(Debug)]
pub struct SweepMember {
    pub value: String,
    pub dir: PathBuf,
    pub exit_code: i32,
    pub message: String,
}

/// Runs every value of the config's sweep in parallel, each into its own
/// directory under `out`.
pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepMember>, ConfigError> {
    let (key, values) = cfg.sweep.clone().ok_or_else(|| ConfigError::Invalid {
        line: None,
        key: "sweep.key".into(),
        message: "the sweep subcommand needs sweep.key and sweep.values".into(),
    })?;
    let configs = values
        .iter()
        .map(|v| cfg.with_override(&key, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(configs
        .into_par_iter()
        .map(|(value, c)| {
            let dir = out.join(sweep_dir(&key, &value));
            let _ = fs::create_dir_all(&dir);
            let _ = fs::write(dir.join("config.txt"), c.to_text());
            let (exit_code, message) = match run(&c, &dir) {
                Ok(s) => (EXIT_OK, format!("{} Picard evaluations, {} diag rows", s.outcome.evaluations(), s.rows)),
                Err(e) => (e.exit_code(), e.to_string()),
            };
            SweepMember {
                value,
                dir,
                exit_code,
                message,
            }
        })
        .collect())
}

/// Manufactured-solution convergence on the config's mesh and its uniform
/// refinement; writes `mms.csv` and returns the observed order.
pub fn mms(cfg: &RunConfig, out: &Path) -> Result<studies::MmsStudy, String> {
    if cfg.scenario.kind != filmflow_core::ScenarioKind::MmsP2 {
        return Err(format!(
            "key `scenario`: the mms subcommand needs scenario = mms-p2, found {}",
            cfg.scenario.kind
        ));
    }
    let (nx, nz) = (cfg.scenario.nx, cfg.scenario.nz);
    let study = studies::mms_study_with(&cfg.scenario, &cfg.step, cfg.steps, &[(nx, nz), (2 * nx, 2 * nz)])?;
    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let mut text = String::from("nx,nz,h,l2_error\n");
    for ((mx, mz), e) in study.meshes.iter().zip(&study.errors) {
        let h = cfg.scenario.length / *mx as f64;
        text.push_str(&format!("{mx},{mz},{h:.16e},{e:.16e}\n"));
    }
    fs::write(out.join("mms.csv"), text).map_err(|e| e.to_string())?;
    Ok(study)
}
