//! The `run` subcommand: Picard iteration plus file outputs.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use filmflow_core::continuation::{ContinuationError, EpsStatus, PicardError};
use filmflow_core::diagnostics::{
    apriori_monitor, energy_report, friction_complementarity, trajectory_records, DiagnosticsRecord,
};
use filmflow_core::discretization::AssemblyError;
use filmflow_core::{picard_lambda, FlowProblem, PicardOutcome, StepOperators, Trajectory};
use thiserror::Error;

use crate::config::{RunConfig, KEYS};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot build the problem: {0}")]
    Problem(#[from] filmflow_core::scenario::ScenarioError),
    #[error("Picard iteration did not converge after {evaluations} evaluations; distances {distances:?}")]
    NotConverged { evaluations: usize, distances: Vec<f64> },
    #[error(transparent)]
    Step(#[from] ContinuationError),
    #[error("diagnostics failed: {0}")]
    Diagnostics(#[from] AssemblyError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Problem(_) => 1,
            RunError::NotConverged { .. } => 2,
            RunError::Step(_) | RunError::Diagnostics(_) => 3,
            RunError::Io { .. } => 4,
        }
    }
}

/// Meaning of every `diag.csv` column.
pub const CSV_COLUMNS: [(&str, &str); 18] = [
    ("picard_iter", "Picard iteration, starting at 1"),
    ("eps", "vanishing-viscosity level of the row"),
    ("step", "time level n"),
    ("t", "time t_n"),
    ("newton_iters", "Newton iterations of the step"),
    ("eta", "strain smoothing used by the step"),
    ("kinetic", "|v_n|^2 / 2 in the mass norm"),
    ("dissipation", "int F_eta(D v_n) : D v_n"),
    ("eps_dissipation", "int eps-term(D v_n) : D v_n"),
    ("friction", "int_bottom k psi_delta(v_tau - s~)"),
    ("work", "load applied to v_n"),
    ("div_residual", "|B v_n|"),
    ("pressure_mean", "mean of pi_n"),
    ("momentum_residual", "norm of the momentum residual at (v_n, pi_n)"),
    ("max_traction_ratio", "max |sigma_tau| / k on the bottom wall"),
    ("alignment_defect", "max ||sigma_tau| - k| / k at slipping points"),
    ("energy_violation", "positive part of the discrete energy balance"),
    ("energy_scale", "scale of the energy balance"),
];

#[derive(Debug)]
pub struct RunSummary {
    pub outcome: PicardOutcome,
    pub rows: usize,
    pub written: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Runs the Picard iteration and writes every output into `out`.
///
/// Outputs are also written when the iteration fails to converge, so the
/// distances can be inspected; the error is returned afterwards.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunSummary, RunError> {
    let problem = cfg.scenario.build()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let (outcome, failure) = match picard_lambda(&problem, &cfg.reg, &cfg.step, cfg.steps) {
        Ok(o) => (o, None),
        Err(PicardError::NotConverged { outcome }) => {
            let err = RunError::NotConverged {
                evaluations: outcome.evaluations(),
                distances: outcome.distances(),
            };
            (*outcome, Some(err))
        }
        Err(PicardError::Continuation(e)) => return Err(e.into()),
    };
    let ops = StepOperators::new(&problem);
    let mut written = Vec::new();

    let mesh_path = out.join("mesh.txt");
    let mut w = create(&mesh_path)?;
    problem.space.mesh.write_dump(&mut w).map_err(io_err(&mesh_path))?;
    w.flush().map_err(io_err(&mesh_path))?;
    written.push(mesh_path);

    let diag_path = out.join("diag.csv");
    let rows = write_diag(&problem, &ops, cfg, &outcome, &diag_path)?;
    written.push(diag_path);

    let traj = outcome.trajectory();
    for k in cfg.output.selected(cfg.steps) {
        let path = out.join(format!("fields_{k}.vtk"));
        let mut w = create(&path)?;
        write_vtk(&problem, traj, k, &mut w).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    let report_path = out.join("report.txt");
    let text = report(&problem, &ops, cfg, &outcome)?;
    fs::write(&report_path, text).map_err(io_err(&report_path))?;
    written.push(report_path);

    match failure {
        Some(err) => Err(err),
        None => Ok(RunSummary {
            outcome,
            rows,
            written,
        }),
    }
}

fn frozen_of(outcome: &PicardOutcome, k: usize) -> Option<&Trajectory> {
    k.checked_sub(1)
        .map(|j| outcome.iterates[j].continuation.final_trajectory())
}

fn write_diag(
    problem: &FlowProblem,
    ops: &StepOperators,
    cfg: &RunConfig,
    outcome: &PicardOutcome,
    path: &Path,
) -> Result<usize, RunError> {
    let delta = cfg.reg.delta_for(problem);
    let mut w = create(path)?;
    let header: Vec<&str> = CSV_COLUMNS.iter().map(|(c, _)| *c).collect();
    writeln!(w, "{}", header.join(",")).map_err(io_err(path))?;
    let mut rows = 0;
    for (k, it) in outcome.iterates.iter().enumerate() {
        // the first iterate freezes the zero trajectory
        let zero;
        let frozen = match frozen_of(outcome, k) {
            Some(f) => f,
            None => {
                zero = Trajectory::zero(problem, cfg.step.dt, cfg.steps);
                &zero
            }
        };
        for (eps, traj) in &it.continuation.runs {
            for r in trajectory_records(problem, ops, traj, Some(frozen), *eps, delta)? {
                writeln!(w, "{}", csv_row(k + 1, *eps, &r)).map_err(io_err(path))?;
                rows += 1;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(rows)
}

fn csv_row(picard_iter: usize, eps: f64, r: &DiagnosticsRecord) -> String {
    let mut s = format!("{picard_iter},{eps:.16e},{},{:.16e},{}", r.step, r.t, r.newton_iters);
    for v in &r.values()[1..] {
        let _ = write!(s, ",{v:.16e}");
    }
    s
}

/// Legacy ASCII VTK with quadratic triangles carrying the physical velocity
/// `vbar + v0 xi` and the pressure (interpolated linearly to midpoints).
pub fn write_vtk<W: Write>(problem: &FlowProblem, traj: &Trajectory, step: usize, mut w: W) -> std::io::Result<()> {
    let space = &problem.space;
    let state = &traj.states[step];
    let vel = problem.physical_velocity(&state.vbar, state.t);
    let n = space.n_nodes();
    let mut pressure = vec![0.0; n];
    pressure[..space.n_pressure()].copy_from_slice(&state.pressure);
    for cn in &space.cell_nodes {
        for (m, (a, b)) in [(3, (0, 1)), (4, (1, 2)), (5, (2, 0))] {
            pressure[cn[m]] = 0.5 * (state.pressure[cn[a]] + state.pressure[cn[b]]);
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "filmflow step {step} t = {:.16e}", state.t)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {n} double")?;
    for p in &space.nodes {
        writeln!(w, "{:.16e} {:.16e} 0", p[0], p[1])?;
    }
    let nc = space.cell_nodes.len();
    writeln!(w, "CELLS {nc} {}", 7 * nc)?;
    for cn in &space.cell_nodes {
        writeln!(w, "6 {} {} {} {} {} {}", cn[0], cn[1], cn[2], cn[3], cn[4], cn[5])?;
    }
    writeln!(w, "CELL_TYPES {nc}")?;
    for _ in 0..nc {
        writeln!(w, "22")?;
    }
    writeln!(w, "POINT_DATA {n}")?;
    writeln!(w, "VECTORS velocity double")?;
    for i in 0..n {
        writeln!(w, "{:.16e} {:.16e} 0", vel[2 * i], vel[2 * i + 1])?;
    }
    writeln!(w, "SCALARS pressure double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in &pressure {
        writeln!(w, "{v:.16e}")?;
    }
    Ok(())
}

fn report(
    problem: &FlowProblem,
    ops: &StepOperators,
    cfg: &RunConfig,
    outcome: &PicardOutcome,
) -> Result<String, RunError> {
    let mut s = String::new();
    let _ = writeln!(s, "filmflow run report");
    let _ = writeln!(s);
    let _ = writeln!(s, "diag.csv columns (floats printed with 17 significant digits):");
    for (c, d) in CSV_COLUMNS {
        let _ = writeln!(s, "  {c:<20} {d}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "configuration:");
    let _ = writeln!(s, "  scenario = {}", cfg.scenario.kind);
    for line in cfg.to_text().lines().filter(|l| !l.starts_with("scenario ")) {
        let _ = writeln!(s, "  {line}");
    }
    let _ = writeln!(s, "  (unset keys use scenario defaults; {} keys recognised)", KEYS.len());
    let _ = writeln!(
        s,
        "  mesh {}x{}, {} free velocity dofs, {} pressure dofs",
        cfg.scenario.nx,
        cfg.scenario.nz,
        problem.space.n_free(),
        problem.space.n_pressure()
    );
    let _ = writeln!(s, "  dt = {:.16e}, steps = {}, deterministic = {}", cfg.step.dt, cfg.steps, cfg.deterministic);
    let delta = cfg.reg.delta_for(problem);
    let _ = writeln!(s, "  eta0 = {:.6e}, delta = {:.6e}", cfg.reg.initial_eta(problem), delta);
    let _ = writeln!(s);

    let _ = writeln!(s, "Picard iteration:");
    let _ = writeln!(s, "  converged = {}", outcome.converged);
    let _ = writeln!(s, "  evaluations = {}", outcome.evaluations());
    match outcome.fixed_point_index() {
        Some(i) => {
            let _ = writeln!(s, "  fixed point reached at iterate {i} (the next evaluation reproduced it)");
        }
        None => {
            let _ = writeln!(s, "  fixed point not reached");
        }
    }
    let d = outcome.distances();
    let monotone = d.windows(2).all(|w| w[1] <= w[0]);
    let _ = writeln!(s, "  distances monotone = {monotone}");
    for (k, v) in d.iter().enumerate() {
        let _ = writeln!(s, "  iter {:>2}  distance {v:.16e}", k + 1);
    }
    let _ = writeln!(s);

    for (k, it) in outcome.iterates.iter().enumerate() {
        let c = &it.continuation;
        let status = match c.status {
            EpsStatus::Stabilized => "stabilized".to_string(),
            EpsStatus::NotStabilized { last } => format!("not stabilized (last distance {last:.6e})"),
        };
        let _ = writeln!(s, "eps continuation, Picard iteration {}: {status}", k + 1);
        for (i, (pair, dist)) in c.runs.windows(2).zip(&c.distances).enumerate() {
            let _ = writeln!(s, "  d_{} = {dist:.16e}  (eps {:e} -> {:e})", i + 1, pair[0].0, pair[1].0);
        }
    }
    let _ = writeln!(s);

    let last = outcome.iterates.last().expect("at least one iterate");
    let table = apriori_monitor(problem, &last.continuation.runs);
    let _ = writeln!(s, "a priori bounds along the eps schedule (final Picard iteration):");
    let _ = writeln!(s, "  {:>12} {:>24} {:>24} {:>24}", "eps", "Lp(W1p)", "eps^(1/p') Lp'(W1p')", "max L2");
    for r in &table.rows {
        let _ = writeln!(s, "  {:>12.4e} {:>24.16e} {:>24.16e} {:>24.16e}", r.eps, r.lp_w1p, r.eps_weighted, r.max_l2);
    }
    let _ = writeln!(s, "  Lp(W1p) relative variation = {:.6e}", table.lp_variation());
    for f in &table.flags {
        let _ = writeln!(s, "  flag: {f}");
    }
    let _ = writeln!(s);

    let (eps, traj) = last.continuation.runs.last().expect("non-empty schedule");
    let frozen = frozen_of(outcome, outcome.iterates.len() - 1);
    let zero = Trajectory::zero(problem, cfg.step.dt, cfg.steps);
    let frozen = frozen.unwrap_or(&zero);
    let comp = friction_complementarity(problem, traj, delta);
    let _ = writeln!(s, "friction complementarity (final trajectory):");
    let _ = writeln!(s, "  max traction ratio = {:.6e}", comp.max_ratio);
    let _ = writeln!(s, "  alignment defect = {:.6e}", comp.alignment_defect);
    let _ = writeln!(s, "  max traction power = {:.6e}", comp.max_power);
    let _ = writeln!(s, "  slipping / sticking points = {} / {}", comp.slipping_points, comp.sticking_points);
    let tol = 10.0 * cfg.step.newton_tol;
    let energy = energy_report(problem, ops, traj, Some(frozen), *eps, delta, tol)?;
    let worst = energy
        .steps
        .iter()
        .map(|e| e.violation / e.scale)
        .fold(0.0, f64::max);
    let _ = writeln!(s, "energy inequality (final trajectory):");
    let _ = writeln!(s, "  holds within {tol:e} * scale = {}", energy.holds);
    let _ = writeln!(s, "  worst violation / scale = {worst:.6e}");
    let _ = writeln!(s, "  sup norm of the trajectory = {:.6e}", traj.sup_norm());
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_extend_record_columns() {
        let names: Vec<&str> = CSV_COLUMNS[2..].iter().map(|(c, _)| *c).collect();
        assert_eq!(names, DiagnosticsRecord::COLUMNS);
    }

    #[test]
    fn csv_rows_use_seventeen_digits() {
        let r = DiagnosticsRecord {
            step: 3,
            t: 0.3,
            newton_iters: 2,
            eta: 1e-8,
            kinetic: 1.0 / 3.0,
            dissipation: 0.0,
            eps_dissipation: 0.0,
            friction: 0.0,
            work: 0.0,
            div_residual: 0.0,
            pressure_mean: 0.0,
            momentum_residual: 0.0,
            max_traction_ratio: 0.0,
            alignment_defect: 0.0,
            energy_violation: 0.0,
            energy_scale: 1.0,
        };
        let row = csv_row(1, 0.1, &r);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), CSV_COLUMNS.len());
        assert_eq!(fields[2], "3");
        assert_eq!(fields[4], "2");
        assert_eq!(fields[6], "3.3333333333333331e-1");
        assert_eq!(fields[6].parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
