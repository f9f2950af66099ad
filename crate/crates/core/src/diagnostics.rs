//! Checkable inequalities and consistency residuals on computed solutions.

use crate::constitutive::{eps_term_tangent, f_eta_tangent};
use crate::continuation::{space_integral, traj_norm, NormKind, Trajectory};
use crate::discretization::assembly::{dpsi_delta, psi_delta, viscous_point, wall_mismatch};
use crate::discretization::{assemble_friction, assemble_load, assemble_viscous, AssemblyError, FlowProblem};
use crate::stepper::{momentum_residual, DiscreteState, Smoothing, StepOperators};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Recovered traction against slip on the friction wall.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complementarity {
    /// `max |sigma_tau| / k` over points with `k > 0`.
    pub max_ratio: f64,
    /// `max | |sigma_tau| - k | / k` over slipping points (`|z| > 10 delta`).
    pub alignment_defect: f64,
    /// `max sigma_tau * z`; nonpositive when traction opposes slip.
    pub max_power: f64,
    pub slipping_points: usize,
    pub sticking_points: usize,
}

impl Complementarity {
    fn merge(self, o: Complementarity) -> Complementarity {
        Complementarity {
            max_ratio: self.max_ratio.max(o.max_ratio),
            alignment_defect: self.alignment_defect.max(o.alignment_defect),
            max_power: self.max_power.max(o.max_power),
            slipping_points: self.slipping_points + o.slipping_points,
            sticking_points: self.sticking_points + o.sticking_points,
        }
    }
}

/// Traction density `sigma_tau = -k psi'_delta(vbar_tau - s~)` at the wall
/// quadrature points of one state.
pub fn state_complementarity(problem: &FlowProblem, state: &DiscreteState, delta: f64) -> Complementarity {
    let mut out = Complementarity::default();
    for (_, _, _, _, k, z) in wall_mismatch(problem, &state.vbar, state.t) {
        if k <= 0.0 {
            continue;
        }
        let sigma = -k * dpsi_delta(z, delta);
        out.max_ratio = out.max_ratio.max(sigma.abs() / k);
        out.max_power = out.max_power.max(sigma * z);
        if z.abs() > 10.0 * delta {
            out.slipping_points += 1;
            out.alignment_defect = out.alignment_defect.max((sigma.abs() - k).abs() / k);
        } else {
            out.sticking_points += 1;
        }
    }
    out
}

/// Complementarity over every level of a trajectory but the initial one.
pub fn friction_complementarity(problem: &FlowProblem, traj: &Trajectory, delta: f64) -> Complementarity {
    traj.states[1..]
        .iter()
        .map(|s| state_complementarity(problem, s, delta))
        .fold(Complementarity::default(), Complementarity::merge)
}

/// Energy balance of one step tested with the new velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStep {
    /// `|v^n|^2/2 - |v^{n-1}|^2/2 + dt (<R_visc, v^n> + <R_fric, v^n> - L(v^n))`
    pub lhs: f64,
    /// Implicit-Euler numerical dissipation `|v^n - v^{n-1}|^2 / 2`.
    pub numerical_dissipation: f64,
    pub violation: f64,
    /// `|lhs + numerical_dissipation|`, zero for an exact solution.
    pub identity_defect: f64,
    pub scale: f64,
}

/// Evaluates the energy inequality of the step `prev -> state`.
pub fn energy_step(
    problem: &FlowProblem,
    ops: &StepOperators,
    prev: &DiscreteState,
    state: &DiscreteState,
    frozen: Option<&[f64]>,
    reg: Smoothing,
    dt: f64,
) -> Result<EnergyStep, AssemblyError> {
    let t = state.t;
    let v = &state.vbar;
    let (rv, _) = assemble_viscous(problem, v, frozen, reg.eps, reg.eta, t, false)?;
    let (rf, _) = assemble_friction(problem, v, reg.delta, t, false);
    let load = assemble_load(problem, t);
    let diff: Vec<f64> = v.iter().zip(&prev.vbar).map(|(a, b)| a - b).collect();
    let lhs = 0.5 * ops.mass.quad_form(v) - 0.5 * ops.mass.quad_form(&prev.vbar)
        + dt * (dot(&rv, v) + dot(&rf, v) - dot(&load, v));
    let numerical_dissipation = 0.5 * ops.mass.quad_form(&diff);
    let load_norm = norm(&problem.space.restrict(&load));
    let scale = dt * (1.0 + load_norm) * (1.0 + norm(v) + norm(&state.pressure));
    Ok(EnergyStep {
        lhs,
        numerical_dissipation,
        violation: lhs.max(0.0),
        identity_defect: (lhs + numerical_dissipation).abs(),
        scale,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub steps: Vec<EnergyStep>,
    /// True when every violation is below `tol * scale`.
    pub holds: bool,
}

/// Energy inequality along a trajectory computed at smoothing `eps`, `delta`
/// (each state carries its own `eta`).
#[allow(clippy::too_many_arguments)]
pub fn energy_report(
    problem: &FlowProblem,
    ops: &StepOperators,
    traj: &Trajectory,
    frozen: Option<&Trajectory>,
    eps: f64,
    delta: f64,
    tol: f64,
) -> Result<EnergyReport, AssemblyError> {
    let mut steps = Vec::with_capacity(traj.steps());
    for n in 1..traj.states.len() {
        let state = &traj.states[n];
        let reg = Smoothing {
            eps,
            eta: state.eta,
            delta,
        };
        let f = frozen.map(|f| f.states[n].vbar.as_slice());
        steps.push(energy_step(problem, ops, &traj.states[n - 1], state, f, reg, traj.dt)?);
    }
    let holds = steps.iter().all(|s| s.violation <= tol * s.scale);
    Ok(EnergyReport { steps, holds })
}

/// Per-step diagnostics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub newton_iters: usize,
    pub eta: f64,
    /// `|vbar|^2 / 2` in `L^2`.
    pub kinetic: f64,
    /// `int F_eta(D(vbar + v0 xi)) : D(vbar)`.
    pub dissipation: f64,
    /// `2 eps int (|D vbar|^2 + eta^2)^{(p'-2)/2} |D vbar|^2`.
    pub eps_dissipation: f64,
    /// `int_{Gamma0} k psi_delta(vbar_tau - s~)`.
    pub friction: f64,
    pub work: f64,
    pub div_residual: f64,
    pub pressure_mean: f64,
    pub momentum_residual: f64,
    pub max_traction_ratio: f64,
    pub alignment_defect: f64,
    pub energy_violation: f64,
    pub energy_scale: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 16] = [
        "step",
        "t",
        "newton_iters",
        "eta",
        "kinetic",
        "dissipation",
        "eps_dissipation",
        "friction",
        "work",
        "div_residual",
        "pressure_mean",
        "momentum_residual",
        "max_traction_ratio",
        "alignment_defect",
        "energy_violation",
        "energy_scale",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.t,
            self.eta,
            self.kinetic,
            self.dissipation,
            self.eps_dissipation,
            self.friction,
            self.work,
            self.div_residual,
            self.pressure_mean,
            self.momentum_residual,
            self.max_traction_ratio,
            self.alignment_defect,
            self.energy_violation,
            self.energy_scale,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Diagnostics of every step of a trajectory.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_records(
    problem: &FlowProblem,
    ops: &StepOperators,
    traj: &Trajectory,
    frozen: Option<&Trajectory>,
    eps: f64,
    delta: f64,
) -> Result<Vec<DiagnosticsRecord>, AssemblyError> {
    let space = &problem.space;
    let params = &problem.params;
    let mut out = Vec::with_capacity(traj.steps());
    for n in 1..traj.states.len() {
        let state = &traj.states[n];
        let prev = &traj.states[n - 1];
        let reg = Smoothing {
            eps,
            eta: state.eta,
            delta,
        };
        let f = frozen.map(|f| f.states[n].vbar.as_slice());
        let v = &state.vbar;

        let mut dissipation = 0.0;
        let mut eps_dissipation = 0.0;
        for c in 0..space.n_cells() {
            for qp in &space.cell(c).points {
                let pt = viscous_point(problem, c, qp, v, f, state.t);
                let main = f_eta_tangent(params, pt.temp, pt.vel, pt.total, reg.eta);
                let extra = eps_term_tangent(params.p_conj, reg.eps, pt.bar, reg.eta);
                dissipation += qp.weight * main.stress.ddot(&pt.bar);
                eps_dissipation += qp.weight * extra.stress.ddot(&pt.bar);
            }
        }
        let friction: f64 = wall_mismatch(problem, v, state.t)
            .into_iter()
            .map(|(_, _, _, w, k, z)| w * k * psi_delta(z, delta))
            .sum();
        let work = dot(&assemble_load(problem, state.t), v);
        let comp = state_complementarity(problem, state, delta);
        let energy = energy_step(problem, ops, prev, state, f, reg, traj.dt)?;
        let residual = pressure_consistency(problem, ops, prev, state, f, reg, traj.dt)?;
        out.push(DiagnosticsRecord {
            step: n,
            t: state.t,
            newton_iters: state.newton_iters,
            eta: state.eta,
            kinetic: 0.5 * ops.mass.quad_form(v),
            dissipation,
            eps_dissipation,
            friction,
            work,
            div_residual: norm(&ops.div.mul_vec(v)),
            pressure_mean: space.pressure_mean(&state.pressure),
            momentum_residual: residual,
            max_traction_ratio: comp.max_ratio,
            alignment_defect: comp.alignment_defect,
            energy_violation: energy.violation,
            energy_scale: energy.scale,
        });
    }
    Ok(out)
}

/// Norm of the momentum residual of an accepted step, pressure included.
pub fn pressure_consistency(
    problem: &FlowProblem,
    ops: &StepOperators,
    prev: &DiscreteState,
    state: &DiscreteState,
    frozen: Option<&[f64]>,
    reg: Smoothing,
    dt: f64,
) -> Result<f64, AssemblyError> {
    let r = momentum_residual(problem, ops, &prev.vbar, &state.vbar, &state.pressure, frozen, reg, state.t, dt)?;
    Ok(norm(&r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriRow {
    pub eps: f64,
    /// `|traj|_{L^p(0,T; W^{1,p})}`
    pub lp_w1p: f64,
    /// `eps^{1/p'} |traj|_{L^{p'}(0,T; W^{1,p'})}`
    pub eps_weighted: f64,
    /// `max_t |traj(t)|_{L^2}`
    pub max_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriTable {
    pub rows: Vec<AprioriRow>,
    /// Columns that grew by more than 10% over their first value.
    pub flags: Vec<String>,
}

impl AprioriTable {
    /// `(max - min) / max` of the `L^p(W^{1,p})` column.
    pub fn lp_variation(&self) -> f64 {
        let vals: Vec<f64> = self.rows.iter().map(|r| r.lp_w1p).collect();
        let max = vals.iter().cloned().fold(0.0, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            0.0
        } else {
            (max - min) / max
        }
    }
}

/// Bounds that should stay uniform along the eps schedule.
pub fn apriori_monitor(problem: &FlowProblem, runs: &[(f64, Trajectory)]) -> AprioriTable {
    let p = problem.params.p;
    let pc = problem.params.p_conj;
    let rows: Vec<AprioriRow> = runs
        .iter()
        .map(|(eps, traj)| AprioriRow {
            eps: *eps,
            lp_w1p: traj_norm(problem, traj, p, NormKind::LpW1p),
            eps_weighted: eps.powf(1.0 / pc) * traj_norm(problem, traj, pc, NormKind::LpW1p),
            max_l2: traj
                .states
                .iter()
                .map(|s| space_integral(problem, &s.vbar, 2.0, NormKind::LpLp).sqrt())
                .fold(0.0, f64::max),
        })
        .collect();
    let mut flags = Vec::new();
    if let Some(first) = rows.first() {
        type Column = (&'static str, fn(&AprioriRow) -> f64);
        let columns: [Column; 3] = [
            ("lp_w1p", |r| r.lp_w1p),
            ("eps_weighted", |r| r.eps_weighted),
            ("max_l2", |r| r.max_l2),
        ];
        for (name, get) in columns {
            let base = get(first);
            if let Some(r) = rows.iter().find(|r| get(r) > 1.1 * base) {
                flags.push(format!("{name} grew to {:.6e} at eps = {:e} (first {:.6e})", get(r), r.eps, base));
            }
        }
    }
    AprioriTable { rows, flags }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{FluidParams, ViscosityLaw};
    use crate::continuation::{time_loop, RegularizationConfig};
    use crate::discretization::{LiftField, ProblemData};
    use crate::geometry::ThinDomain;
    use crate::stepper::StepConfig;

    fn couette(k: f64) -> FlowProblem {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let data = ProblemData {
            threshold: k,
            wall_speed: 0.3,
            lift: LiftField::Couette {
                speed: 1.0,
                height: 1.0,
            },
            ..ProblemData::zero(1.0)
        };
        let params = FluidParams::new(1.5, ViscosityLaw::Constant(1.0)).unwrap();
        FlowProblem::new(&domain, 4, 2, data, params).unwrap()
    }

    #[test]
    fn zero_threshold_reports_zero_ratio() {
        let pr = couette(0.0);
        let ops = StepOperators::new(&pr);
        let reg = RegularizationConfig::default();
        let traj = time_loop(&pr, &ops, None, &reg, 1e-2, &StepConfig::new(0.1), 2, None).unwrap();
        let c = friction_complementarity(&pr, &traj, 1e-4);
        assert_eq!(c.max_ratio, 0.0);
        assert_eq!(c.alignment_defect, 0.0);
    }

    #[test]
    fn sticking_state_has_no_traction() {
        let pr = couette(0.5);
        let mut state = DiscreteState::zero(&pr);
        // vbar_tau = s - v0_tau xi = 0.3 - 1
        state.vbar = pr.space.interpolate(|_| [-0.7, 0.0]);
        let c = state_complementarity(&pr, &state, 1e-4);
        assert!(c.max_ratio < 1e-10);
        assert_eq!(c.slipping_points, 0);
    }

    #[test]
    fn energy_and_records_on_couette() {
        let pr = couette(0.05);
        let ops = StepOperators::new(&pr);
        let reg = RegularizationConfig::default();
        let cfg = StepConfig::new(0.1);
        let traj = time_loop(&pr, &ops, None, &reg, 1e-2, &cfg, 3, None).unwrap();
        let delta = reg.delta_for(&pr);
        let rep = energy_report(&pr, &ops, &traj, None, 1e-2, delta, 10.0 * cfg.newton_tol).unwrap();
        assert!(rep.holds);
        for s in &rep.steps {
            assert!(s.identity_defect <= 10.0 * cfg.newton_tol * s.scale);
            assert!(s.numerical_dissipation >= 0.0);
        }
        let recs = trajectory_records(&pr, &ops, &traj, None, 1e-2, delta).unwrap();
        assert_eq!(recs.len(), 3);
        for r in &recs {
            assert!(r.is_finite());
            assert!(r.max_traction_ratio < 1.0);
            assert!(r.eps_dissipation >= 0.0);
            assert!(r.pressure_mean.abs() <= 1e-12);
            assert!(r.momentum_residual <= cfg.newton_tol);
        }
    }

    #[test]
    fn constant_pressure_shift_leaves_residual() {
        let pr = couette(0.05);
        let ops = StepOperators::new(&pr);
        let reg = RegularizationConfig::default();
        let cfg = StepConfig::new(0.1);
        let traj = time_loop(&pr, &ops, None, &reg, 1e-2, &cfg, 1, None).unwrap();
        let s = Smoothing {
            eps: 1e-2,
            eta: traj.states[1].eta,
            delta: reg.delta_for(&pr),
        };
        let a = pressure_consistency(&pr, &ops, &traj.states[0], &traj.states[1], None, s, cfg.dt).unwrap();
        let mut shifted = traj.states[1].clone();
        for q in &mut shifted.pressure {
            *q += 3.0;
        }
        let mean = pr.space.pressure_mean(&shifted.pressure);
        for q in &mut shifted.pressure {
            *q -= mean;
        }
        let b = pressure_consistency(&pr, &ops, &traj.states[0], &shifted, None, s, cfg.dt).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn monitor_on_single_and_zero_runs() {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let params = FluidParams::new(1.5, ViscosityLaw::Constant(1.0)).unwrap();
        let pr = FlowProblem::new(&domain, 2, 1, ProblemData::zero(1.0), params).unwrap();
        let zero = Trajectory::zero(&pr, 0.5, 2);
        let table = apriori_monitor(&pr, &[(0.1, zero.clone())]);
        assert_eq!(table.rows.len(), 1);
        assert!(table.flags.is_empty());
        let table = apriori_monitor(&pr, &[(0.1, zero.clone()), (0.01, zero)]);
        assert!(table.rows.iter().all(|r| r.lp_w1p == 0.0 && r.max_l2 == 0.0));
    }
}
