//! Outer loops: time marching, the vanishing-viscosity schedule and the
//! Picard iteration on the frozen velocity argument of the viscosity.

use thiserror::Error;

use crate::discretization::FlowProblem;
use crate::stepper::{
    implicit_euler_step, DiscreteState, Smoothing, StepConfig, StepError, StepOperators,
};

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("eps schedule must be non-empty, positive and strictly decreasing")]
    InvalidSchedule,
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("trajectories have different grids ({0} vs {1} levels)")]
    GridMismatch(usize, usize),
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: StepError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationConfig {
    pub eps_schedule: Vec<f64>,
    /// Initial strain smoothing; `None` picks `1e-8` times the strain scale.
    pub eta: Option<f64>,
    pub eta_floor: f64,
    /// Friction smoothing; `None` picks `1e-4` times the velocity scale.
    pub delta: Option<f64>,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            eps_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            eta: None,
            eta_floor: 1e-12,
            delta: None,
            picard_tol: 1e-8,
            picard_max: 20,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<(), ContinuationError> {
        let s = &self.eps_schedule;
        if s.is_empty() || s.iter().any(|&e| !(e > 0.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ContinuationError::InvalidSchedule);
        }
        for (name, value) in [
            ("eta_floor", self.eta_floor),
            ("picard_tol", self.picard_tol),
            ("eta", self.eta.unwrap_or(1.0)),
            ("delta", self.delta.unwrap_or(1.0)),
        ] {
            if !(value > 0.0) {
                return Err(ContinuationError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    pub fn initial_eta(&self, problem: &FlowProblem) -> f64 {
        self.eta.unwrap_or_else(|| {
            let strain = problem.data.velocity_scale() / problem.domain.h_min();
            (1e-8 * strain).max(self.eta_floor)
        })
    }

    pub fn delta_for(&self, problem: &FlowProblem) -> f64 {
        self.delta
            .unwrap_or_else(|| 1e-4 * problem.data.velocity_scale())
    }
}

/// States at `t_0 = 0 < t_1 < ... < t_N` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DiscreteState>,
}

impl Trajectory {
    pub fn zero(problem: &FlowProblem, dt: f64, steps: usize) -> Self {
        let states = (0..=steps)
            .map(|n| DiscreteState {
                t: n as f64 * dt,
                ..DiscreteState::zero(problem)
            })
            .collect();
        Self { dt, states }
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &DiscreteState {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn sup_norm(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|s| s.vbar.iter().chain(&s.pressure))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Marches `steps` implicit-Euler steps from the zero state at smoothing
/// level `eps`. `warm` supplies per-level Newton initial guesses.
#[allow(clippy::too_many_arguments)]
pub fn time_loop(
    problem: &FlowProblem,
    ops: &StepOperators,
    frozen: Option<&Trajectory>,
    reg: &RegularizationConfig,
    eps: f64,
    cfg: &StepConfig,
    steps: usize,
    warm: Option<&Trajectory>,
) -> Result<Trajectory, ContinuationError> {
    let delta = reg.delta_for(problem);
    let mut eta = reg.initial_eta(problem);
    let mut traj = Trajectory {
        dt: cfg.dt,
        states: vec![DiscreteState::zero(problem)],
    };
    for n in 1..=steps {
        let prev = traj.last();
        let frozen_n = frozen.map(|f| f.states[n].vbar.as_slice());
        let guess = warm.map(|w| &w.states[n]);
        let smoothing = Smoothing { eps, eta, delta };
        let state = implicit_euler_step(problem, ops, prev, frozen_n, smoothing, cfg, guess)
            .map_err(|source| ContinuationError::Step { step: n, source })?;
        if state.newton_iters < 5 {
            eta = (eta / 10.0).max(reg.eta_floor);
        }
        traj.states.push(state);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpsStatus {
    Stabilized,
    /// Last distance along the schedule stayed above `100 * picard_tol`.
    NotStabilized { last: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsContinuation {
    pub runs: Vec<(f64, Trajectory)>,
    /// `d_i = dist(traj_{eps_i}, traj_{eps_{i+1}})` in `L^p(0,T; W^{1,p})`.
    pub distances: Vec<f64>,
    pub status: EpsStatus,
}

impl EpsContinuation {
    pub fn final_trajectory(&self) -> &Trajectory {
        &self.runs.last().expect("schedule is non-empty").1
    }
}

/// Runs the whole eps schedule with the viscosity's velocity argument frozen
/// at `frozen`. Each run warm-starts Newton from the previous run.
pub fn solve_p_u(
    problem: &FlowProblem,
    ops: &StepOperators,
    frozen: Option<&Trajectory>,
    reg: &RegularizationConfig,
    cfg: &StepConfig,
    steps: usize,
) -> Result<EpsContinuation, ContinuationError> {
    reg.validate()?;
    let mut runs: Vec<(f64, Trajectory)> = Vec::with_capacity(reg.eps_schedule.len());
    let mut distances = Vec::new();
    for &eps in &reg.eps_schedule {
        let warm = runs.last().map(|(_, t)| t);
        let traj = time_loop(problem, ops, frozen, reg, eps, cfg, steps, warm)?;
        if let Some(w) = warm {
            distances.push(traj_distance(problem, w, &traj, problem.params.p, NormKind::LpW1p)?);
        }
        runs.push((eps, traj));
    }
    let status = match distances.last() {
        Some(&d) if d > 100.0 * reg.picard_tol => EpsStatus::NotStabilized { last: d },
        _ => EpsStatus::Stabilized,
    };
    Ok(EpsContinuation {
        runs,
        distances,
        status,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardIterate {
    pub continuation: EpsContinuation,
    /// `L^p(0,T; L^p)` distance to the previous iterate (the first is
    /// measured against the zero trajectory).
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub iterates: Vec<PicardIterate>,
    pub converged: bool,
}

impl PicardOutcome {
    pub fn distances(&self) -> Vec<f64> {
        self.iterates.iter().map(|i| i.distance).collect()
    }

    /// Number of evaluations of the fixed-point map.
    pub fn evaluations(&self) -> usize {
        self.iterates.len()
    }

    /// Index of the first iterate reproduced by the map within tolerance.
    pub fn fixed_point_index(&self) -> Option<usize> {
        self.converged.then(|| self.iterates.len() - 1)
    }

    pub fn trajectory(&self) -> &Trajectory {
        self.iterates
            .last()
            .expect("at least one iterate")
            .continuation
            .final_trajectory()
    }
}

#[derive(Debug, Error)]
pub enum PicardError {
    #[error("Picard iteration did not converge in {} iterations; distances {:?}", .outcome.iterates.len(), .outcome.distances())]
    NotConverged { outcome: Box<PicardOutcome> },
    #[error(transparent)]
    Continuation(#[from] ContinuationError),
}

/// Fixed-point iteration `u^{k+1} = Lambda(u^k)` from `u^0 = 0`.
pub fn picard_lambda(
    problem: &FlowProblem,
    reg: &RegularizationConfig,
    cfg: &StepConfig,
    steps: usize,
) -> Result<PicardOutcome, PicardError> {
    reg.validate()?;
    let ops = StepOperators::new(problem);
    let p = problem.params.p;
    let zero = Trajectory::zero(problem, cfg.dt, steps);
    let mut iterates: Vec<PicardIterate> = Vec::new();
    for _ in 0..reg.picard_max {
        let frozen = iterates
            .last()
            .map(|i| i.continuation.final_trajectory())
            .unwrap_or(&zero);
        let continuation = solve_p_u(problem, &ops, Some(frozen), reg, cfg, steps)?;
        let new = continuation.final_trajectory();
        let distance = traj_distance(problem, new, frozen, p, NormKind::LpLp)?;
        let size = traj_norm(problem, new, p, NormKind::LpLp);
        iterates.push(PicardIterate {
            continuation,
            distance,
        });
        if distance <= reg.picard_tol * (1.0 + size) {
            return Ok(PicardOutcome {
                iterates,
                converged: true,
            });
        }
    }
    Err(PicardError::NotConverged {
        outcome: Box::new(PicardOutcome {
            iterates,
            converged: false,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `L^q(0,T; L^q(Omega))`
    LpLp,
    /// `L^q(0,T; W^{1,q}(Omega))`, measured by the gradient.
    LpW1p,
}

/// `int_Omega |v|^q` or `int_Omega |grad v|^q` of a full velocity vector.
pub fn space_integral(problem: &FlowProblem, v: &[f64], q: f64, kind: NormKind) -> f64 {
    let space = &problem.space;
    let mut acc = 0.0;
    for c in 0..space.n_cells() {
        for qp in &space.cell(c).points {
            let m = match kind {
                NormKind::LpLp => {
                    let u = space.value_at(c, qp, v);
                    u[0].hypot(u[1])
                }
                NormKind::LpW1p => {
                    let g = space.grad_at(c, qp, v);
                    (g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1])
                        .sqrt()
                }
            };
            acc += qp.weight * m.powf(q);
        }
    }
    acc
}

/// Rectangle rule at right endpoints: `(sum_n dt |v^n|^q)^{1/q}`.
pub fn traj_norm(problem: &FlowProblem, a: &Trajectory, q: f64, kind: NormKind) -> f64 {
    a.states[1..]
        .iter()
        .map(|s| a.dt * space_integral(problem, &s.vbar, q, kind))
        .sum::<f64>()
        .powf(1.0 / q)
}

pub fn traj_distance(
    problem: &FlowProblem,
    a: &Trajectory,
    b: &Trajectory,
    q: f64,
    kind: NormKind,
) -> Result<f64, ContinuationError> {
    if a.states.len() != b.states.len() || a.dt != b.dt {
        return Err(ContinuationError::GridMismatch(a.states.len(), b.states.len()));
    }
    let total: f64 = a.states[1..]
        .iter()
        .zip(&b.states[1..])
        .map(|(x, y)| {
            let diff: Vec<f64> = x.vbar.iter().zip(&y.vbar).map(|(u, v)| u - v).collect();
            a.dt * space_integral(problem, &diff, q, kind)
        })
        .sum();
    Ok(total.powf(1.0 / q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{FluidParams, ViscosityLaw};
    use crate::discretization::ProblemData;
    use crate::geometry::ThinDomain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem() -> FlowProblem {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let params = FluidParams::new(1.5, ViscosityLaw::Constant(1.0)).unwrap();
        FlowProblem::new(&domain, 2, 2, ProblemData::zero(1.0), params).unwrap()
    }

    fn random_traj(pr: &FlowProblem, rng: &mut ChaCha8Rng) -> Trajectory {
        let mut t = Trajectory::zero(pr, 0.25, 4);
        for s in &mut t.states[1..] {
            let free: Vec<f64> = (0..pr.space.n_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.vbar = pr.space.extend(&free);
        }
        t
    }

    #[test]
    fn schedule_validation() {
        let mut reg = RegularizationConfig::default();
        assert!(reg.validate().is_ok());
        reg.eps_schedule = vec![1e-2, 1e-1];
        assert!(reg.validate().is_err());
        reg.eps_schedule = vec![];
        assert!(reg.validate().is_err());
        reg.eps_schedule = vec![1e-1];
        reg.picard_tol = 0.0;
        assert!(reg.validate().is_err());
    }

    #[test]
    fn distance_properties() {
        let pr = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_traj(&pr, &mut rng);
        assert_eq!(traj_distance(&pr, &a, &a, 1.5, NormKind::LpLp).unwrap(), 0.0);

        // constant-in-time field: T^{1/p} |w|
        let mut c = a.clone();
        for n in 2..c.states.len() {
            c.states[n].vbar = c.states[1].vbar.clone();
        }
        let zero = Trajectory::zero(&pr, 0.25, 4);
        let w = space_integral(&pr, &c.states[1].vbar, 1.5, NormKind::LpW1p).powf(1.0 / 1.5);
        let d = traj_distance(&pr, &c, &zero, 1.5, NormKind::LpW1p).unwrap();
        assert!((d - w).abs() < 1e-12 * w);

        for _ in 0..100 {
            let (x, y, z) = (random_traj(&pr, &mut rng), random_traj(&pr, &mut rng), random_traj(&pr, &mut rng));
            for kind in [NormKind::LpLp, NormKind::LpW1p] {
                let xy = traj_distance(&pr, &x, &y, 1.5, kind).unwrap();
                let yz = traj_distance(&pr, &y, &z, 1.5, kind).unwrap();
                let xz = traj_distance(&pr, &x, &z, 1.5, kind).unwrap();
                assert!(xz <= xy + yz + 1e-12);
            }
        }
        let short = Trajectory::zero(&pr, 0.25, 3);
        assert!(traj_distance(&pr, &a, &short, 1.5, NormKind::LpLp).is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let pr = problem();
        let reg = RegularizationConfig::default();
        let out = picard_lambda(&pr, &reg, &StepConfig::new(0.25), 4).unwrap();
        assert_eq!(out.evaluations(), 1);
        assert_eq!(out.distances(), vec![0.0]);
        for it in &out.iterates {
            assert!(it.continuation.distances.iter().all(|&d| d == 0.0));
            for (_, t) in &it.continuation.runs {
                assert_eq!(t.sup_norm(), 0.0);
            }
        }
    }
}
