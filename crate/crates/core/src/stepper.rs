//! One implicit-Euler step: damped Newton on the saddle system
//!
//! ```text
//! M (v - v_prev) / dt + R_visc(v) + R_fric(v) + B^T pi = L
//! B v + w lambda = 0,   w^T pi = 0
//! ```
//!
//! on the free velocity dofs. `w` holds the integrals of the pressure basis,
//! so the last row pins the pressure mean; `lambda` vanishes at the solution.

use thiserror::Error;

use crate::constitutive::potential_phi_eta;
use crate::discretization::assembly::{psi_delta, viscous_point, wall_mismatch};
use crate::discretization::{
    assemble_divergence, assemble_friction, assemble_load, assemble_mass, assemble_viscous,
    AssemblyError, FlowProblem,
};
use crate::sparse::{solve_sparse, CsrMatrix, LinearSolveError};

#[derive(Debug, Error)]
pub enum StepError {
    #[error("Newton stalled at t = {t}: residual {residual:.3e} after {iterations} iterations")]
    NewtonDiverged {
        t: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("linear solve failed at t = {t}: {source}")]
    LinearSolveFailed {
        t: f64,
        #[source]
        source: LinearSolveError,
    },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    /// Relative tolerance on the KKT residual, scaled by `1 + |L|`.
    pub newton_tol: f64,
    pub newton_max: usize,
    pub backtrack: f64,
    pub max_halvings: usize,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            newton_tol: 1e-10,
            newton_max: 50,
            backtrack: 0.5,
            max_halvings: 20,
        }
    }
}

/// Regularization levels active during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing {
    pub eps: f64,
    pub eta: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteState {
    pub t: f64,
    /// Full velocity vector of the shifted unknown; constrained entries are 0.
    pub vbar: Vec<f64>,
    pub pressure: Vec<f64>,
    pub newton_iters: usize,
    /// Strain smoothing used to compute this state.
    pub eta: f64,
    pub residual: f64,
}

impl DiscreteState {
    pub fn zero(problem: &FlowProblem) -> Self {
        Self {
            t: 0.0,
            vbar: vec![0.0; problem.space.n_velocity()],
            pressure: vec![0.0; problem.space.n_pressure()],
            newton_iters: 0,
            eta: 0.0,
            residual: 0.0,
        }
    }
}

/// Operators that do not change between steps.
#[derive(Debug, Clone)]
pub struct StepOperators {
    pub mass: CsrMatrix,
    pub div: CsrMatrix,
    pub pressure_weights: Vec<f64>,
    div_free: CsrMatrix,
}

impl StepOperators {
    pub fn new(problem: &FlowProblem) -> Self {
        let space = &problem.space;
        let mass = assemble_mass(space);
        let div = assemble_divergence(space);
        let rows: Vec<Option<usize>> = (0..space.n_pressure()).map(Some).collect();
        let div_free = div.restrict(&rows, &space.dof_map, space.n_pressure(), space.n_free());
        Self {
            mass,
            div,
            pressure_weights: space.pressure_weights(),
            div_free,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Momentum residual `M (v - v_prev)/dt + R_visc + R_fric + B^T pi - L` on
/// the free dofs.
#[allow(clippy::too_many_arguments)]
pub fn momentum_residual(
    problem: &FlowProblem,
    ops: &StepOperators,
    prev: &[f64],
    vbar: &[f64],
    pressure: &[f64],
    frozen: Option<&[f64]>,
    reg: Smoothing,
    t: f64,
    dt: f64,
) -> Result<Vec<f64>, AssemblyError> {
    let space = &problem.space;
    let diff: Vec<f64> = vbar.iter().zip(prev).map(|(a, b)| a - b).collect();
    let mdiff = ops.mass.mul_vec(&diff);
    let (rv, _) = assemble_viscous(problem, vbar, frozen, reg.eps, reg.eta, t, false)?;
    let (rf, _) = assemble_friction(problem, vbar, reg.delta, t, false);
    let load = assemble_load(problem, t);
    let bt = ops.div.tr_mul_vec(pressure);
    Ok(space
        .free_dofs
        .iter()
        .map(|&d| mdiff[d] / dt + rv[d] + rf[d] + bt[d] - load[d])
        .collect())
}

type Triplets = Vec<(usize, usize, f64)>;

struct Kkt<'a> {
    problem: &'a FlowProblem,
    ops: &'a StepOperators,
    prev: &'a [f64],
    frozen: Option<&'a [f64]>,
    reg: Smoothing,
    t: f64,
    dt: f64,
    load: Vec<f64>,
}

impl Kkt<'_> {
    fn nf(&self) -> usize {
        self.problem.space.n_free()
    }

    fn np(&self) -> usize {
        self.problem.space.n_pressure()
    }

    fn residual(
        &self,
        x: &[f64],
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<Triplets>), AssemblyError> {
        let space = &self.problem.space;
        let (nf, np) = (self.nf(), self.np());
        let vbar = space.extend(&x[..nf]);
        let pressure = &x[nf..nf + np];
        let lambda = x[nf + np];

        let diff: Vec<f64> = vbar.iter().zip(self.prev).map(|(a, b)| a - b).collect();
        let mdiff = self.ops.mass.mul_vec(&diff);
        let (rv, kv) = assemble_viscous(
            self.problem,
            &vbar,
            self.frozen,
            self.reg.eps,
            self.reg.eta,
            self.t,
            with_jacobian,
        )?;
        let (rf, kf) = assemble_friction(self.problem, &vbar, self.reg.delta, self.t, with_jacobian);
        let bt = self.ops.div_free.tr_mul_vec(pressure);

        let mut res = Vec::with_capacity(nf + np + 1);
        for (i, &d) in space.free_dofs.iter().enumerate() {
            res.push(mdiff[d] / self.dt + rv[d] + rf[d] + bt[i] - self.load[d]);
        }
        let bv = self.ops.div_free.mul_vec(&x[..nf]);
        for k in 0..np {
            res.push(bv[k] + self.ops.pressure_weights[k] * lambda);
        }
        res.push(dot(&self.ops.pressure_weights, pressure));

        let jac = match (kv, kf) {
            (Some(kv), Some(kf)) => {
                let map = &space.dof_map;
                let mut entries = Vec::new();
                for (m, scale) in [(&self.ops.mass, 1.0 / self.dt), (&kv, 1.0), (&kf, 1.0)] {
                    let r = m.restrict(map, map, nf, nf);
                    for i in 0..nf {
                        for (j, v) in r.row(i) {
                            entries.push((i, j, scale * v));
                        }
                    }
                }
                for k in 0..np {
                    for (j, v) in self.ops.div_free.row(k) {
                        entries.push((nf + k, j, v));
                        entries.push((j, nf + k, v));
                    }
                    let w = self.ops.pressure_weights[k];
                    entries.push((nf + k, nf + np, w));
                    entries.push((nf + np, nf + k, w));
                }
                Some(entries)
            }
            _ => None,
        };
        Ok((res, jac))
    }
}

/// Solves one implicit-Euler step from `prev` to `prev.t + cfg.dt`.
///
/// Data is sampled at the new time level. `frozen` is the frozen velocity
/// argument of the viscosity at that level (absent means zero); `guess`
/// overrides the Newton initial guess, which defaults to `prev`.
pub fn implicit_euler_step(
    problem: &FlowProblem,
    ops: &StepOperators,
    prev: &DiscreteState,
    frozen: Option<&[f64]>,
    reg: Smoothing,
    cfg: &StepConfig,
    guess: Option<&DiscreteState>,
) -> Result<DiscreteState, StepError> {
    let t = prev.t + cfg.dt;
    let space = &problem.space;
    let (nf, np) = (space.n_free(), space.n_pressure());
    let load = assemble_load(problem, t);
    let kkt = Kkt {
        problem,
        ops,
        prev: &prev.vbar,
        frozen,
        reg,
        t,
        dt: cfg.dt,
        load,
    };
    let tol = cfg.newton_tol * (1.0 + norm(&space.restrict(&kkt.load)));

    let start = guess.unwrap_or(prev);
    let mut x = space.restrict(&start.vbar);
    x.extend_from_slice(&start.pressure);
    x.push(0.0);

    let (mut res, _) = kkt.residual(&x, false)?;
    let mut rnorm = norm(&res);
    let mut iters = 0;
    while rnorm > tol {
        if iters == cfg.newton_max {
            return Err(StepError::NewtonDiverged {
                t,
                residual: rnorm,
                iterations: iters,
            });
        }
        iters += 1;
        let (_, jac) = kkt.residual(&x, true)?;
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        let dx = solve_sparse(nf + np + 1, &jac.expect("jacobian requested"), &rhs)
            .map_err(|source| StepError::LinearSolveFailed { t, source })?;

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
            let (r, _) = kkt.residual(&trial, false)?;
            let n = norm(&r);
            if n.is_finite() && n <= (1.0 - 1e-4 * alpha) * rnorm {
                accepted = Some((trial, r, n));
                break;
            }
            if n.is_finite() && n < rnorm && fallback.is_none() {
                fallback = Some((trial, r, n));
            }
            alpha *= cfg.backtrack;
        }
        match accepted.or(fallback) {
            Some((trial, r, n)) => {
                x = trial;
                res = r;
                rnorm = n;
            }
            None => {
                return Err(StepError::NewtonDiverged {
                    t,
                    residual: rnorm,
                    iterations: iters,
                })
            }
        }
    }

    let vbar = space.extend(&x[..nf]);
    let mut pressure = x[nf..nf + np].to_vec();
    let mean = space.pressure_mean(&pressure);
    for q in &mut pressure {
        *q -= mean;
    }
    Ok(DiscreteState {
        t,
        vbar,
        pressure,
        newton_iters: iters,
        eta: reg.eta,
        residual: rnorm,
    })
}

/// Convex functional whose constrained minimizer is the step solution:
/// `|v - v_prev|_M^2 / 2dt + int Phi_eta + eps-term potential
///  + int_{Gamma0} k psi_delta(v_tau - s~) - L(v)`, all at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn incremental_energy(
    problem: &FlowProblem,
    ops: &StepOperators,
    vbar: &[f64],
    prev: &[f64],
    frozen: Option<&[f64]>,
    reg: Smoothing,
    t: f64,
    dt: f64,
) -> f64 {
    let space = &problem.space;
    let params = &problem.params;
    let diff: Vec<f64> = vbar.iter().zip(prev).map(|(a, b)| a - b).collect();
    let kinetic = 0.5 * ops.mass.quad_form(&diff) / dt;

    let pc = params.p_conj;
    let mut bulk = 0.0;
    for c in 0..space.n_cells() {
        for qp in &space.cell(c).points {
            let pt = viscous_point(problem, c, qp, vbar, frozen, t);
            let main = potential_phi_eta(params, pt.temp, pt.vel, pt.total.norm(), reg.eta);
            let extra = if reg.eps == 0.0 {
                0.0
            } else {
                let m2 = pt.bar.norm_sq() + reg.eta * reg.eta;
                2.0 * reg.eps / pc * (m2.powf(0.5 * pc) - reg.eta.powf(pc))
            };
            bulk += qp.weight * (main + extra);
        }
    }

    let friction: f64 = wall_mismatch(problem, vbar, t)
        .into_iter()
        .map(|(_, _, _, w, k, z)| w * k * psi_delta(z, reg.delta))
        .sum();
    let work = dot(&assemble_load(problem, t), vbar);
    kinetic + bulk + friction - work
}
