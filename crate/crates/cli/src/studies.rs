//! Verification studies shared by `verify` and the acceptance tests.
//!
//! Each study returns [`Check`]s; thresholds are fixed here so every caller
//! judges the same numbers the same way.

use filmflow_core::constitutive::{
    eval_f, potential_phi, split_f, FluidParams, SymTensor, ViscosityLaw,
};
use filmflow_core::continuation::{solve_p_u, time_loop, EpsContinuation, NormKind};
use filmflow_core::diagnostics::{apriori_monitor, energy_report, friction_complementarity};
use filmflow_core::discretization::{assemble_friction, assemble_viscous};
use filmflow_core::oracle::{field_from_nodes, make_instance, oracle_kkt, oracle_step, OracleConfig, StepInputs};
use filmflow_core::{
    incremental_energy, picard_lambda, FlowProblem, RegularizationConfig, Scenario, ScenarioKind,
    Smoothing, StepConfig, StepOperators, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one verified property.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn scenario(kind: ScenarioKind, nx: usize, nz: usize) -> Scenario {
    let mut s = Scenario::defaults(kind);
    s.nx = nx;
    s.nz = nz;
    s
}

fn build(s: &Scenario) -> FlowProblem {
    s.build().expect("builtin scenario builds")
}

// ---------------------------------------------------------------- constitutive

/// Signature of the strong-monotonicity residual `(p, mu0, a, b)`.
pub type InegpResidual = dyn Fn(f64, f64, SymTensor, SymTensor) -> f64;

fn random_tensor(rng: &mut ChaCha8Rng, bound: f64) -> SymTensor {
    SymTensor::new(
        rng.random_range(-bound..bound),
        rng.random_range(-bound..bound),
        rng.random_range(-bound..bound),
    )
}

/// Pointwise stress inequalities on `pairs` random tensor pairs per exponent.
///
/// `inegp` evaluates the strong-monotonicity residual; passing anything but
/// `filmflow_core::constitutive::strong_monotonicity_residual` is for fault
/// injection.
pub fn constitutive_suite(pairs: usize, seed: u64, inegp: &InegpResidual) -> Vec<Check> {
    let exponents = [1.2, 1.5, 1.8];
    let (mu0, mu1) = (1.0, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut growth: f64 = 0.0;
    let mut mono: f64 = 0.0;
    let mut strong: f64 = 0.0;
    let mut split: f64 = 0.0;
    for &p in &exponents {
        let params = FluidParams::new(p, ViscosityLaw::BoundedIncreasing { mu0, mu1 }).expect("valid law");
        for _ in 0..pairs {
            let a = random_tensor(&mut rng, 10.0);
            let b = random_tensor(&mut rng, 10.0);
            let fa = eval_f(&params, 0.0, [0.0, 0.0], a);
            let fb = eval_f(&params, 0.0, [0.0, 0.0], b);
            let bound = 2.0 * mu1 * a.norm().powf(p - 1.0);
            if bound > 0.0 {
                growth = growth.max((fa.norm() - bound) / bound);
            }
            let diff = a - b;
            let scale = 1.0 + diff.norm_sq();
            mono = mono.min((fa - fb).ddot(&diff) / scale);
            strong = strong.min(inegp(p, mu0, a, b) / scale);
            let (f1, f2) = split_f(&params, 0.0, [0.0, 0.0], a);
            let defect = (f1 + f2 - fa).norm();
            if fa.norm() > 0.0 {
                split = split.max(defect / fa.norm());
            }
        }
    }
    let n = pairs * exponents.len();
    let mut out = vec![
        Check::new(
            "growth bound",
            growth <= 1e-12,
            format!("max relative excess {growth:.3e} over {n} samples (limit 1e-12)"),
        ),
        Check::new(
            "monotonicity",
            mono >= -1e-10,
            format!("min scaled (F(a)-F(b)):(a-b) {mono:.3e} (limit -1e-10)"),
        ),
        Check::new(
            "strong monotonicity",
            strong >= -1e-10,
            format!("min scaled residual {strong:.3e} (limit -1e-10)"),
        ),
        Check::new(
            "split exactness",
            split <= 1e-14,
            format!("max relative defect {split:.3e} (limit 1e-14)"),
        ),
    ];
    out.push(potential_check(seed.wrapping_add(1)));
    out
}

/// Directional finite differences of `l -> Phi(|l|)` against `F(l) : h`.
fn potential_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for law in [ViscosityLaw::Constant(1.0), ViscosityLaw::BoundedIncreasing { mu0: 1.0, mu1: 2.0 }] {
        for p in [1.2, 1.5, 1.8, 2.0] {
            let params = FluidParams::new(p, law).expect("valid law");
            for _ in 0..50 {
                let l = random_tensor(&mut rng, 10.0);
                let mut h = random_tensor(&mut rng, 1.0);
                h = (1.0 / h.norm()) * h;
                let tau = 1e-4 * (1.0 + l.norm());
                let phi = |s: f64| potential_phi(&params, 0.0, [0.0, 0.0], (l + s * h).norm());
                let fd = (phi(tau) - phi(-tau)) / (2.0 * tau);
                let exact = eval_f(&params, 0.0, [0.0, 0.0], l).ddot(&h);
                let f = eval_f(&params, 0.0, [0.0, 0.0], l).norm();
                worst = worst.max((fd - exact).abs() / f.max(1e-300));
                count += 1;
            }
        }
    }
    Check::new(
        "potential gradient",
        worst <= 1e-6,
        format!("max relative FD error {worst:.3e} over {count} samples (limit 1e-6)"),
    )
}

// ---------------------------------------------------------------- oracle

fn step_inputs<'a>(
    pr: &'a FlowProblem,
    reg: Smoothing,
    prev: &'a dyn Fn([f64; 2]) -> [f64; 2],
    t: f64,
    dt: f64,
) -> StepInputs<'a> {
    StepInputs {
        mesh: &pr.space.mesh,
        data: &pr.data,
        params: pr.params,
        eps: reg.eps,
        eta: reg.eta,
        delta: reg.delta,
        prev,
        frozen: None,
        t,
        dt,
    }
}

/// Largest nodal velocity difference between an oracle vector and a main-path
/// vector, matched by node position.
fn nodal_gap(pr: &FlowProblem, inst: &filmflow_core::oracle::DenseInstance, ov: &[f64], vbar: &[f64]) -> f64 {
    let mut gap: f64 = 0.0;
    for (pos, val) in inst.nodal_values(ov) {
        let node = pr.space.node_at(pos, 1e-12).expect("oracle node exists in the main mesh");
        for c in 0..2 {
            gap = gap.max((val[c] - vbar[2 * node + c]).abs());
        }
    }
    gap
}

/// Zero data: the oracle returns the zero field with zero energy.
pub fn oracle_zero_check() -> Check {
    let pr = build(&scenario(ScenarioKind::Zero, 2, 1));
    let zero = vec![0.0; pr.space.n_velocity()];
    let prev = field_from_nodes(&pr.space.nodes, &zero);
    let reg = Smoothing {
        eps: 1e-2,
        eta: 1e-8,
        delta: 1e-4,
    };
    let inst = make_instance(&step_inputs(&pr, reg, &prev, 0.1, 0.1)).expect("instance fits");
    match oracle_step(&inst, &OracleConfig::default()) {
        Ok(sol) => {
            let size = max_abs(&sol.velocity);
            Check::new(
                "oracle zero data",
                size <= 1e-12 && sol.energy.abs() <= 1e-14,
                format!("|v| {size:.3e}, energy {:.3e}", sol.energy),
            )
        }
        Err(e) => Check::new("oracle zero data", false, e.to_string()),
    }
}

/// Linear problem on the 2x1 mesh: p = 2, constant viscosity, k = 0, eps = 0.
fn linear_problem() -> FlowProblem {
    let mut s = scenario(ScenarioKind::Couette, 2, 1);
    s.p = 2.0;
    s.threshold = 0.0;
    build(&s)
}

/// Oracle descent against the oracle's own dense KKT solve on a quadratic step.
pub fn oracle_quadratic_check() -> Check {
    let pr = linear_problem();
    let zero = vec![0.0; pr.space.n_velocity()];
    let prev = field_from_nodes(&pr.space.nodes, &zero);
    let reg = Smoothing {
        eps: 0.0,
        eta: 1e-8,
        delta: 1e-4,
    };
    let inst = make_instance(&step_inputs(&pr, reg, &prev, 0.1, 0.1)).expect("instance fits");
    let (desc, kkt) = match (oracle_step(&inst, &OracleConfig::default()), oracle_kkt(&inst)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Check::new("oracle quadratic", false, e.to_string()),
    };
    let scale = max_abs(&kkt.velocity).max(1.0);
    let gap = desc
        .velocity
        .iter()
        .zip(&kkt.velocity)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    Check::new(
        "oracle quadratic",
        gap <= 1e-8 && desc.certified,
        format!("descent vs dense KKT {gap:.3e} (limit 1e-8), certified {}", desc.certified),
    )
}

/// Relative energy gap and scaled velocity gap per step of the stepper
/// against the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub energy_gaps: Vec<f64>,
    pub excess: Vec<f64>,
    pub velocity_gaps: Vec<f64>,
    pub certified: bool,
}

/// Two steps of the p = 1.5 couette scenario on the 2x1 mesh, dt = 0.1,
/// with the oracle using the same smoothing as the stepper.
pub fn oracle_couette_comparison() -> Result<OracleComparison, String> {
    let pr = build(&scenario(ScenarioKind::Couette, 2, 1));
    let ops = StepOperators::new(&pr);
    let reg_cfg = RegularizationConfig::default();
    let cfg = StepConfig::new(0.1);
    let eps = 1e-4;
    let traj = time_loop(&pr, &ops, None, &reg_cfg, eps, &cfg, 2, None).map_err(|e| e.to_string())?;
    let delta = reg_cfg.delta_for(&pr);
    let mut out = OracleComparison {
        energy_gaps: Vec::new(),
        excess: Vec::new(),
        velocity_gaps: Vec::new(),
        certified: true,
    };
    for n in 1..=2 {
        let (prev, state) = (&traj.states[n - 1], &traj.states[n]);
        let reg = Smoothing {
            eps,
            eta: state.eta,
            delta,
        };
        let prev_f = field_from_nodes(&pr.space.nodes, &prev.vbar);
        let inst = make_instance(&step_inputs(&pr, reg, &prev_f, state.t, cfg.dt)).map_err(|e| e.to_string())?;
        let sol = oracle_step(&inst, &OracleConfig::default()).map_err(|e| e.to_string())?;
        let main = incremental_energy(&pr, &ops, &state.vbar, &prev.vbar, None, reg, state.t, cfg.dt);
        let scale = max_abs(&state.vbar).max(1e-300);
        out.energy_gaps.push((sol.energy - main).abs() / main.abs().max(1e-300));
        out.excess.push((sol.energy - main) / main.abs().max(1.0));
        out.velocity_gaps.push(nodal_gap(&pr, &inst, &sol.velocity, &state.vbar) / scale);
        out.certified &= sol.certified;
    }
    Ok(out)
}

pub fn oracle_couette_checks() -> Vec<Check> {
    match oracle_couette_comparison() {
        Err(e) => vec![Check::new("oracle couette", false, e)],
        Ok(c) => {
            let e = c.energy_gaps.iter().cloned().fold(0.0, f64::max);
            let x = c.excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = c.velocity_gaps.iter().cloned().fold(0.0, f64::max);
            vec![
                Check::new(
                    "oracle couette energy",
                    e <= 1e-6 && x <= 1e-6,
                    format!("max relative energy gap {e:.3e}, oracle excess {x:.3e} (limits 1e-6)"),
                ),
                Check::new(
                    "oracle couette velocity",
                    v <= 1e-4,
                    format!("max nodal gap / scale {v:.3e} (limit 1e-4), oracle certified {}", c.certified),
                ),
            ]
        }
    }
}

/// Energies of the dense instance and of the main path at random fields.
pub fn oracle_energy_check(samples: usize, seed: u64) -> Check {
    let pr = build(&scenario(ScenarioKind::Couette, 2, 1));
    let ops = StepOperators::new(&pr);
    let reg = Smoothing {
        eps: 1e-2,
        eta: 1e-4,
        delta: 1e-3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut draw = || {
            let free: Vec<f64> = (0..pr.space.n_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
            pr.space.extend(&free)
        };
        let prev = draw();
        let v = draw();
        let prev_f = field_from_nodes(&pr.space.nodes, &prev);
        let inst = match make_instance(&step_inputs(&pr, reg, &prev_f, 0.3, 0.1)) {
            Ok(i) => i,
            Err(e) => return Check::new("oracle energy", false, e.to_string()),
        };
        let v_f = field_from_nodes(&pr.space.nodes, &v);
        let a = inst.energy(&inst.sample(&v_f));
        let b = incremental_energy(&pr, &ops, &v, &prev, None, reg, 0.3, 0.1);
        worst = worst.max((a - b).abs() / a.abs().max(1.0));
    }
    Check::new(
        "oracle energy",
        worst <= 1e-10,
        format!("max relative energy gap {worst:.3e} over {samples} random fields (limit 1e-10)"),
    )
}

pub fn oracle_suite() -> Vec<Check> {
    let mut out = vec![oracle_zero_check(), oracle_quadratic_check()];
    out.extend(oracle_couette_checks());
    out.push(oracle_energy_check(20, 21));
    out
}

/// Linear steps: one Newton iteration each, matching the dense KKT solution.
pub fn linear_sanity() -> Vec<Check> {
    let pr = linear_problem();
    let ops = StepOperators::new(&pr);
    let reg_cfg = RegularizationConfig::default();
    let cfg = StepConfig::new(0.1);
    let traj = match time_loop(&pr, &ops, None, &reg_cfg, 0.0, &cfg, 2, None) {
        Ok(t) => t,
        Err(e) => return vec![Check::new("linear step", false, e.to_string())],
    };
    let iters: Vec<usize> = traj.states[1..].iter().map(|s| s.newton_iters).collect();
    let mut gap: f64 = 0.0;
    for n in 1..traj.states.len() {
        let (prev, state) = (&traj.states[n - 1], &traj.states[n]);
        let reg = Smoothing {
            eps: 0.0,
            eta: state.eta,
            delta: reg_cfg.delta_for(&pr),
        };
        let prev_f = field_from_nodes(&pr.space.nodes, &prev.vbar);
        let inst = make_instance(&step_inputs(&pr, reg, &prev_f, state.t, cfg.dt)).expect("instance fits");
        match oracle_kkt(&inst) {
            Ok(sol) => {
                let scale = max_abs(&state.vbar).max(1.0);
                gap = gap.max(nodal_gap(&pr, &inst, &sol.velocity, &state.vbar) / scale);
            }
            Err(e) => return vec![Check::new("linear step", false, e.to_string())],
        }
    }
    vec![
        Check::new(
            "linear newton iterations",
            iters.iter().all(|&i| i == 1),
            format!("iterations per step {iters:?} (expected 1)"),
        ),
        Check::new(
            "linear matches dense KKT",
            gap <= 1e-8,
            format!("max nodal gap / scale {gap:.3e} (limit 1e-8)"),
        ),
    ]
}

// ---------------------------------------------------------------- trajectories

/// Couette setup used by the continuation, energy and friction studies:
/// 8x4 mesh, ten steps of 0.1, and a threshold large enough that part of
/// the wall sticks.
pub fn friction_couette() -> (Scenario, StepConfig, usize) {
    let mut s = scenario(ScenarioKind::Couette, 8, 4);
    s.threshold = 4.0;
    (s, StepConfig::new(0.1), 10)
}

/// Worst `violation / scale` of the energy inequality over every run.
pub fn worst_energy(
    pr: &FlowProblem,
    ops: &StepOperators,
    runs: &[(f64, Trajectory)],
    frozen: Option<&Trajectory>,
    delta: f64,
) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for (eps, traj) in runs {
        let rep = energy_report(pr, ops, traj, frozen, *eps, delta, 0.0).map_err(|e| e.to_string())?;
        for s in rep.steps {
            worst = worst.max(s.violation / s.scale);
        }
    }
    Ok(worst)
}

pub fn energy_check(name: &str, worst: f64, newton_tol: f64) -> Check {
    let tol = 10.0 * newton_tol;
    Check::new(
        name,
        worst <= tol,
        format!("worst violation / scale {worst:.3e} (limit {tol:.0e})"),
    )
}

fn couette_continuation(s: &Scenario, cfg: &StepConfig, steps: usize) -> Result<(FlowProblem, EpsContinuation), String> {
    let pr = build(s);
    let ops = StepOperators::new(&pr);
    let c = solve_p_u(&pr, &ops, None, &RegularizationConfig::default(), cfg, steps).map_err(|e| e.to_string())?;
    Ok((pr, c))
}

pub fn energy_suite() -> Vec<Check> {
    let (s, cfg, steps) = friction_couette();
    let (pr, c) = match couette_continuation(&s, &cfg, steps) {
        Ok(v) => v,
        Err(e) => return vec![Check::new("energy inequality", false, e)],
    };
    let ops = StepOperators::new(&pr);
    let delta = RegularizationConfig::default().delta_for(&pr);
    match worst_energy(&pr, &ops, &c.runs, None, delta) {
        Ok(w) => vec![energy_check("energy inequality", w, cfg.newton_tol)],
        Err(e) => vec![Check::new("energy inequality", false, e)],
    }
}

pub fn complementarity_checks(pr: &FlowProblem, traj: &Trajectory, delta: f64) -> Vec<Check> {
    let c = friction_complementarity(pr, traj, delta);
    vec![
        Check::new(
            "friction branches",
            c.slipping_points > 0 && c.sticking_points > 0,
            format!("{} slipping, {} sticking wall points", c.slipping_points, c.sticking_points),
        ),
        Check::new(
            "traction bound",
            c.max_ratio < 1.0,
            format!("max |sigma_tau| / k = {:.15} (limit < 1)", c.max_ratio),
        ),
        Check::new(
            "traction alignment",
            c.alignment_defect <= 1e-2,
            format!("max | |sigma_tau| - k | / k at slipping points {:.3e} (limit 1e-2)", c.alignment_defect),
        ),
        Check::new(
            "traction opposes slip",
            c.max_power <= 0.0,
            format!("max sigma_tau (v_tau - s~) = {:.3e}", c.max_power),
        ),
    ]
}

pub fn complementarity_suite() -> Vec<Check> {
    let (s, cfg, steps) = friction_couette();
    match couette_continuation(&s, &cfg, steps) {
        Ok((pr, c)) => {
            let delta = RegularizationConfig::default().delta_for(&pr);
            complementarity_checks(&pr, c.final_trajectory(), delta)
        }
        Err(e) => vec![Check::new("friction complementarity", false, e)],
    }
}

/// Default couette scenario on the 8x4 mesh, ten steps of 0.1.
pub fn default_couette() -> (Scenario, StepConfig, usize) {
    (scenario(ScenarioKind::Couette, 8, 4), StepConfig::new(0.1), 10)
}

/// A priori bounds along the default eps schedule and the successive
/// trajectory distances, on `setup` (normally [`default_couette`]).
pub fn eps_uniformity(setup: (Scenario, StepConfig, usize)) -> (Vec<Check>, f64) {
    let (s, cfg, steps) = setup;
    let (pr, c) = match couette_continuation(&s, &cfg, steps) {
        Ok(v) => v,
        Err(e) => return (vec![Check::new("eps continuation", false, e)], f64::INFINITY),
    };
    let table = apriori_monitor(&pr, &c.runs);
    let var = table.lp_variation();
    let first = table.rows[0].eps_weighted;
    let peak = table.rows.iter().map(|r| r.eps_weighted).fold(0.0, f64::max);
    let d = &c.distances;
    let ops = StepOperators::new(&pr);
    let delta = RegularizationConfig::default().delta_for(&pr);
    let worst = worst_energy(&pr, &ops, &c.runs, None, delta).unwrap_or(f64::INFINITY);
    (
        vec![
            Check::new(
                "Lp(W1p) uniformity",
                var < 0.1,
                format!("relative variation {var:.3e} (limit 0.1)"),
            ),
            Check::new(
                "eps-weighted bound",
                peak <= 2.0 * first,
                format!("max {peak:.6e} vs first {first:.6e} (limit 2x)"),
            ),
            Check::new(
                "eps distances nonincreasing",
                d.windows(2).all(|w| w[1] <= w[0]),
                format!("d_i = {}", fmt_list(d)),
            ),
        ],
        worst,
    )
}

/// Picard iteration with a constant and with a coupled viscosity.
pub fn picard_study() -> (Vec<Check>, f64) {
    let reg = RegularizationConfig::default();
    let cfg = StepConfig::new(0.1);
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;

    let constant = build(&scenario(ScenarioKind::Couette, 8, 4));
    match picard_lambda(&constant, &reg, &cfg, 10) {
        Ok(o) => {
            let d = o.distances();
            let second = d.get(1).cloned().unwrap_or(f64::INFINITY);
            let limit = 10.0 * cfg.newton_tol;
            checks.push(Check::new(
                "Picard constant viscosity",
                o.evaluations() == 2 && second <= limit,
                format!("distances {}, second {second:.3e} (limit {limit:.0e})", fmt_list(&d)),
            ));
            worst = worst.max(picard_energy(&constant, &o, &reg).unwrap_or(f64::INFINITY));
        }
        Err(e) => checks.push(Check::new("Picard constant viscosity", false, e.to_string())),
    }

    let coupled = build(&scenario(ScenarioKind::Coupled, 8, 4));
    match picard_lambda(&coupled, &reg, &cfg, 10) {
        Ok(o) => {
            let d = o.distances();
            let size = filmflow_core::continuation::traj_norm(&coupled, o.trajectory(), coupled.params.p, NormKind::LpLp);
            let last = *d.last().expect("one iterate");
            let limit = reg.picard_tol * (1.0 + size);
            checks.push(Check::new(
                "Picard coupled viscosity",
                d.windows(2).all(|w| w[1] < w[0]) && last <= limit && o.evaluations() <= 20,
                format!("{} evaluations, distances {} (final limit {limit:.3e})", o.evaluations(), fmt_list(&d)),
            ));
            worst = worst.max(picard_energy(&coupled, &o, &reg).unwrap_or(f64::INFINITY));
        }
        Err(e) => checks.push(Check::new("Picard coupled viscosity", false, e.to_string())),
    }
    (checks, worst)
}

fn picard_energy(
    pr: &FlowProblem,
    o: &filmflow_core::PicardOutcome,
    reg: &RegularizationConfig,
) -> Result<f64, String> {
    let ops = StepOperators::new(pr);
    let delta = reg.delta_for(pr);
    let steps = o.trajectory().steps();
    let zero = Trajectory::zero(pr, o.trajectory().dt, steps);
    let mut worst: f64 = 0.0;
    for (k, it) in o.iterates.iter().enumerate() {
        let frozen = if k == 0 {
            &zero
        } else {
            o.iterates[k - 1].continuation.final_trajectory()
        };
        worst = worst.max(worst_energy(pr, &ops, &it.continuation.runs, Some(frozen), delta)?);
    }
    Ok(worst)
}

/// Zero data stays identically zero through every level.
pub fn zero_problem() -> Check {
    let pr = build(&Scenario::defaults(ScenarioKind::Zero));
    match picard_lambda(&pr, &RegularizationConfig::default(), &StepConfig::new(0.1), 10) {
        Ok(o) => {
            let sup = o
                .iterates
                .iter()
                .flat_map(|i| i.continuation.runs.iter())
                .map(|(_, t)| t.sup_norm())
                .fold(0.0, f64::max);
            Check::new(
                "zero problem",
                sup <= 1e-10,
                format!("sup norm {sup:.3e} over {} Picard iterations (limit 1e-10)", o.evaluations()),
            )
        }
        Err(e) => Check::new("zero problem", false, e.to_string()),
    }
}

// ---------------------------------------------------------------- mms

/// L2 velocity errors at the final time on each mesh, and observed orders.
#[derive(Debug, Clone, PartialEq)]
pub struct MmsStudy {
    pub meshes: Vec<(usize, usize)>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
    pub newton_iters: Vec<usize>,
}

/// Manufactured p = 2 solution, four steps of 0.25. The solution is linear
/// in time, so implicit Euler adds no time error and the order is spatial.
pub fn mms_study(meshes: &[(usize, usize)]) -> Result<MmsStudy, String> {
    let base = Scenario::defaults(ScenarioKind::MmsP2);
    mms_study_with(&base, &StepConfig::new(0.25), 4, meshes)
}

/// Same study on a caller-supplied manufactured scenario and time grid.
pub fn mms_study_with(
    base: &Scenario,
    cfg: &StepConfig,
    steps: usize,
    meshes: &[(usize, usize)],
) -> Result<MmsStudy, String> {
    let mut errors = Vec::new();
    let mut newton_iters = Vec::new();
    for &(nx, nz) in meshes {
        let s = Scenario { nx, nz, ..base.clone() };
        let pr = s.build().map_err(|e| e.to_string())?;
        let ops = StepOperators::new(&pr);
        let traj = time_loop(&pr, &ops, None, &RegularizationConfig::default(), 0.0, cfg, steps, None)
            .map_err(|e| e.to_string())?;
        let last = traj.last();
        let mut err = 0.0;
        for c in 0..pr.space.n_cells() {
            for qp in &pr.space.cell(c).points {
                let v = pr.space.value_at(c, qp, &last.vbar);
                let e = filmflow_core::mms::velocity(last.t, qp.pos);
                err += qp.weight * ((v[0] - e[0]).powi(2) + (v[1] - e[1]).powi(2));
            }
        }
        errors.push(err.sqrt());
        newton_iters.extend(traj.states[1..].iter().map(|s| s.newton_iters));
    }
    let orders = errors
        .windows(2)
        .zip(meshes.windows(2))
        .map(|(e, m)| (e[0] / e[1]).ln() / (m[1].0 as f64 / m[0].0 as f64).ln())
        .collect();
    Ok(MmsStudy {
        meshes: meshes.to_vec(),
        errors,
        orders,
        newton_iters,
    })
}

pub fn mms_suite() -> Vec<Check> {
    match mms_study(&[(8, 4), (16, 8)]) {
        Ok(s) => {
            let order = s.orders[0];
            vec![Check::new(
                "mms order",
                order >= 2.0,
                format!("L2 errors {}, observed order {order:.3} (limit 2.0)", fmt_list(&s.errors)),
            )]
        }
        Err(e) => vec![Check::new("mms order", false, e)],
    }
}

// ---------------------------------------------------------------- jacobian

/// Worst relative gap between the assembled Jacobian and central differences
/// of the viscous plus friction residual along random directions.
pub fn jacobian_gap(kind: ScenarioKind, states: usize, seed: u64) -> Result<f64, String> {
    let pr = build(&scenario(kind, 4, 2));
    let reg = RegularizationConfig::default();
    let (eps, eta, delta) = (1e-2, reg.initial_eta(&pr), reg.delta_for(&pr));
    let t = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = pr.data.velocity_scale();
    let mut worst: f64 = 0.0;
    let residual = |v: &[f64], frozen: &[f64], jac: bool| {
        let (mut r, jv) = assemble_viscous(&pr, v, Some(frozen), eps, eta, t, jac).map_err(|e| e.to_string())?;
        let (rf, jf) = assemble_friction(&pr, v, delta, t, jac);
        for (a, b) in r.iter_mut().zip(&rf) {
            *a += b;
        }
        Ok::<_, String>((r, jv.zip(jf)))
    };
    for _ in 0..states {
        let mut draw = |amp: f64| {
            let free: Vec<f64> = (0..pr.space.n_free()).map(|_| rng.random_range(-amp..amp)).collect();
            pr.space.extend(&free)
        };
        let v = draw(scale);
        let frozen = draw(scale);
        let h = draw(1.0);
        let (_, jacs) = residual(&v, &frozen, true)?;
        let (jv, jf) = jacs.expect("requested");
        let jh: Vec<f64> = jv.mul_vec(&h).iter().zip(jf.mul_vec(&h)).map(|(a, b)| a + b).collect();
        let tau = 1e-5;
        let shift = |s: f64| v.iter().zip(&h).map(|(a, b)| a + s * b).collect::<Vec<_>>();
        let (rp, _) = residual(&shift(tau), &frozen, false)?;
        let (rm, _) = residual(&shift(-tau), &frozen, false)?;
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * tau)).collect();
        let diff: Vec<f64> = fd.iter().zip(&jh).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&jh).max(1e-300));
    }
    Ok(worst)
}

pub fn jacobian_checks(states: usize) -> Vec<Check> {
    [ScenarioKind::Zero, ScenarioKind::Couette, ScenarioKind::Coupled, ScenarioKind::MmsP2]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let name = format!("jacobian {kind}");
            match jacobian_gap(kind, states, 100 + i as u64) {
                Ok(g) => Check::new(
                    name,
                    g <= 1e-6,
                    format!("max relative FD gap {g:.3e} over {states} states (limit 1e-6)"),
                ),
                Err(e) => Check::new(name, false, e),
            }
        })
        .collect()
}
