use filmflow_core::continuation::{time_loop, RegularizationConfig};
use filmflow_core::oracle::{field_from_nodes, make_instance, oracle_step, OracleConfig, StepInputs};
use filmflow_core::stepper::{incremental_energy, Smoothing, StepConfig, StepOperators};
use filmflow_core::{FlowProblem, Scenario, ScenarioKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn couette_2x1() -> FlowProblem {
    let mut s = Scenario::defaults(ScenarioKind::Couette);
    s.nx = 2;
    s.nz = 1;
    s.build().unwrap()
}

fn inputs<'a>(
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

#[test]
fn energies_agree_on_random_fields() {
    let pr = couette_2x1();
    let ops = StepOperators::new(&pr);
    let reg = Smoothing {
        eps: 1e-2,
        eta: 1e-4,
        delta: 1e-3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let prev = pr.space.extend(&(0..pr.space.n_free()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let v = pr.space.extend(&(0..pr.space.n_free()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let prev_f = field_from_nodes(&pr.space.nodes, &prev);
        let inst = make_instance(&inputs(&pr, reg, &prev_f, 0.3, 0.1)).unwrap();
        let v_f = field_from_nodes(&pr.space.nodes, &v);
        let ov = inst.sample(&v_f);
        let a = inst.energy(&ov);
        let b = incremental_energy(&pr, &ops, &v, &prev, None, reg, 0.3, 0.1);
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn stepper_matches_oracle_on_two_steps() {
    let pr = couette_2x1();
    let ops = StepOperators::new(&pr);
    let reg_cfg = RegularizationConfig::default();
    let cfg = StepConfig::new(0.1);
    let eps = 1e-4;
    let traj = time_loop(&pr, &ops, None, &reg_cfg, eps, &cfg, 2, None).unwrap();
    let delta = reg_cfg.delta_for(&pr);
    for n in 1..=2 {
        let prev = &traj.states[n - 1];
        let state = &traj.states[n];
        let reg = Smoothing {
            eps,
            eta: state.eta,
            delta,
        };
        let prev_f = field_from_nodes(&pr.space.nodes, &prev.vbar);
        let inst = make_instance(&inputs(&pr, reg, &prev_f, state.t, cfg.dt)).unwrap();
        let sol = oracle_step(&inst, &OracleConfig::default()).unwrap();
        let e_main = incremental_energy(&pr, &ops, &state.vbar, &prev.vbar, None, reg, state.t, cfg.dt);
        let rel = (sol.energy - e_main).abs() / e_main.abs().max(1e-300);
        println!("step {n}: oracle {} main {} rel {rel:e} iters {}", sol.energy, e_main, sol.iterations);
        assert!(rel <= 1e-6);
        let scale = state.vbar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (pos, val) in inst.nodal_values(&sol.velocity) {
            let node = pr.space.node_at(pos, 1e-12).unwrap();
            for (c, v) in val.iter().enumerate() {
                let d = (v - state.vbar[2 * node + c]).abs();
                assert!(d <= 1e-4 * scale, "node {pos:?} comp {c}: {d:e}");
            }
        }
    }
}
