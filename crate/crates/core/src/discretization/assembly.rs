//! Assembly of the terms of the regularized step equation. All dual vectors
//! and operators live on the full velocity dof set (`2 * n_nodes`); callers
//! restrict to free dofs.

use thiserror::Error;

use super::space::{FESpace, QuadPoint};
use super::FlowProblem;
use crate::constitutive::{eps_term_tangent, f_eta_tangent, RadialTangent, SymTensor};
use crate::sparse::{CsrMatrix, TripletList};

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("non-finite coefficient in cell {cell} at ({x:.6}, {z:.6})")]
    NonFinite { cell: usize, x: f64, z: f64 },
}

/// Strain of the test function `phi_a e_comp`.
fn basis_strain(dphi: [f64; 2], comp: usize) -> SymTensor {
    if comp == 0 {
        SymTensor::new(dphi[0], 0.5 * dphi[1], 0.0)
    } else {
        SymTensor::new(0.0, 0.5 * dphi[0], dphi[1])
    }
}

pub fn assemble_mass(space: &FESpace) -> CsrMatrix {
    let n = space.n_velocity();
    let mut t = TripletList::new(n, n);
    for c in 0..space.n_cells() {
        let nodes = space.cell_nodes[c];
        for qp in &space.cell(c).points {
            for a in 0..6 {
                for b in 0..6 {
                    let v = qp.weight * qp.phi[a] * qp.phi[b];
                    t.push(2 * nodes[a], 2 * nodes[b], v);
                    t.push(2 * nodes[a] + 1, 2 * nodes[b] + 1, v);
                }
            }
        }
    }
    t.to_csr()
}

/// Rows are P1 pressure functions, columns velocity dofs:
/// `(B u) . q = int q div u`.
pub fn assemble_divergence(space: &FESpace) -> CsrMatrix {
    let mut t = TripletList::new(space.n_pressure(), space.n_velocity());
    for c in 0..space.n_cells() {
        let nodes = space.cell_nodes[c];
        let verts = space.mesh.cells[c];
        for qp in &space.cell(c).points {
            for k in 0..3 {
                for b in 0..6 {
                    let w = qp.weight * qp.psi[k];
                    t.push(verts[k], 2 * nodes[b], w * qp.dphi[b][0]);
                    t.push(verts[k], 2 * nodes[b] + 1, w * qp.dphi[b][1]);
                }
            }
        }
    }
    t.to_csr()
}

/// Pointwise inputs of the viscous stress at a quadrature point.
pub(crate) struct ViscousPoint {
    pub temp: f64,
    pub vel: [f64; 2],
    /// `D(vbar + v0 xi)`
    pub total: SymTensor,
    /// `D(vbar)`
    pub bar: SymTensor,
}

pub(crate) fn viscous_point(
    problem: &FlowProblem,
    c: usize,
    qp: &QuadPoint,
    vbar: &[f64],
    frozen: Option<&[f64]>,
    t: f64,
) -> ViscousPoint {
    let space = &problem.space;
    let xi = problem.data.xi(t);
    let lift_v = space.value_at(c, qp, &problem.lift);
    let mut vel = [xi * lift_v[0], xi * lift_v[1]];
    if let Some(u) = frozen {
        let uv = space.value_at(c, qp, u);
        vel[0] += uv[0];
        vel[1] += uv[1];
    }
    let gb = space.grad_at(c, qp, vbar);
    let gl = space.grad_at(c, qp, &problem.lift);
    let mut gt = gb;
    for i in 0..2 {
        for j in 0..2 {
            gt[i][j] += xi * gl[i][j];
        }
    }
    ViscousPoint {
        temp: problem.data.temperature(t, qp.pos),
        vel,
        total: SymTensor::sym_grad(gt),
        bar: SymTensor::sym_grad(gb),
    }
}

/// Viscous residual `R(phi) = int F_eta(theta, u + v0 xi, D(vbar + v0 xi)) : D(phi)
/// + 2 eps int (|D vbar|^2 + eta^2)^{(p'-2)/2} D(vbar) : D(phi)` and, on request,
/// its exact derivative in `vbar`.
pub fn assemble_viscous(
    problem: &FlowProblem,
    vbar: &[f64],
    frozen: Option<&[f64]>,
    eps: f64,
    eta: f64,
    t: f64,
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<CsrMatrix>), AssemblyError> {
    let space = &problem.space;
    let params = &problem.params;
    let n = space.n_velocity();
    let mut res = vec![0.0; n];
    let mut jac = with_jacobian.then(|| TripletList::new(n, n));
    for c in 0..space.n_cells() {
        let nodes = space.cell_nodes[c];
        for qp in &space.cell(c).points {
            let pt = viscous_point(problem, c, qp, vbar, frozen, t);
            let main: RadialTangent = f_eta_tangent(params, pt.temp, pt.vel, pt.total, eta);
            let extra = eps_term_tangent(params.p_conj, eps, pt.bar, eta);
            let stress = main.stress + extra.stress;
            if !(stress.xx.is_finite() && stress.xz.is_finite() && stress.zz.is_finite())
                || !main.scalar.is_finite()
                || !main.rank_one.is_finite()
            {
                return Err(AssemblyError::NonFinite {
                    cell: c,
                    x: qp.pos[0],
                    z: qp.pos[1],
                });
            }
            let mut strains = [SymTensor::ZERO; 12];
            for a in 0..6 {
                for comp in 0..2 {
                    strains[2 * a + comp] = basis_strain(qp.dphi[a], comp);
                }
            }
            for a in 0..6 {
                for ci in 0..2 {
                    let da = strains[2 * a + ci];
                    res[2 * nodes[a] + ci] += qp.weight * stress.ddot(&da);
                }
            }
            if let Some(jac) = jac.as_mut() {
                for b in 0..6 {
                    for cj in 0..2 {
                        let db = strains[2 * b + cj];
                        let dsig = main.apply(&pt.total, &db) + extra.apply(&pt.bar, &db);
                        for a in 0..6 {
                            for ci in 0..2 {
                                let da = strains[2 * a + ci];
                                jac.push(
                                    2 * nodes[a] + ci,
                                    2 * nodes[b] + cj,
                                    qp.weight * dsig.ddot(&da),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((res, jac.map(|j| j.to_csr())))
}

/// Huber-root smoothing `sqrt(z^2 + delta^2) - delta` of `|z|`.
pub fn psi_delta(z: f64, delta: f64) -> f64 {
    (z * z + delta * delta).sqrt() - delta
}

pub fn dpsi_delta(z: f64, delta: f64) -> f64 {
    let r = (z * z + delta * delta).sqrt();
    if r == 0.0 {
        0.0
    } else {
        z / r
    }
}

pub fn ddpsi_delta(z: f64, delta: f64) -> f64 {
    let r2 = z * z + delta * delta;
    delta * delta / (r2 * r2.sqrt())
}

/// Slip mismatch `vbar_tau - s~` at every wall quadrature point, with the
/// threshold and weight: `(edge, point index, x, weight, k, z)`.
pub(crate) fn wall_mismatch(
    problem: &FlowProblem,
    vbar: &[f64],
    t: f64,
) -> Vec<(usize, usize, f64, f64, f64, f64)> {
    let space = &problem.space;
    let mut out = Vec::new();
    for e in 0..space.wall_edges.len() {
        for (k, wp) in space.wall_points(e).iter().enumerate() {
            let v_tau = space.wall_tangential(e, wp, vbar);
            let lift_tau = space.wall_tangential(e, wp, &problem.lift);
            let s_tilde = problem.data.shifted_wall_speed(t, wp.x, lift_tau);
            let thr = problem.data.threshold(t, wp.x);
            out.push((e, k, wp.x, wp.weight, thr, v_tau - s_tilde));
        }
    }
    out
}

/// Smoothed friction residual `int_{Gamma0} k psi'_delta(vbar_tau - s~) phi_tau`
/// and its derivative.
pub fn assemble_friction(
    problem: &FlowProblem,
    vbar: &[f64],
    delta: f64,
    t: f64,
    with_jacobian: bool,
) -> (Vec<f64>, Option<CsrMatrix>) {
    let space = &problem.space;
    let n = space.n_velocity();
    let mut res = vec![0.0; n];
    let mut jac = with_jacobian.then(|| TripletList::new(n, n));
    for (e, k, _x, weight, thr, z) in wall_mismatch(problem, vbar, t) {
        if thr == 0.0 {
            continue;
        }
        let wp = &space.wall_points(e)[k];
        let nodes = space.wall_edges[e].nodes;
        let g = weight * thr * dpsi_delta(z, delta);
        let h = weight * thr * ddpsi_delta(z, delta);
        for a in 0..3 {
            res[2 * nodes[a]] += g * wp.phi[a];
            if let Some(jac) = jac.as_mut() {
                for b in 0..3 {
                    jac.push(2 * nodes[a], 2 * nodes[b], h * wp.phi[a] * wp.phi[b]);
                }
            }
        }
    }
    (res, jac.map(|j| j.to_csr()))
}

/// `L(phi) = int (f + v0 xi') . phi`.
pub fn assemble_load(problem: &FlowProblem, t: f64) -> Vec<f64> {
    let space = &problem.space;
    let mut out = vec![0.0; space.n_velocity()];
    for c in 0..space.n_cells() {
        let nodes = space.cell_nodes[c];
        for qp in &space.cell(c).points {
            let lift = space.value_at(c, qp, &problem.lift);
            let f = problem.data.modified_force(t, qp.pos, lift);
            for a in 0..6 {
                out[2 * nodes[a]] += qp.weight * f[0] * qp.phi[a];
                out[2 * nodes[a] + 1] += qp.weight * f[1] * qp.phi[a];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{FluidParams, ViscosityLaw};
    use crate::discretization::data::{ForceField, LiftField, ProblemData, XiLaw};
    use crate::geometry::ThinDomain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn couette(nx: usize, nz: usize, p: f64, law: ViscosityLaw) -> FlowProblem {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let data = ProblemData {
            threshold: 0.3,
            wall_speed: 0.2,
            lift: LiftField::Couette {
                speed: 1.0,
                height: 1.0,
            },
            force: ForceField::Uniform([0.5, -0.2]),
            ..ProblemData::zero(1.0)
        };
        FlowProblem::new(&domain, nx, nz, data, FluidParams::new(p, law).unwrap()).unwrap()
    }

    fn random_free(problem: &FlowProblem, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        let free: Vec<f64> = (0..problem.space.n_free())
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        problem.space.extend(&free)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn mass_integrates_constants_and_is_psd() {
        let pr = couette(3, 2, 1.5, ViscosityLaw::Constant(1.0));
        let m = assemble_mass(&pr.space);
        let ones = pr.space.interpolate(|_| [1.0, 0.0]);
        assert!((m.quad_form(&ones) - 1.0).abs() < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u: Vec<f64> = (0..pr.space.n_velocity()).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(m.quad_form(&u) >= 0.0);
        }
        assert!(m.asymmetry() < 1e-15);
    }

    #[test]
    fn mass_matches_monte_carlo() {
        let pr = couette(2, 2, 1.5, ViscosityLaw::Constant(1.0));
        let m = assemble_mass(&pr.space);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..pr.space.n_velocity()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = m.quad_form(&u);
        // Monte-Carlo over each cell using barycentric sampling
        let samples = 40_000;
        let mut est = 0.0;
        for c in 0..pr.space.n_cells() {
            let verts = pr.space.mesh.cells[c];
            let pts: Vec<[f64; 2]> = verts.iter().map(|&v| pr.space.mesh.vertices[v]).collect();
            let area = pr.space.mesh.signed_area(c);
            let nodes = pr.space.cell_nodes[c];
            let mut acc = 0.0;
            for _ in 0..samples {
                let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                let l = [1.0 - r1 - r2, r1, r2];
                let phi = [
                    l[0] * (2.0 * l[0] - 1.0),
                    l[1] * (2.0 * l[1] - 1.0),
                    l[2] * (2.0 * l[2] - 1.0),
                    4.0 * l[0] * l[1],
                    4.0 * l[1] * l[2],
                    4.0 * l[2] * l[0],
                ];
                let _ = &pts;
                let mut v = [0.0; 2];
                for a in 0..6 {
                    v[0] += phi[a] * u[2 * nodes[a]];
                    v[1] += phi[a] * u[2 * nodes[a] + 1];
                }
                acc += v[0] * v[0] + v[1] * v[1];
            }
            est += area * acc / samples as f64;
        }
        assert!((est - exact).abs() < 1e-2 * exact, "mc {est} exact {exact}");
    }

    #[test]
    fn divergence_examples() {
        let pr = couette(3, 2, 1.5, ViscosityLaw::Constant(1.0));
        let b = assemble_divergence(&pr.space);
        let translation = pr.space.interpolate(|_| [0.7, -1.2]);
        assert!(b.mul_vec(&translation).iter().all(|v| v.abs() < 1e-14));
        let stretch = pr.space.interpolate(|p| [p[0], 0.0]);
        let ones = vec![1.0; pr.space.n_pressure()];
        let total: f64 = dot(&b.mul_vec(&stretch), &ones);
        assert!((total - 1.0).abs() < 1e-13);
        let q: Vec<f64> = pr.space.mesh.vertices.iter().map(|v| v[0] + 2.0 * v[1]).collect();
        let lhs = dot(&b.mul_vec(&stretch), &q);
        // int_0^1 int_0^1 (x + 2z) = 1.5
        assert!((lhs - 1.5).abs() < 1e-13);
        let lift_b = b.mul_vec(&pr.lift);
        assert!(lift_b.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn viscous_residual_vanishes_at_rest() {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let pr = FlowProblem::new(
            &domain,
            2,
            2,
            ProblemData::zero(1.0),
            FluidParams::new(1.5, ViscosityLaw::Constant(1.0)).unwrap(),
        )
        .unwrap();
        let zero = vec![0.0; pr.space.n_velocity()];
        let (r, _) = assemble_viscous(&pr, &zero, None, 0.1, 1e-8, 0.5, false).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn viscous_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for law in [
            ViscosityLaw::Constant(1.0),
            ViscosityLaw::BoundedIncreasing { mu0: 1.0, mu1: 2.0 },
            ViscosityLaw::ThermoCoupled {
                mu0: 1.0,
                mu1: 2.0,
                alpha: 0.5,
                beta: 0.8,
            },
        ] {
            let pr = couette(2, 2, 1.5, law);
            let v = random_free(&pr, &mut rng, 0.3);
            let w = random_free(&pr, &mut rng, 1.0);
            let frozen = random_free(&pr, &mut rng, 0.5);
            let (_, k) = assemble_viscous(&pr, &v, Some(&frozen), 0.01, 1e-3, 0.3, true).unwrap();
            let kw = k.unwrap().mul_vec(&w);
            let tau = 1e-5;
            let plus: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + tau * b).collect();
            let minus: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - tau * b).collect();
            let (rp, _) = assemble_viscous(&pr, &plus, Some(&frozen), 0.01, 1e-3, 0.3, false).unwrap();
            let (rm, _) = assemble_viscous(&pr, &minus, Some(&frozen), 0.01, 1e-3, 0.3, false).unwrap();
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * tau)).collect();
            let err = fd.iter().zip(&kw).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = kw.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * norm, "rel err {}", err / norm);
        }
    }

    #[test]
    fn linear_limit_is_symmetric() {
        let pr = couette(2, 2, 2.0, ViscosityLaw::Constant(1.3));
        let zero = vec![0.0; pr.space.n_velocity()];
        let (_, k) = assemble_viscous(&pr, &zero, None, 0.0, 0.0, 0.0, true).unwrap();
        let k = k.unwrap();
        assert!(k.asymmetry() <= 1e-12);
        // residual is linear in vbar
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_free(&pr, &mut rng, 1.0);
        let (r1, _) = assemble_viscous(&pr, &v, None, 0.0, 0.0, 0.0, false).unwrap();
        let (r0, _) = assemble_viscous(&pr, &zero, None, 0.0, 0.0, 0.0, false).unwrap();
        let kv = k.mul_vec(&v);
        for i in 0..r1.len() {
            assert!((r1[i] - r0[i] - kv[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn friction_examples() {
        let mut pr = couette(3, 1, 1.5, ViscosityLaw::Constant(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_free(&pr, &mut rng, 1.0);
        pr.data.threshold = 0.0;
        let (r, _) = assemble_friction(&pr, &v, 1e-3, 0.0, false);
        assert!(r.iter().all(|&x| x == 0.0));
        pr.data.threshold = 0.4;
        // vbar_tau = s~ = s - U xi everywhere on the wall: interpolate the constant
        let s_tilde = pr.data.wall_speed - 1.0;
        let sticking = pr.space.interpolate(|_| [s_tilde, 0.0]);
        let (r, _) = assemble_friction(&pr, &sticking, 1e-3, 0.0, false);
        assert!(r.iter().all(|&x| x.abs() < 1e-10));
        for z in [-3.0, -1e-3, 0.0, 2e-4, 10.0] {
            assert!(dpsi_delta(z, 1e-3).abs() < 1.0);
        }
        // Jacobian check
        let (_, k) = assemble_friction(&pr, &v, 1e-2, 0.0, true);
        let w = random_free(&pr, &mut rng, 1.0);
        let kw = k.unwrap().mul_vec(&w);
        let tau = 1e-6;
        let plus: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + tau * b).collect();
        let minus: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - tau * b).collect();
        let (rp, _) = assemble_friction(&pr, &plus, 1e-2, 0.0, false);
        let (rm, _) = assemble_friction(&pr, &minus, 1e-2, 0.0, false);
        for i in 0..kw.len() {
            assert!(((rp[i] - rm[i]) / (2.0 * tau) - kw[i]).abs() < 1e-6 * (1.0 + kw[i].abs()));
        }
    }

    #[test]
    fn load_examples() {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let params = FluidParams::new(1.5, ViscosityLaw::Constant(1.0)).unwrap();
        let pr = FlowProblem::new(&domain, 1, 1, ProblemData::zero(1.0), params).unwrap();
        assert!(assemble_load(&pr, 0.3).iter().all(|&v| v == 0.0));

        // f = (1, 0): the load on the diagonal midpoint's x dof is the integral
        // of its edge bubble, 4 l_a l_b over two triangles = 2 * (area/3)
        let data = ProblemData {
            force: ForceField::Uniform([1.0, 0.0]),
            ..ProblemData::zero(1.0)
        };
        let pr = FlowProblem::new(&domain, 1, 1, data, params).unwrap();
        let l = assemble_load(&pr, 0.0);
        let mid = pr.space.node_at([0.5, 0.5], 1e-12).unwrap();
        assert!((l[2 * mid] - 2.0 * 0.5 / 3.0).abs() < 1e-15);
        assert_eq!(l[2 * mid + 1], 0.0);

        // decaying modulation drives the load with -e^{-t} v0
        let data = ProblemData {
            lift: LiftField::Couette {
                speed: 1.0,
                height: 1.0,
            },
            xi: XiLaw::Exponential {
                initial: 1.0,
                rate: 1.0,
            },
            ..ProblemData::zero(1.0)
        };
        let pr = FlowProblem::new(&domain, 2, 2, data, params).unwrap();
        let t = 0.4;
        let l = assemble_load(&pr, t);
        // test against phi = interpolated (z, 0): int -e^{-t} (1 - z) z = -e^{-t} / 6
        let phi = pr.space.interpolate(|p| [p[1], 0.0]);
        let val = dot(&l, &phi);
        assert!((val + (-t).exp() / 6.0).abs() < 1e-14, "{val}");
    }
}
