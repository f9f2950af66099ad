//! Independent reference for single implicit-Euler steps on tiny meshes.
//!
//! The step is posed as a convex minimization over the discrete
//! divergence-free set and solved by projected first-order methods. Nothing
//! here reuses the main assembly: node numbering, shape functions, element
//! loops, quadrature rules and the potential are all rebuilt locally. Fields
//! are exchanged with the main solver through their values at node
//! coordinates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::constitutive::{FluidParams, ViscosityLaw};
use crate::discretization::ProblemData;
use crate::geometry::{BoundaryTag, Mesh};

/// Largest number of free unknowns accepted.
pub const MAX_FREE: usize = 200;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance has {free} free unknowns, cap is {cap}")]
    TooLarge { free: usize, cap: usize },
    #[error("iteration budget exhausted: projected gradient {:.3e}, gap estimate {:.3e}", .best.projected_gradient, .best.gap_estimate)]
    BudgetExhausted { best: Box<OracleSolution> },
    #[error("instance is not an unconstrained-friction quadratic (needs p = 2, constant viscosity, k = 0, eps = 0)")]
    NotQuadratic,
    #[error("reduced Hessian is not positive definite")]
    Factorization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub max_iters: usize,
    pub subgradient_iters: usize,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_iters: 1_000_000,
            subgradient_iters: 2_000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Free unknowns in the oracle's own ordering.
    pub velocity: Vec<f64>,
    pub energy: f64,
    pub iterations: usize,
    /// Norm of the projected (sub)gradient at `velocity`.
    pub projected_gradient: f64,
    /// Upper bound on `energy - min` from strong convexity.
    pub gap_estimate: f64,
    pub certified: bool,
}

/// Gauss-Legendre rule on `[0, 1]` via the Golub-Welsch eigenproblem.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = 2.0 * eig.eigenvectors[(0, i)].powi(2);
            (0.5 * (x + 1.0), 0.5 * w)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// Six-point fully symmetric triangle rule exact to degree four, obtained by
/// Newton's method on the moment equations of the symmetric invariants.
/// Returns barycentric points with weights summing to one.
fn symmetric_triangle_rule() -> Vec<([f64; 3], f64)> {
    // orbit (a, a, 1 - 2a) contributions to 1, sum l^2, l0 l1 l2, sum l^4
    fn orbit(a: f64) -> [f64; 4] {
        let c = 1.0 - 2.0 * a;
        [
            3.0,
            3.0 * (2.0 * a * a + c * c),
            3.0 * a * a * c,
            3.0 * (2.0 * a.powi(4) + c.powi(4)),
        ]
    }
    fn orbit_da(a: f64) -> [f64; 4] {
        let c = 1.0 - 2.0 * a;
        [
            0.0,
            3.0 * (4.0 * a - 4.0 * c),
            3.0 * (2.0 * a * c - 2.0 * a * a),
            3.0 * (8.0 * a.powi(3) - 8.0 * c.powi(3)),
        ]
    }
    // exact normalized integrals of the invariants
    let target = [1.0, 0.5, 1.0 / 60.0, 0.2];
    let mut x = [0.44, 0.09, 0.22, 0.11];
    for _ in 0..50 {
        let (oa, ob) = (orbit(x[0]), orbit(x[1]));
        let (da, db) = (orbit_da(x[0]), orbit_da(x[1]));
        let mut jac = DMatrix::<f64>::zeros(4, 4);
        let mut res = DVector::<f64>::zeros(4);
        for r in 0..4 {
            res[r] = x[2] * oa[r] + x[3] * ob[r] - target[r];
            jac[(r, 0)] = x[2] * da[r];
            jac[(r, 1)] = x[3] * db[r];
            jac[(r, 2)] = oa[r];
            jac[(r, 3)] = ob[r];
        }
        if res.norm() < 1e-16 {
            break;
        }
        let step = jac.lu().solve(&res).expect("moment system is regular near the root");
        for k in 0..4 {
            x[k] -= step[k];
        }
    }
    let mut rule = Vec::with_capacity(6);
    for (a, w) in [(x[0], x[2]), (x[1], x[3])] {
        let c = 1.0 - 2.0 * a;
        rule.push(([a, a, c], w));
        rule.push(([a, c, a], w));
        rule.push(([c, a, a], w));
    }
    rule
}

/// Quadratic shape functions on the reference triangle `(0,0), (1,0), (0,1)`
/// and their `(r, s)` derivatives. Node order: three corners, then the
/// midpoints of edges 01, 12, 20.
fn reference_p2(r: f64, s: f64) -> ([f64; 6], [[f64; 2]; 6]) {
    let l = 1.0 - r - s;
    let n = [
        l * (1.0 - 2.0 * r - 2.0 * s),
        r * (2.0 * r - 1.0),
        s * (2.0 * s - 1.0),
        4.0 * r * l,
        4.0 * r * s,
        4.0 * s * l,
    ];
    let d = [
        [4.0 * r + 4.0 * s - 3.0, 4.0 * r + 4.0 * s - 3.0],
        [4.0 * r - 1.0, 0.0],
        [0.0, 4.0 * s - 1.0],
        [4.0 - 8.0 * r - 4.0 * s, -4.0 * r],
        [4.0 * s, 4.0 * r],
        [-4.0 * s, 4.0 - 4.0 * r - 8.0 * s],
    ];
    (n, d)
}

#[derive(Debug, Clone)]
struct Point {
    weight: f64,
    pos: [f64; 2],
    /// Global node ids of the six local nodes.
    nodes: [usize; 6],
    n: [f64; 6],
    grad: [[f64; 2]; 6],
    /// Pressure (vertex) ids and P1 values.
    verts: [usize; 3],
    p1: [f64; 3],
}

#[derive(Debug, Clone)]
struct WallSample {
    weight: f64,
    x: f64,
    nodes: [usize; 3],
    n: [f64; 3],
}

/// Dense single-step minimization problem.
#[derive(Debug, Clone)]
pub struct DenseInstance {
    node_pos: Vec<[f64; 2]>,
    /// `(node, component)` of each free unknown.
    free: Vec<(usize, usize)>,
    /// Free index of each `(node, component)`, if any.
    index: Vec<[Option<usize>; 2]>,
    points: Vec<Point>,
    wall: Vec<WallSample>,
    /// Divergence constraint, one row per mesh vertex.
    pub div: DMatrix<f64>,
    /// Orthogonal projector onto the kernel of `div`.
    pub projector: DMatrix<f64>,
    /// Orthonormal basis of that kernel.
    kernel: DMatrix<f64>,
    params: FluidParams,
    eps: f64,
    eta: f64,
    delta: f64,
    exact_friction: bool,
    dt: f64,
    prev: Vec<[f64; 2]>,
    frozen: Vec<[f64; 2]>,
    lift: Vec<[f64; 2]>,
    xi: f64,
    dxi: f64,
    t: f64,
    data: ProblemData,
    /// Strong convexity modulus of the energy on the kernel.
    convexity: f64,
    phi_rule: Vec<(f64, f64)>,
}

/// Inputs of one step at time `t = t_prev + dt`.
pub struct StepInputs<'a> {
    pub mesh: &'a Mesh,
    pub data: &'a ProblemData,
    pub params: FluidParams,
    pub eps: f64,
    pub eta: f64,
    pub delta: f64,
    /// Previous shifted velocity, evaluated at node coordinates.
    pub prev: &'a dyn Fn([f64; 2]) -> [f64; 2],
    pub frozen: Option<&'a dyn Fn([f64; 2]) -> [f64; 2]>,
    pub t: f64,
    pub dt: f64,
}

/// Lookup of nodal values by coordinates, for handing fields to the oracle.
pub fn field_from_nodes<'a>(nodes: &'a [[f64; 2]], values: &'a [f64]) -> impl Fn([f64; 2]) -> [f64; 2] + 'a {
    move |pos| {
        let i = nodes
            .iter()
            .position(|n| (n[0] - pos[0]).abs() <= 1e-12 && (n[1] - pos[1]).abs() <= 1e-12)
            .unwrap_or_else(|| panic!("no node at {pos:?}"));
        [values[2 * i], values[2 * i + 1]]
    }
}

pub fn make_instance(inp: &StepInputs) -> Result<DenseInstance, OracleError> {
    let mesh = inp.mesh;
    // nodes numbered in order of first appearance while walking the cells
    let mut ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut node_pos: Vec<[f64; 2]> = Vec::new();
    let mut node_of = |a: usize, b: usize, node_pos: &mut Vec<[f64; 2]>| -> usize {
        let key = (a.min(b), a.max(b));
        *ids.entry(key).or_insert_with(|| {
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            node_pos.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            node_pos.len() - 1
        })
    };
    let mut cell_nodes = Vec::with_capacity(mesh.cells.len());
    for cell in &mesh.cells {
        let [a, b, c] = *cell;
        cell_nodes.push([
            node_of(a, a, &mut node_pos),
            node_of(b, b, &mut node_pos),
            node_of(c, c, &mut node_pos),
            node_of(a, b, &mut node_pos),
            node_of(b, c, &mut node_pos),
            node_of(c, a, &mut node_pos),
        ]);
    }
    let nn = node_pos.len();

    // slip first, then Dirichlet overrides
    let mut fixed = vec![[false; 2]; nn];
    let mut wall_facets = Vec::new();
    for pass in [BoundaryTag::Gamma0, BoundaryTag::Gamma1] {
        for f in &mesh.facets {
            let dirichlet = f.tag != BoundaryTag::Gamma0;
            if (pass == BoundaryTag::Gamma0) == dirichlet {
                continue;
            }
            let [a, b] = f.vertices;
            let ns = [node_of(a, a, &mut node_pos), node_of(b, b, &mut node_pos), node_of(a, b, &mut node_pos)];
            for n in ns {
                if dirichlet {
                    fixed[n] = [true, true];
                } else {
                    fixed[n][1] = true;
                }
            }
            if !dirichlet {
                wall_facets.push((a, b));
            }
        }
    }
    debug_assert_eq!(node_pos.len(), nn);

    let mut free = Vec::new();
    let mut index = vec![[None; 2]; nn];
    for n in 0..nn {
        for c in 0..2 {
            if !fixed[n][c] {
                index[n][c] = Some(free.len());
                free.push((n, c));
            }
        }
    }
    if free.len() > MAX_FREE {
        return Err(OracleError::TooLarge {
            free: free.len(),
            cap: MAX_FREE,
        });
    }

    let rule = symmetric_triangle_rule();
    let mut points = Vec::new();
    for (ci, cell) in mesh.cells.iter().enumerate() {
        let [x0, x1, x2] = [mesh.vertices[cell[0]], mesh.vertices[cell[1]], mesh.vertices[cell[2]]];
        let j = [[x1[0] - x0[0], x2[0] - x0[0]], [x1[1] - x0[1], x2[1] - x0[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        // inverse transpose
        let jit = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        for &(l, w) in &rule {
            let (r, s) = (l[1], l[2]);
            let (n, d) = reference_p2(r, s);
            let mut grad = [[0.0; 2]; 6];
            for a in 0..6 {
                grad[a] = [
                    jit[0][0] * d[a][0] + jit[0][1] * d[a][1],
                    jit[1][0] * d[a][0] + jit[1][1] * d[a][1],
                ];
            }
            points.push(Point {
                weight: w * 0.5 * det.abs(),
                pos: [x0[0] + j[0][0] * r + j[0][1] * s, x0[1] + j[1][0] * r + j[1][1] * s],
                nodes: cell_nodes[ci],
                n,
                grad,
                verts: *cell,
                p1: [1.0 - r - s, r, s],
            });
        }
    }

    let gauss3 = gauss_legendre(3);
    let mut wall = Vec::new();
    for (a, b) in wall_facets {
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let nodes = [ids[&(a, a)], ids[&(a.min(b), a.max(b))], ids[&(b, b)]];
        for &(s, w) in &gauss3 {
            wall.push(WallSample {
                weight: w * len,
                x: pa[0] + s * (pb[0] - pa[0]),
                nodes,
                n: [(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)],
            });
        }
    }

    let nv = mesh.vertices.len();
    let nf = free.len();
    let mut div = DMatrix::<f64>::zeros(nv, nf);
    for pt in &points {
        for k in 0..3 {
            for a in 0..6 {
                for c in 0..2 {
                    if let Some(j) = index[pt.nodes[a]][c] {
                        div[(pt.verts[k], j)] += pt.weight * pt.p1[k] * pt.grad[a][c];
                    }
                }
            }
        }
    }
    let svd = div.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut projector = DMatrix::<f64>::identity(nf, nf);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > 1e-10 * smax {
            let row = vt.row(i).transpose();
            projector -= &row * row.transpose();
        }
    }
    let eig = SymmetricEigen::new(projector.clone());
    let cols: Vec<DVector<f64>> = (0..nf)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let kernel = if cols.is_empty() {
        DMatrix::<f64>::zeros(nf, 0)
    } else {
        DMatrix::from_columns(&cols)
    };

    let sample = |f: &dyn Fn([f64; 2]) -> [f64; 2]| -> Vec<[f64; 2]> { node_pos.iter().map(|&p| f(p)).collect() };
    let prev = sample(inp.prev);
    let frozen = match inp.frozen {
        Some(f) => sample(f),
        None => vec![[0.0; 2]; nn],
    };
    let lift = sample(&|p| inp.data.lift(p));

    let mut inst = DenseInstance {
        node_pos,
        free,
        index,
        points,
        wall,
        div,
        projector,
        kernel,
        params: inp.params,
        eps: inp.eps,
        eta: inp.eta,
        delta: inp.delta,
        exact_friction: inp.delta <= 1e-6,
        dt: inp.dt,
        prev,
        frozen,
        lift,
        xi: inp.data.xi(inp.t),
        dxi: inp.data.dxi(inp.t),
        t: inp.t,
        data: inp.data.clone(),
        convexity: 0.0,
        phi_rule: gauss_legendre(8),
    };
    inst.convexity = inst.kinetic_modulus();
    Ok(inst)
}

impl DenseInstance {
    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn uses_exact_friction(&self) -> bool {
        self.exact_friction
    }

    /// Free vector sampled from a field given at node coordinates.
    pub fn sample(&self, f: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        self.free.iter().map(|&(n, c)| f(self.node_pos[n])[c]).collect()
    }

    /// `(position, value)` of every node for a free vector; constrained
    /// components are zero.
    pub fn nodal_values(&self, v: &[f64]) -> Vec<([f64; 2], [f64; 2])> {
        let full = self.full(v);
        self.node_pos.iter().cloned().zip(full).collect()
    }

    fn full(&self, v: &[f64]) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.node_pos.len()];
        for (&(n, c), &x) in self.free.iter().zip(v) {
            out[n][c] = x;
        }
        out
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        (&self.projector * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    pub fn constraint_residual(&self, v: &[f64]) -> f64 {
        (&self.div * DVector::from_column_slice(v)).norm()
    }

    fn interp(pt: &Point, field: &[[f64; 2]]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for a in 0..6 {
            v[0] += pt.n[a] * field[pt.nodes[a]][0];
            v[1] += pt.n[a] * field[pt.nodes[a]][1];
        }
        v
    }

    /// Strain `[xx, xz, zz]`.
    fn strain(pt: &Point, field: &[[f64; 2]]) -> [f64; 3] {
        let mut g = [[0.0; 2]; 2];
        for a in 0..6 {
            for i in 0..2 {
                g[i][0] += field[pt.nodes[a]][i] * pt.grad[a][0];
                g[i][1] += field[pt.nodes[a]][i] * pt.grad[a][1];
            }
        }
        [g[0][0], 0.5 * (g[0][1] + g[1][0]), g[1][1]]
    }

    fn contract(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + 2.0 * a[1] * b[1] + a[2] * b[2]
    }

    /// `int_0^m 2 mu(s) s^{p-1} ds` by composite Gauss-Legendre on a mesh
    /// graded geometrically toward zero.
    fn potential(&self, temp: f64, vel: [f64; 2], m: f64) -> f64 {
        if m <= 0.0 {
            return 0.0;
        }
        let p = self.params.p;
        if let ViscosityLaw::Constant(c) = self.params.law {
            return 2.0 * c * m.powf(p) / p;
        }
        let f = |s: f64| 2.0 * self.params.law.eval(temp, vel, s) * s.powf(p - 1.0);
        let mut total = 0.0;
        let mut hi = m;
        for _ in 0..80 {
            let lo = 0.5 * hi;
            for &(x, w) in &self.phi_rule {
                total += (hi - lo) * w * f(lo + x * (hi - lo));
            }
            hi = lo;
        }
        // remaining sliver: mu is flat to second order near zero
        let mu_tail = self.params.law.eval(temp, vel, 0.0);
        total + 2.0 * mu_tail * hi.powf(p) / p
    }

    fn wall_terms(&self, full: &[[f64; 2]], w: &WallSample) -> (f64, f64) {
        let v: f64 = (0..3).map(|a| w.n[a] * full[w.nodes[a]][0]).sum();
        let lift: f64 = (0..3).map(|a| w.n[a] * self.lift[w.nodes[a]][0]).sum();
        let s_tilde = self.data.wall_speed(self.t, w.x) - lift * self.xi;
        (self.data.threshold(self.t, w.x), v - s_tilde)
    }

    fn moving(&self, v: &[[f64; 2]]) -> Vec<[f64; 2]> {
        v.iter()
            .zip(&self.lift)
            .map(|(a, l)| [a[0] + self.xi * l[0], a[1] + self.xi * l[1]])
            .collect()
    }

    pub fn energy(&self, v: &[f64]) -> f64 {
        let full = self.full(v);
        let total = self.moving(&full);
        let p = &self.params;
        let pc = p.p_conj;
        let mut e = 0.0;
        for pt in &self.points {
            let d = Self::interp(pt, &full);
            let dp = Self::interp(pt, &self.prev);
            let diff = [d[0] - dp[0], d[1] - dp[1]];
            e += pt.weight * 0.5 * (diff[0] * diff[0] + diff[1] * diff[1]) / self.dt;

            let u = Self::interp(pt, &self.frozen);
            let l = Self::interp(pt, &self.lift);
            let vel = [u[0] + self.xi * l[0], u[1] + self.xi * l[1]];
            let temp = self.data.temperature(self.t, pt.pos);
            let st = Self::strain(pt, &total);
            let m = (Self::contract(st, st) + self.eta * self.eta).sqrt();
            e += pt.weight * (self.potential(temp, vel, m) - self.potential(temp, vel, self.eta));
            if self.eps > 0.0 {
                let sb = Self::strain(pt, &full);
                let q = Self::contract(sb, sb) + self.eta * self.eta;
                e += pt.weight * 2.0 * self.eps / pc * (q.powf(0.5 * pc) - self.eta.powf(pc));
            }
            let f = self.data.force(self.t, pt.pos);
            let fb = [f[0] + l[0] * self.dxi, f[1] + l[1] * self.dxi];
            e -= pt.weight * (fb[0] * d[0] + fb[1] * d[1]);
        }
        for w in &self.wall {
            let (k, z) = self.wall_terms(&full, w);
            let psi = if self.exact_friction {
                z.abs()
            } else {
                (z * z + self.delta * self.delta).sqrt() - self.delta
            };
            e += w.weight * k * psi;
        }
        e
    }

    /// Gradient (a subgradient where the friction kink is active).
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let full = self.full(v);
        let total = self.moving(&full);
        let p = &self.params;
        let mut g = vec![0.0; self.free.len()];
        for pt in &self.points {
            let d = Self::interp(pt, &full);
            let dp = Self::interp(pt, &self.prev);
            let u = Self::interp(pt, &self.frozen);
            let l = Self::interp(pt, &self.lift);
            let vel = [u[0] + self.xi * l[0], u[1] + self.xi * l[1]];
            let temp = self.data.temperature(self.t, pt.pos);
            let st = Self::strain(pt, &total);
            let m = (Self::contract(st, st) + self.eta * self.eta).sqrt();
            let mut stress = [0.0; 3];
            if m > 0.0 {
                let c = 2.0 * p.law.eval(temp, vel, m) * m.powf(p.p - 2.0);
                stress = [c * st[0], c * st[1], c * st[2]];
            }
            if self.eps > 0.0 {
                let sb = Self::strain(pt, &full);
                let q = Self::contract(sb, sb) + self.eta * self.eta;
                if q > 0.0 {
                    let c = 2.0 * self.eps * q.powf(0.5 * (p.p_conj - 2.0));
                    for k in 0..3 {
                        stress[k] += c * sb[k];
                    }
                }
            }
            let f = self.data.force(self.t, pt.pos);
            let vec_part = [
                (d[0] - dp[0]) / self.dt - f[0] - l[0] * self.dxi,
                (d[1] - dp[1]) / self.dt - f[1] - l[1] * self.dxi,
            ];
            for a in 0..6 {
                let gr = pt.grad[a];
                // strain of phi_a e_x and phi_a e_z
                let ex = [gr[0], 0.5 * gr[1], 0.0];
                let ez = [0.0, 0.5 * gr[0], gr[1]];
                for (c, e) in [(0usize, ex), (1, ez)] {
                    if let Some(j) = self.index[pt.nodes[a]][c] {
                        g[j] += pt.weight * (Self::contract(stress, e) + vec_part[c] * pt.n[a]);
                    }
                }
            }
        }
        for w in &self.wall {
            let (k, z) = self.wall_terms(&full, w);
            let slope = if self.exact_friction {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            } else {
                z / (z * z + self.delta * self.delta).sqrt()
            };
            for a in 0..3 {
                if let Some(j) = self.index[w.nodes[a]][0] {
                    g[j] += w.weight * k * slope * w.n[a];
                }
            }
        }
        g
    }

    /// Smallest eigenvalue of the kinetic Hessian on the kernel: a lower
    /// bound for the strong convexity modulus of the energy there.
    fn kinetic_modulus(&self) -> f64 {
        let nf = self.free.len();
        if self.kernel.ncols() == 0 {
            return f64::INFINITY;
        }
        let mut m = DMatrix::<f64>::zeros(nf, nf);
        for pt in &self.points {
            for a in 0..6 {
                for b in 0..6 {
                    for c in 0..2 {
                        if let (Some(i), Some(j)) = (self.index[pt.nodes[a]][c], self.index[pt.nodes[b]][c]) {
                            m[(i, j)] += pt.weight * pt.n[a] * pt.n[b] / self.dt;
                        }
                    }
                }
            }
        }
        let reduced = self.kernel.transpose() * m * &self.kernel;
        SymmetricEigen::new(reduced).eigenvalues.min()
    }

    fn is_quadratic(&self) -> bool {
        self.params.p == 2.0
            && matches!(self.params.law, ViscosityLaw::Constant(_))
            && self.data.threshold == 0.0
            && self.eps == 0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes the step energy over the divergence-free set.
///
/// A projected subgradient phase with Polyak steps against a running target
/// is followed by projected gradient polishing (Barzilai-Borwein steps with
/// backtracking) for the smoothed functional, or diminishing steps for the
/// exact friction term.
pub fn oracle_step(inst: &DenseInstance, cfg: &OracleConfig) -> Result<OracleSolution, OracleError> {
    let nf = inst.n_free();
    let mut x = inst.project(&inst.sample(&|_| [0.0, 0.0]));
    if nf == 0 || inst.kernel.ncols() == 0 {
        return Ok(OracleSolution {
            energy: inst.energy(&x),
            velocity: x,
            iterations: 0,
            projected_gradient: 0.0,
            gap_estimate: 0.0,
            certified: true,
        });
    }
    // start from the previous velocity, projected onto the constraint set
    let prev_free: Vec<f64> = inst
        .free
        .iter()
        .map(|&(n, c)| inst.prev[n][c])
        .collect();
    x = inst.project(&prev_free);

    let certify = |g: &[f64], pg: &[f64]| norm(pg) <= cfg.tol * (1.0 + norm(g));
    let mut fx = inst.energy(&x);
    let mut best = (x.clone(), fx, f64::INFINITY);
    let mut iters = 0;

    // Polyak phase: target below the best value seen, halved on overshoot
    let mut gap_guess = 1.0 + fx.abs();
    for _ in 0..cfg.subgradient_iters.min(cfg.max_iters) {
        let g = inst.gradient(&x);
        let pg = inst.project(&g);
        let pn = norm(&pg);
        if pn < best.2 && fx <= best.1 {
            best.2 = pn;
        }
        if certify(&g, &pg) {
            break;
        }
        iters += 1;
        let target = best.1 - gap_guess;
        let step = (fx - target) / (pn * pn);
        let y: Vec<f64> = x.iter().zip(&pg).map(|(a, b)| a - step * b).collect();
        let fy = inst.energy(&y);
        if fy < best.1 {
            best = (y.clone(), fy, f64::INFINITY);
        } else {
            gap_guess *= 0.5;
        }
        x = y;
        fx = fy;
    }
    x = best.0.clone();
    fx = best.1;

    let mut g = inst.gradient(&x);
    let mut pg = inst.project(&g);
    let mut best_pg = norm(&pg);
    let mut best = (x.clone(), fx);
    let mut alpha = 1.0 / (1.0 + best_pg);
    let mut last: Option<(Vec<f64>, Vec<f64>)> = None;
    while iters < cfg.max_iters {
        if certify(&g, &pg) {
            return Ok(OracleSolution {
                velocity: x,
                energy: fx,
                iterations: iters,
                projected_gradient: norm(&pg),
                gap_estimate: norm(&pg).powi(2) / (2.0 * inst.convexity),
                certified: true,
            });
        }
        iters += 1;
        if inst.exact_friction {
            let step = 1.0 / ((iters as f64).sqrt() * (1.0 + norm(&pg)));
            x = x.iter().zip(&pg).map(|(a, b)| a - step * b).collect();
            fx = inst.energy(&x);
            g = inst.gradient(&x);
            pg = inst.project(&g);
            let n = norm(&pg);
            if fx < best.1 {
                best = (x.clone(), fx);
            }
            best_pg = best_pg.min(n);
            continue;
        }
        if let Some((xo, po)) = &last {
            let s: Vec<f64> = x.iter().zip(xo).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = pg.iter().zip(po).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                alpha = dot(&s, &s) / sy;
            }
        }
        let pn2 = dot(&pg, &pg);
        let mut accepted = false;
        for _ in 0..60 {
            let y: Vec<f64> = x.iter().zip(&pg).map(|(a, b)| a - alpha * b).collect();
            let fy = inst.energy(&y);
            let sufficient = fy <= fx - 1e-4 * alpha * pn2;
            // at rounding level the energy cannot resolve progress; fall
            // back on the projected gradient norm
            let flat = fy <= fx + 1e-14 * (1.0 + fx.abs());
            let (gy, pgy) = if sufficient || flat {
                let gy = inst.gradient(&y);
                let pgy = inst.project(&gy);
                (gy, pgy)
            } else {
                (Vec::new(), Vec::new())
            };
            if sufficient || (flat && norm(&pgy) < pn2.sqrt()) {
                last = Some((x.clone(), pg.clone()));
                x = y;
                fx = fy;
                g = gy;
                pg = pgy;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if fx <= best.1 {
            best = (x.clone(), fx);
        }
        best_pg = best_pg.min(norm(&pg));
    }
    let g = inst.gradient(&best.0);
    let pn = norm(&inst.project(&g));
    Err(OracleError::BudgetExhausted {
        best: Box::new(OracleSolution {
            velocity: best.0,
            energy: best.1,
            iterations: iters,
            projected_gradient: pn.min(best_pg),
            gap_estimate: pn * pn / (2.0 * inst.convexity),
            certified: false,
        }),
    })
}

/// Exact minimizer of a quadratic instance: the Hessian is recovered column
/// by column from gradient differences, then the kernel-reduced system is
/// solved by Cholesky.
pub fn oracle_kkt(inst: &DenseInstance) -> Result<OracleSolution, OracleError> {
    if !inst.is_quadratic() {
        return Err(OracleError::NotQuadratic);
    }
    let nf = inst.n_free();
    let zero = vec![0.0; nf];
    let g0 = inst.gradient(&zero);
    let mut h = DMatrix::<f64>::zeros(nf, nf);
    for j in 0..nf {
        let mut e = zero.clone();
        e[j] = 1.0;
        let gj = inst.gradient(&e);
        for i in 0..nf {
            h[(i, j)] = gj[i] - g0[i];
        }
    }
    let h = 0.5 * (&h + h.transpose());
    let z = &inst.kernel;
    let reduced = z.transpose() * &h * z;
    let rhs = -(z.transpose() * DVector::from_column_slice(&g0));
    let chol = reduced.cholesky().ok_or(OracleError::Factorization)?;
    let y = chol.solve(&rhs);
    let v = (z * y).as_slice().to_vec();
    let g = inst.gradient(&v);
    let pn = norm(&inst.project(&g));
    Ok(OracleSolution {
        energy: inst.energy(&v),
        velocity: v,
        iterations: 1,
        projected_gradient: pn,
        gap_estimate: pn * pn / (2.0 * inst.convexity),
        certified: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::LiftField;
    use crate::geometry::{build_thin_mesh, ThinDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(nx: usize, nz: usize, p: f64, data: ProblemData, eps: f64, delta: f64) -> DenseInstance {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let mesh = build_thin_mesh(&domain, nx, nz).unwrap();
        let params = FluidParams::new(p, ViscosityLaw::Constant(1.0)).unwrap();
        let zero = |_: [f64; 2]| [0.0, 0.0];
        make_instance(&StepInputs {
            mesh: &mesh,
            data: &data,
            params,
            eps,
            eta: 1e-6,
            delta,
            prev: &zero,
            frozen: None,
            t: 0.1,
            dt: 0.1,
        })
        .unwrap()
    }

    fn couette_data(k: f64) -> ProblemData {
        ProblemData {
            threshold: k,
            wall_speed: 0.3,
            lift: LiftField::Couette {
                speed: 1.0,
                height: 1.0,
            },
            ..ProblemData::zero(1.0)
        }
    }

    #[test]
    fn derived_rules_are_exact() {
        let rule = symmetric_triangle_rule();
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let c = 0;
                let q: f64 = rule.iter().map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32)).sum();
                let exact = 2.0 * fact(a) * fact(b) * fact(c) / fact(a + b + c + 2);
                assert!((q - exact).abs() < 1e-15, "{a} {b}");
            }
        }
        let g = gauss_legendre(3);
        for k in 0..6 {
            let q: f64 = g.iter().map(|(x, w)| w * x.powi(k)).sum();
            assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn size_cap() {
        let domain = ThinDomain::flat(1.0, 1.0).unwrap();
        let mesh = build_thin_mesh(&domain, 10, 6).unwrap();
        let data = ProblemData::zero(1.0);
        let zero = |_: [f64; 2]| [0.0, 0.0];
        let r = make_instance(&StepInputs {
            mesh: &mesh,
            data: &data,
            params: FluidParams::new(1.5, ViscosityLaw::Constant(1.0)).unwrap(),
            eps: 0.0,
            eta: 1e-6,
            delta: 1e-4,
            prev: &zero,
            frozen: None,
            t: 0.1,
            dt: 0.1,
        });
        assert!(matches!(r, Err(OracleError::TooLarge { .. })));
        let small = instance(1, 1, 1.5, ProblemData::zero(1.0), 0.0, 1e-4);
        assert!(small.n_free() <= MAX_FREE);
    }

    #[test]
    fn projector_algebra() {
        let inst = instance(2, 2, 1.5, couette_data(0.1), 0.0, 1e-4);
        let bp = &inst.div * &inst.projector;
        assert!(bp.amax() <= 1e-12);
        let p2 = &inst.projector * &inst.projector;
        assert!((p2 - &inst.projector).amax() <= 1e-12);
    }

    #[test]
    fn zero_data_gives_zero() {
        let inst = instance(2, 1, 1.5, ProblemData::zero(1.0), 0.0, 1e-4);
        let sol = oracle_step(&inst, &OracleConfig::default()).unwrap();
        assert!(sol.velocity.iter().all(|&v| v == 0.0));
        assert_eq!(sol.energy, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = instance(2, 1, 1.5, couette_data(0.2), 0.05, 1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..inst.n_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = inst.gradient(&v);
        for j in 0..inst.n_free() {
            let h = 1e-6;
            let mut a = v.clone();
            let mut b = v.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (inst.energy(&a) - inst.energy(&b)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "{j}: {fd} {}", g[j]);
        }
    }

    #[test]
    fn midpoint_convexity() {
        let inst = instance(2, 1, 1.5, couette_data(0.2), 0.05, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a: Vec<f64> = (0..inst.n_free()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..inst.n_free()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (ea, eb, em) = (inst.energy(&a), inst.energy(&b), inst.energy(&m));
            assert!(em <= 0.5 * (ea + eb) + 1e-10 * (1.0 + ea.abs() + eb.abs()));
        }
    }

    #[test]
    fn quadratic_instance_matches_dense_kkt() {
        let data = ProblemData {
            force: crate::discretization::ForceField::Uniform([1.0, -0.5]),
            ..couette_data(0.0)
        };
        let inst = instance(2, 2, 2.0, data, 0.0, 1e-4);
        let kkt = oracle_kkt(&inst).unwrap();
        let sol = oracle_step(&inst, &OracleConfig::default()).unwrap();
        let scale = kkt.velocity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in sol.velocity.iter().zip(&kkt.velocity) {
            assert!((a - b).abs() <= 1e-8 * scale.max(1.0));
        }
        assert!(inst.constraint_residual(&kkt.velocity) < 1e-12);
    }

    #[test]
    fn smoothed_couette_is_certified() {
        let inst = instance(2, 1, 1.5, couette_data(0.1), 0.0, 1e-4);
        let sol = oracle_step(&inst, &OracleConfig::default()).unwrap();
        assert!(sol.certified);
        assert!(sol.energy < inst.energy(&vec![0.0; inst.n_free()]));
    }

    #[test]
    fn exact_friction_reports_budget() {
        let inst = instance(2, 1, 1.5, couette_data(0.1), 0.0, 1e-8);
        assert!(inst.uses_exact_friction());
        let cfg = OracleConfig {
            max_iters: 500,
            subgradient_iters: 100,
            tol: 1e-8,
        };
        match oracle_step(&inst, &cfg) {
            Ok(sol) => assert!(sol.certified),
            Err(OracleError::BudgetExhausted { best }) => {
                assert!(best.gap_estimate.is_finite());
                assert!(best.energy <= inst.energy(&vec![0.0; inst.n_free()]));
            }
            Err(e) => panic!("{e}"),
        }
    }
}
