//! Taylor-Hood P2/P1 space on a thin-film mesh, with the wall constraints
//! folded into the degree-of-freedom map.

use std::collections::HashMap;

use crate::geometry::{BoundaryTag, Mesh};
use crate::quadrature::{segment_gauss3, TRIANGLE_DEGREE4};

/// How a velocity node is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeConstraint {
    Free,
    /// Bottom wall: only the vertical component is fixed (`v . n = 0`).
    Slip,
    /// Top or lateral wall: both components fixed.
    Fixed,
}

/// Cached data at one quadrature point of a cell.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub pos: [f64; 2],
    /// Rule weight times cell area.
    pub weight: f64,
    pub phi: [f64; 6],
    pub dphi: [[f64; 2]; 6],
    /// P1 pressure basis values.
    pub psi: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct CellCache {
    pub area: f64,
    pub points: Vec<QuadPoint>,
}

/// A bottom-wall facet with its three P2 nodes ordered `[start, mid, end]`.
#[derive(Debug, Clone)]
pub struct WallEdge {
    pub nodes: [usize; 3],
    pub length: f64,
}

/// Cached data at one quadrature point of a wall edge.
#[derive(Debug, Clone)]
pub struct WallPoint {
    pub x: f64,
    pub weight: f64,
    pub phi: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct FESpace {
    pub mesh: Mesh,
    /// P2 nodes: mesh vertices first, then edge midpoints.
    pub nodes: Vec<[f64; 2]>,
    /// Local order: three vertices, then midpoints of edges 01, 12, 20.
    pub cell_nodes: Vec<[usize; 6]>,
    pub constraints: Vec<NodeConstraint>,
    /// Velocity dof `2 * node + component` to free index.
    pub dof_map: Vec<Option<usize>>,
    pub free_dofs: Vec<usize>,
    pub wall_edges: Vec<WallEdge>,
    cells: Vec<CellCache>,
    wall_points: Vec<Vec<WallPoint>>,
}

impl FESpace {
    pub fn new(mesh: Mesh) -> Self {
        let nv = mesh.vertices.len();
        let mut nodes: Vec<[f64; 2]> = mesh.vertices.clone();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cell_nodes = Vec::with_capacity(mesh.cells.len());
        for cell in &mesh.cells {
            let mut local = [cell[0], cell[1], cell[2], 0, 0, 0];
            for (k, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                let (va, vb) = (cell[a], cell[b]);
                let key = (va.min(vb), va.max(vb));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    let (pa, pb) = (mesh.vertices[va], mesh.vertices[vb]);
                    nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                    nodes.len() - 1
                });
                local[3 + k] = id;
            }
            cell_nodes.push(local);
        }

        let mut constraints = vec![NodeConstraint::Free; nodes.len()];
        let mut wall_edges = Vec::new();
        let strength = |c: NodeConstraint| match c {
            NodeConstraint::Free => 0,
            NodeConstraint::Slip => 1,
            NodeConstraint::Fixed => 2,
        };
        for facet in &mesh.facets {
            let [a, b] = facet.vertices;
            let mid = edge_ids[&(a.min(b), a.max(b))];
            let kind = match facet.tag {
                BoundaryTag::Gamma0 => NodeConstraint::Slip,
                BoundaryTag::Gamma1 | BoundaryTag::GammaL => NodeConstraint::Fixed,
            };
            for n in [a, b, mid] {
                // the stronger constraint wins at corners
                if strength(kind) > strength(constraints[n]) {
                    constraints[n] = kind;
                }
            }
            if facet.tag == BoundaryTag::Gamma0 {
                let (start, end) = if mesh.vertices[a][0] <= mesh.vertices[b][0] {
                    (a, b)
                } else {
                    (b, a)
                };
                wall_edges.push(WallEdge {
                    nodes: [start, mid, end],
                    length: mesh.facet_length(facet),
                });
            }
        }

        let mut dof_map = vec![None; 2 * nodes.len()];
        let mut free_dofs = Vec::new();
        for (n, c) in constraints.iter().enumerate() {
            for comp in 0..2 {
                let free = match c {
                    NodeConstraint::Free => true,
                    NodeConstraint::Slip => comp == 0,
                    NodeConstraint::Fixed => false,
                };
                if free {
                    dof_map[2 * n + comp] = Some(free_dofs.len());
                    free_dofs.push(2 * n + comp);
                }
            }
        }

        let cells = (0..mesh.cells.len())
            .map(|c| build_cell_cache(&mesh, c))
            .collect();
        let wall_points = wall_edges
            .iter()
            .map(|e| {
                let (xa, xb) = (nodes[e.nodes[0]][0], nodes[e.nodes[2]][0]);
                segment_gauss3()
                    .iter()
                    .map(|&(s, w)| WallPoint {
                        x: xa + s * (xb - xa),
                        weight: w * e.length,
                        phi: [(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)],
                    })
                    .collect()
            })
            .collect();

        debug_assert!(nv <= nodes.len());
        Self {
            mesh,
            nodes,
            cell_nodes,
            constraints,
            dof_map,
            free_dofs,
            wall_edges,
            cells,
            wall_points,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn n_pressure(&self) -> usize {
        self.mesh.vertices.len()
    }

    pub fn cell(&self, c: usize) -> &CellCache {
        &self.cells[c]
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn wall_points(&self, edge: usize) -> &[WallPoint] {
        &self.wall_points[edge]
    }

    /// Interpolates a vector field at the P2 nodes.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_velocity()];
        for (n, &pos) in self.nodes.iter().enumerate() {
            let v = f(pos);
            out[2 * n] = v[0];
            out[2 * n + 1] = v[1];
        }
        out
    }

    /// Gathers the free entries of a full velocity vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d]).collect()
    }

    /// Scatters free values into a full vector with zeros on constrained dofs.
    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_velocity()];
        for (&d, &v) in self.free_dofs.iter().zip(free) {
            out[d] = v;
        }
        out
    }

    /// Velocity value at a cached quadrature point.
    pub fn value_at(&self, c: usize, qp: &QuadPoint, field: &[f64]) -> [f64; 2] {
        let nodes = &self.cell_nodes[c];
        let mut v = [0.0; 2];
        for (a, &n) in nodes.iter().enumerate() {
            v[0] += qp.phi[a] * field[2 * n];
            v[1] += qp.phi[a] * field[2 * n + 1];
        }
        v
    }

    /// Velocity gradient `g[i][j] = d u_i / d x_j` at a cached quadrature point.
    pub fn grad_at(&self, c: usize, qp: &QuadPoint, field: &[f64]) -> [[f64; 2]; 2] {
        let nodes = &self.cell_nodes[c];
        let mut g = [[0.0; 2]; 2];
        for (a, &n) in nodes.iter().enumerate() {
            for i in 0..2 {
                let u = field[2 * n + i];
                g[i][0] += u * qp.dphi[a][0];
                g[i][1] += u * qp.dphi[a][1];
            }
        }
        g
    }

    /// Pressure value at a cached quadrature point.
    pub fn pressure_at(&self, c: usize, qp: &QuadPoint, pressure: &[f64]) -> f64 {
        let verts = &self.mesh.cells[c];
        (0..3).map(|k| qp.psi[k] * pressure[verts[k]]).sum()
    }

    /// Tangential (x) velocity at a wall quadrature point.
    pub fn wall_tangential(&self, edge: usize, wp: &WallPoint, field: &[f64]) -> f64 {
        let e = &self.wall_edges[edge];
        (0..3).map(|k| wp.phi[k] * field[2 * e.nodes[k]]).sum()
    }

    /// `int q` for each P1 pressure basis function.
    pub fn pressure_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_pressure()];
        for (c, cache) in self.cells.iter().enumerate() {
            let verts = self.mesh.cells[c];
            for qp in &cache.points {
                for k in 0..3 {
                    w[verts[k]] += qp.weight * qp.psi[k];
                }
            }
        }
        w
    }

    pub fn area(&self) -> f64 {
        self.cells.iter().map(|c| c.area).sum()
    }

    /// `int pressure / |Omega|`.
    pub fn pressure_mean(&self, pressure: &[f64]) -> f64 {
        let w = self.pressure_weights();
        w.iter().zip(pressure).map(|(a, b)| a * b).sum::<f64>() / self.area()
    }

    /// Finds the node at `pos` (exact coordinate match within `tol`).
    pub fn node_at(&self, pos: [f64; 2], tol: f64) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| (n[0] - pos[0]).abs() <= tol && (n[1] - pos[1]).abs() <= tol)
    }
}

fn build_cell_cache(mesh: &Mesh, c: usize) -> CellCache {
    let [i0, i1, i2] = mesh.cells[c];
    let (p0, p1, p2) = (mesh.vertices[i0], mesh.vertices[i1], mesh.vertices[i2]);
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let area = 0.5 * det;
    // gradients of the barycentric coordinates
    let g1 = [(p2[1] - p0[1]) / det, -(p2[0] - p0[0]) / det];
    let g2 = [-(p1[1] - p0[1]) / det, (p1[0] - p0[0]) / det];
    let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
    let grads = [g0, g1, g2];
    let points = TRIANGLE_DEGREE4
        .iter()
        .map(|&(l, w)| {
            let pos = [
                l[0] * p0[0] + l[1] * p1[0] + l[2] * p2[0],
                l[0] * p0[1] + l[1] * p1[1] + l[2] * p2[1],
            ];
            let (phi, dphi) = p2_basis(l, &grads);
            QuadPoint {
                pos,
                weight: w * area,
                phi,
                dphi,
                psi: l,
            }
        })
        .collect();
    CellCache { area, points }
}

/// Quadratic Lagrange basis and gradients at barycentric point `l`.
pub(crate) fn p2_basis(l: [f64; 3], g: &[[f64; 2]; 3]) -> ([f64; 6], [[f64; 2]; 6]) {
    let mut phi = [0.0; 6];
    let mut dphi = [[0.0; 2]; 6];
    for i in 0..3 {
        phi[i] = l[i] * (2.0 * l[i] - 1.0);
        let s = 4.0 * l[i] - 1.0;
        dphi[i] = [s * g[i][0], s * g[i][1]];
    }
    for (k, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        phi[3 + k] = 4.0 * l[a] * l[b];
        dphi[3 + k] = [
            4.0 * (l[a] * g[b][0] + l[b] * g[a][0]),
            4.0 * (l[a] * g[b][1] + l[b] * g[a][1]),
        ];
    }
    (phi, dphi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_thin_mesh, ThinDomain};

    fn unit_space(nx: usize, nz: usize) -> FESpace {
        let d = ThinDomain::flat(1.0, 1.0).unwrap();
        FESpace::new(build_thin_mesh(&d, nx, nz).unwrap())
    }

    #[test]
    fn single_quad_counts() {
        let s = unit_space(1, 1);
        assert_eq!(s.n_nodes(), 9);
        assert_eq!(s.n_pressure(), 4);
        // enumerate the 3x3 node lattice by hand: top row and both sides are
        // fixed (7 nodes), bottom midpoint slips, the diagonal midpoint is free
        let fixed = s.constraints.iter().filter(|&&c| c == NodeConstraint::Fixed).count();
        let slip = s.constraints.iter().filter(|&&c| c == NodeConstraint::Slip).count();
        assert_eq!((fixed, slip), (7, 1));
        assert_eq!(s.n_free(), 3);
        assert_eq!(2 * 9 - s.n_free(), 15);
        for pos in [[0.0, 1.0], [0.5, 1.0], [1.0, 1.0]] {
            let n = s.node_at(pos, 1e-12).unwrap();
            assert_eq!(s.constraints[n], NodeConstraint::Fixed);
        }
    }

    #[test]
    fn bottom_corner_takes_lateral_constraint() {
        let s = unit_space(3, 2);
        let n = s.node_at([0.0, 0.0], 0.0).unwrap();
        assert_eq!(s.constraints[n], NodeConstraint::Fixed);
        assert!(s.dof_map[2 * n].is_none() && s.dof_map[2 * n + 1].is_none());
        let mid = s.node_at([1.0 / 6.0, 0.0], 1e-12).unwrap();
        assert_eq!(s.constraints[mid], NodeConstraint::Slip);
        assert!(s.dof_map[2 * mid].is_some() && s.dof_map[2 * mid + 1].is_none());
    }

    #[test]
    fn basis_partition_of_unity() {
        let s = unit_space(2, 2);
        for c in 0..s.n_cells() {
            for qp in &s.cell(c).points {
                let sum: f64 = qp.phi.iter().sum();
                assert!((sum - 1.0).abs() < 1e-14);
                let gx: f64 = qp.dphi.iter().map(|d| d[0]).sum();
                assert!(gx.abs() < 1e-12);
            }
        }
        assert!((s.area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quadratic_fields_interpolated_exactly() {
        let s = unit_space(3, 2);
        let f = |p: [f64; 2]| [p[0] * p[1] + p[1] * p[1], 1.0 - p[0] * p[0]];
        let nodal = s.interpolate(f);
        for c in 0..s.n_cells() {
            for qp in &s.cell(c).points {
                let v = s.value_at(c, qp, &nodal);
                let e = f(qp.pos);
                assert!((v[0] - e[0]).abs() < 1e-14 && (v[1] - e[1]).abs() < 1e-14);
                let g = s.grad_at(c, qp, &nodal);
                assert!((g[0][0] - qp.pos[1]).abs() < 1e-12);
                assert!((g[0][1] - (qp.pos[0] + 2.0 * qp.pos[1])).abs() < 1e-12);
                assert!((g[1][0] + 2.0 * qp.pos[0]).abs() < 1e-12);
            }
        }
    }
}
