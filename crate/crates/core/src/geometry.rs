//! Thin-film cross-section geometry and terrain-following triangle meshes.
//!
//! The domain is `{(x, z) : 0 < x < L, 0 < z < h(x)}`. The bottom `z = 0` is the
//! friction wall, the top `z = h(x)` is a no-slip wall and the two vertical
//! sides carry the lateral inflow/outflow profile.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("film length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("film thickness must stay positive, minimum is {0}")]
    NonPositiveThickness(f64),
    #[error("mesh needs at least one cell in each direction (nx = {nx}, nz = {nz})")]
    EmptyGrid { nx: usize, nz: usize },
    #[error("mesh dump line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Closed set of thickness profiles `x -> h(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Constant { h0: f64 },
    /// `h0 + slope * x`
    Affine { h0: f64, slope: f64 },
    /// `mean + amplitude * cos(2 pi x / L)`
    Cosine { mean: f64, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThinDomain {
    length: f64,
    profile: Profile,
    h_min: f64,
    h_max: f64,
}

impl ThinDomain {
    pub fn new(length: f64, profile: Profile) -> Result<Self, GeometryError> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(GeometryError::NonPositiveLength(length));
        }
        let (h_min, h_max) = match profile {
            Profile::Constant { h0 } => (h0, h0),
            Profile::Affine { h0, slope } => {
                let h1 = h0 + slope * length;
                (h0.min(h1), h0.max(h1))
            }
            Profile::Cosine { mean, amplitude } => {
                (mean - amplitude.abs(), mean + amplitude.abs())
            }
        };
        if !(h_min > 0.0) || !h_max.is_finite() {
            return Err(GeometryError::NonPositiveThickness(h_min));
        }
        Ok(Self {
            length,
            profile,
            h_min,
            h_max,
        })
    }

    /// Flat film of thickness `h0`.
    pub fn flat(length: f64, h0: f64) -> Result<Self, GeometryError> {
        Self::new(length, Profile::Constant { h0 })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.profile, Profile::Constant { .. })
    }

    pub fn thickness(&self, x: f64) -> f64 {
        match self.profile {
            Profile::Constant { h0 } => h0,
            Profile::Affine { h0, slope } => h0 + slope * x,
            Profile::Cosine { mean, amplitude } => {
                mean + amplitude * (2.0 * PI * x / self.length).cos()
            }
        }
    }

    pub fn thickness_slope(&self, x: f64) -> f64 {
        match self.profile {
            Profile::Constant { .. } => 0.0,
            Profile::Affine { slope, .. } => slope,
            Profile::Cosine { amplitude, .. } => {
                let k = 2.0 * PI / self.length;
                -amplitude * k * (k * x).sin()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Bottom friction wall `z = 0`.
    Gamma0,
    /// Top no-slip wall `z = h(x)`.
    Gamma1,
    /// Lateral sides `x = 0` and `x = L`.
    GammaL,
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::Gamma0 => "Gamma0",
            BoundaryTag::Gamma1 => "Gamma1",
            BoundaryTag::GammaL => "GammaL",
        };
        f.write_str(s)
    }
}

impl FromStr for BoundaryTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Gamma0" => Ok(BoundaryTag::Gamma0),
            "Gamma1" => Ok(BoundaryTag::Gamma1),
            "GammaL" => Ok(BoundaryTag::GammaL),
            other => Err(format!("unknown boundary tag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacet {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
    /// Outward unit normal.
    pub normal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub cells: Vec<[usize; 3]>,
    pub facets: Vec<BoundaryFacet>,
}

impl Mesh {
    pub fn signed_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cells[cell];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.signed_area(c)).sum()
    }

    pub fn facet_length(&self, facet: &BoundaryFacet) -> f64 {
        let [a, b] = facet.vertices;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        (pb[0] - pa[0]).hypot(pb[1] - pa[1])
    }

    /// Total length of the facets carrying `tag`.
    pub fn boundary_measure(&self, tag: BoundaryTag) -> f64 {
        self.facets
            .iter()
            .filter(|f| f.tag == tag)
            .map(|f| self.facet_length(f))
            .sum()
    }

    pub fn facets_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryFacet> {
        self.facets.iter().filter(move |f| f.tag == tag)
    }

    /// Writes the plain-text dump: `vertex x z`, `cell i j k`, `facet i j TAG`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "vertex {:.17e} {:.17e}", v[0], v[1])?;
        }
        for c in &self.cells {
            writeln!(out, "cell {} {} {}", c[0], c[1], c[2])?;
        }
        for f in &self.facets {
            writeln!(out, "facet {} {} {}", f.vertices[0], f.vertices[1], f.tag)?;
        }
        Ok(())
    }

    /// Reads a dump written by [`Mesh::write_dump`]. Normals are recomputed
    /// from the facet orientation relative to its owning cell.
    pub fn read_dump<R: BufRead>(input: R) -> Result<Self, GeometryError> {
        let mut vertices = Vec::new();
        let mut cells = Vec::new();
        let mut raw_facets = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let Some(kind) = parts.next() else { continue };
            let fields: Vec<&str> = parts.collect();
            let bad = |message: String| GeometryError::Parse {
                line: lineno,
                message,
            };
            match kind {
                "vertex" => {
                    let [x, z] = parse_fields::<f64, 2>(&fields).map_err(bad)?;
                    vertices.push([x, z]);
                }
                "cell" => {
                    let ids = parse_fields::<usize, 3>(&fields).map_err(bad)?;
                    cells.push(ids);
                }
                "facet" => {
                    if fields.len() != 3 {
                        return Err(bad(format!("expected 3 fields, got {}", fields.len())));
                    }
                    let ids = parse_fields::<usize, 2>(&fields[..2]).map_err(bad)?;
                    let tag: BoundaryTag = fields[2].parse().map_err(bad)?;
                    raw_facets.push((ids, tag));
                }
                other => return Err(bad(format!("unknown record `{other}`"))),
            }
        }
        let mut mesh = Mesh {
            vertices,
            cells,
            facets: Vec::new(),
        };
        for (ids, tag) in raw_facets {
            let normal = mesh.outward_normal(ids);
            mesh.facets.push(BoundaryFacet {
                vertices: ids,
                tag,
                normal,
            });
        }
        Ok(mesh)
    }

    fn outward_normal(&self, [a, b]: [usize; 2]) -> [f64; 2] {
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let (dx, dz) = (pb[0] - pa[0], pb[1] - pa[1]);
        let len = dx.hypot(dz);
        let mut n = [dz / len, -dx / len];
        // flip towards the exterior using the owning cell's third vertex
        if let Some(cell) = self
            .cells
            .iter()
            .find(|c| c.contains(&a) && c.contains(&b))
        {
            let third = cell.iter().copied().find(|&v| v != a && v != b).unwrap();
            let pc = self.vertices[third];
            if (pc[0] - pa[0]) * n[0] + (pc[1] - pa[1]) * n[1] > 0.0 {
                n = [-n[0], -n[1]];
            }
        }
        n
    }
}

fn parse_fields<T: FromStr, const N: usize>(fields: &[&str]) -> Result<[T; N], String> {
    if fields.len() != N {
        return Err(format!("expected {N} fields, got {}", fields.len()));
    }
    let parsed: Vec<T> = fields
        .iter()
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse `{s}`")))
        .collect::<Result<_, _>>()?;
    parsed
        .try_into()
        .map_err(|_| "field count mismatch".to_string())
}

/// Structured terrain-following mesh: `nx` columns of `nz` quads, each quad cut
/// along its lower-left to upper-right diagonal.
pub fn build_thin_mesh(domain: &ThinDomain, nx: usize, nz: usize) -> Result<Mesh, GeometryError> {
    if nx == 0 || nz == 0 {
        return Err(GeometryError::EmptyGrid { nx, nz });
    }
    if domain.h_min() <= 0.0 {
        return Err(GeometryError::NonPositiveThickness(domain.h_min()));
    }
    let l = domain.length();
    let id = |i: usize, j: usize| i * (nz + 1) + j;
    let mut vertices = Vec::with_capacity((nx + 1) * (nz + 1));
    for i in 0..=nx {
        // exact endpoints so lateral vertices sit on x = 0 and x = L
        let x = if i == nx { l } else { i as f64 * l / nx as f64 };
        let h = domain.thickness(x);
        for j in 0..=nz {
            let z = if j == nz { h } else { j as f64 * h / nz as f64 };
            vertices.push([x, z]);
        }
    }

    let mut cells = Vec::with_capacity(2 * nx * nz);
    for i in 0..nx {
        for j in 0..nz {
            let a = id(i, j);
            let b = id(i + 1, j);
            let c = id(i + 1, j + 1);
            let d = id(i, j + 1);
            cells.push([a, b, c]);
            cells.push([a, c, d]);
        }
    }

    let mut facets = Vec::with_capacity(2 * (nx + nz));
    for i in 0..nx {
        facets.push(BoundaryFacet {
            vertices: [id(i, 0), id(i + 1, 0)],
            tag: BoundaryTag::Gamma0,
            normal: [0.0, -1.0],
        });
    }
    for i in 0..nx {
        let (a, b) = (id(i, nz), id(i + 1, nz));
        let (pa, pb) = (vertices[a], vertices[b]);
        let (dx, dz) = (pb[0] - pa[0], pb[1] - pa[1]);
        let len = dx.hypot(dz);
        facets.push(BoundaryFacet {
            vertices: [a, b],
            tag: BoundaryTag::Gamma1,
            normal: [-dz / len, dx / len],
        });
    }
    for j in 0..nz {
        facets.push(BoundaryFacet {
            vertices: [id(0, j), id(0, j + 1)],
            tag: BoundaryTag::GammaL,
            normal: [-1.0, 0.0],
        });
        facets.push(BoundaryFacet {
            vertices: [id(nx, j), id(nx, j + 1)],
            tag: BoundaryTag::GammaL,
            normal: [1.0, 0.0],
        });
    }

    Ok(Mesh {
        vertices,
        cells,
        facets,
    })
}

/// Free-function form of [`Mesh::boundary_measure`].
pub fn boundary_measure(mesh: &Mesh, tag: BoundaryTag) -> f64 {
    mesh.boundary_measure(tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite 5-point Gauss-Legendre on `[0, L]`, used as an independent oracle.
    fn gauss_composite(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let nodes = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        let weights = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let h = (b - a) / panels as f64;
        let mut sum = 0.0;
        for k in 0..panels {
            let mid = a + (k as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(weights) {
                sum += w * f(mid + 0.5 * h * x) * 0.5 * h;
            }
        }
        sum
    }

    fn cosine_domain() -> ThinDomain {
        ThinDomain::new(
            1.0,
            Profile::Cosine {
                mean: 1.0,
                amplitude: 0.2,
            },
        )
        .unwrap()
    }

    #[test]
    fn unit_square_single_quad() {
        let d = ThinDomain::flat(1.0, 1.0).unwrap();
        let m = build_thin_mesh(&d, 1, 1).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.cells.len(), 2);
        assert_eq!(m.total_area(), 1.0);
    }

    #[test]
    fn flat_areas_telescope() {
        let d = ThinDomain::flat(1.0, 1.0).unwrap();
        let m = build_thin_mesh(&d, 4, 2).unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        for c in 0..m.cells.len() {
            assert!(m.signed_area(c) > 0.0);
        }
    }

    #[test]
    fn cosine_area_converges_quadratically() {
        let d = cosine_domain();
        let exact = gauss_composite(|x| d.thickness(x), 0.0, 1.0, 64);
        // the oracle is exact to ~1e-15 for this smooth integrand
        assert!((exact - 1.0).abs() < 1e-13);
        let m = build_thin_mesh(&d, 64, 8).unwrap();
        let err = (m.total_area() - exact).abs();
        // trapezoid bound: L^3 / (12 nx^2) * max|h''| with |h''| <= 0.2 (2 pi)^2
        let bound = 0.2 * (2.0 * PI).powi(2) / (12.0 * 64.0 * 64.0);
        assert!(err <= bound, "err {err} bound {bound}");
        let fine = build_thin_mesh(&d, 128, 16).unwrap();
        let err_fine = (fine.total_area() - exact).abs();
        assert!(err_fine <= bound / 4.0 * 1.01);
    }

    #[test]
    fn measures_on_flat_film() {
        let d = ThinDomain::flat(1.0, 1.0).unwrap();
        let m = build_thin_mesh(&d, 3, 5).unwrap();
        assert!((boundary_measure(&m, BoundaryTag::Gamma0) - 1.0).abs() < 1e-15);
        assert!((boundary_measure(&m, BoundaryTag::GammaL) - 2.0).abs() < 1e-15);
        assert!((boundary_measure(&m, BoundaryTag::Gamma1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn top_length_matches_arclength() {
        let d = cosine_domain();
        let arclength = gauss_composite(
            |x| (1.0 + d.thickness_slope(x).powi(2)).sqrt(),
            0.0,
            1.0,
            64,
        );
        let m = build_thin_mesh(&d, 256, 2).unwrap();
        let err = (m.boundary_measure(BoundaryTag::Gamma1) - arclength).abs();
        assert!(err < 1e-4, "arclength error {err}");
    }

    #[test]
    fn facet_tags_and_normals() {
        let d = cosine_domain();
        let m = build_thin_mesh(&d, 8, 3).unwrap();
        for f in &m.facets {
            let [a, b] = f.vertices;
            let (pa, pb) = (m.vertices[a], m.vertices[b]);
            match f.tag {
                BoundaryTag::Gamma0 => {
                    assert_eq!(pa[1], 0.0);
                    assert_eq!(pb[1], 0.0);
                    assert_eq!(f.normal, [0.0, -1.0]);
                }
                BoundaryTag::Gamma1 => {
                    assert!((pa[1] - d.thickness(pa[0])).abs() < 1e-15);
                    assert!((pb[1] - d.thickness(pb[0])).abs() < 1e-15);
                    assert!(f.normal[1] > 0.0);
                }
                BoundaryTag::GammaL => {
                    assert!(pa[0] == 0.0 || pa[0] == 1.0);
                    assert_eq!(pa[0], pb[0]);
                }
            }
            let n = f.normal;
            assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-14);
        }
        assert_eq!(m.facets.len(), 2 * 8 + 2 * 3);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(ThinDomain::flat(1.0, 0.0).is_err());
        assert!(ThinDomain::new(
            1.0,
            Profile::Cosine {
                mean: 0.1,
                amplitude: 0.2
            }
        )
        .is_err());
        assert!(ThinDomain::new(1.0, Profile::Affine { h0: 1.0, slope: -2.0 }).is_err());
        let d = ThinDomain::flat(1.0, 1.0).unwrap();
        assert!(build_thin_mesh(&d, 0, 1).is_err());
    }

    #[test]
    fn refinement_leaves_flat_area_unchanged() {
        let d = ThinDomain::flat(2.0, 0.5).unwrap();
        let a = build_thin_mesh(&d, 3, 2).unwrap().total_area();
        let b = build_thin_mesh(&d, 6, 4).unwrap().total_area();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn dump_round_trip() {
        let d = cosine_domain();
        let m = build_thin_mesh(&d, 4, 2).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let back = Mesh::read_dump(buf.as_slice()).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.cells, m.cells);
        for (a, b) in back.facets.iter().zip(&m.facets) {
            assert_eq!(a.vertices, b.vertices);
            assert_eq!(a.tag, b.tag);
            assert!((a.normal[0] - b.normal[0]).abs() < 1e-12);
            assert!((a.normal[1] - b.normal[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_rejects_garbage() {
        let err = Mesh::read_dump("vertex 0 0\nblob 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 2, .. }));
    }
}
