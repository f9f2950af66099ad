//! Finite-element discretization: Taylor-Hood space, given data and the
//! assembly of every term of the regularized step equation.

pub mod assembly;
pub mod data;
pub mod space;

use thiserror::Error;

use crate::constitutive::FluidParams;
use crate::geometry::{build_thin_mesh, GeometryError, ThinDomain};

pub use assembly::{
    assemble_divergence, assemble_friction, assemble_load, assemble_mass, assemble_viscous,
    AssemblyError,
};
pub use data::{DataError, ForceField, LiftField, ProblemData, TemperatureField, XiLaw};
pub use space::{FESpace, NodeConstraint};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Discrete flow problem: the space, the given data, the fluid law, and the
/// lift interpolated at the velocity nodes.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub domain: ThinDomain,
    pub space: FESpace,
    pub data: ProblemData,
    pub params: FluidParams,
    /// Nodal interpolant of the lift `v0`.
    pub lift: Vec<f64>,
}

impl FlowProblem {
    pub fn new(
        domain: &ThinDomain,
        nx: usize,
        nz: usize,
        data: ProblemData,
        params: FluidParams,
    ) -> Result<Self, ProblemError> {
        data.validate(domain)?;
        let mesh = build_thin_mesh(domain, nx, nz)?;
        let space = FESpace::new(mesh);
        let lift = space.interpolate(|p| data.lift(p));
        Ok(Self {
            domain: domain.clone(),
            space,
            data,
            params,
            lift,
        })
    }

    /// Physical velocity `vbar + v0 xi(t)` at the nodes.
    pub fn physical_velocity(&self, vbar: &[f64], t: f64) -> Vec<f64> {
        let xi = self.data.xi(t);
        vbar.iter().zip(&self.lift).map(|(v, l)| v + xi * l).collect()
    }
}
