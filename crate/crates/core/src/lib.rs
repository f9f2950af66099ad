//! Finite-element solver and verification toolkit for unsteady shear-thinning
//! (power-law, `1 < p < 2`) Stokes flow in a thin film, with no-slip top and
//! lateral walls and a Tresca friction bottom wall.
//!
//! Each implicit-Euler step is a smooth saddle-point problem: the friction
//! is smoothed by `delta`, the strain modulus by `eta`, and a vanishing
//! `p'`-growth viscosity `eps` is added on top. The velocity dependence of
//! the viscosity is resolved by a Picard fixed-point loop. An independent
//! dense minimizer checks single steps.

// Validation code rejects NaN with negated comparisons, the element loops
// index several parallel arrays at once, and quadrature constants keep their
// published digits.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::excessive_precision
)]

pub mod constitutive;
pub mod continuation;
pub mod diagnostics;
pub mod discretization;
pub mod geometry;
pub mod mms;
pub mod oracle;
pub mod quadrature;
pub mod scenario;
pub mod sparse;
pub mod stepper;

pub use constitutive::{FluidParams, SymTensor, ViscosityLaw};
pub use continuation::{
    picard_lambda, solve_p_u, time_loop, traj_distance, NormKind, PicardOutcome,
    RegularizationConfig, Trajectory,
};
pub use discretization::{FESpace, FlowProblem, ProblemData};
pub use geometry::{build_thin_mesh, BoundaryTag, Mesh, Profile, ThinDomain};
pub use scenario::{Scenario, ScenarioKind};
pub use stepper::{
    implicit_euler_step, incremental_energy, DiscreteState, Smoothing, StepConfig, StepOperators,
};
