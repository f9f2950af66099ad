//! Given fields of the flow problem: forcing, temperature, friction threshold,
//! wall speed, lift velocity and its time modulation.

use thiserror::Error;

use crate::geometry::{Profile, ThinDomain};
use crate::mms;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("time modulation must satisfy xi(0) = 1, got xi(0) = {0}")]
    XiInitialValue(f64),
    #[error("friction threshold k must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("time horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("couette lift needs a flat film of thickness {expected}, domain profile is {found}")]
    CouetteNeedsFlatFilm { expected: f64, found: String },
    #[error("manufactured solution is defined on the flat unit square only")]
    ManufacturedNeedsUnitSquare,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForceField {
    Zero,
    Uniform([f64; 2]),
    /// Forcing of the manufactured p = 2 solution for constant viscosity.
    Manufactured { viscosity: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureField {
    Uniform(f64),
    /// `theta0 * z * exp(-t)`
    DecayingLinear { theta0: f64 },
}

/// Divergence-free lift matching the lateral profile `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LiftField {
    Zero,
    /// `(U (1 - z / h0), 0)`: moves with speed `U` at the bottom, rests at the top.
    Couette { speed: f64, height: f64 },
}

/// Time modulation of the lateral data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XiLaw {
    Constant { initial: f64 },
    /// `initial * exp(-rate t)`
    Exponential { initial: f64, rate: f64 },
    /// `initial * (1 + slope t)`
    Linear { initial: f64, slope: f64 },
}

impl XiLaw {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            XiLaw::Constant { initial } => initial,
            XiLaw::Exponential { initial, rate } => initial * (-rate * t).exp(),
            XiLaw::Linear { initial, slope } => initial * (1.0 + slope * t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            XiLaw::Constant { .. } => 0.0,
            XiLaw::Exponential { initial, rate } => -rate * initial * (-rate * t).exp(),
            XiLaw::Linear { initial, slope } => initial * slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub force: ForceField,
    pub temperature: TemperatureField,
    /// Friction threshold `k` on the bottom wall.
    pub threshold: f64,
    /// Tangential wall sliding speed `s`.
    pub wall_speed: f64,
    pub lift: LiftField,
    pub xi: XiLaw,
    pub horizon: f64,
}

impl ProblemData {
    /// All-zero data.
    pub fn zero(horizon: f64) -> Self {
        Self {
            force: ForceField::Zero,
            temperature: TemperatureField::Uniform(0.0),
            threshold: 0.0,
            wall_speed: 0.0,
            lift: LiftField::Zero,
            xi: XiLaw::Constant { initial: 1.0 },
            horizon,
        }
    }

    pub fn validate(&self, domain: &ThinDomain) -> Result<(), DataError> {
        let xi0 = self.xi.value(0.0);
        if xi0 != 1.0 {
            return Err(DataError::XiInitialValue(xi0));
        }
        if !(self.threshold >= 0.0) {
            return Err(DataError::NegativeThreshold(self.threshold));
        }
        if !(self.horizon > 0.0) {
            return Err(DataError::NonPositiveHorizon(self.horizon));
        }
        if let LiftField::Couette { height, .. } = self.lift {
            match domain.profile() {
                Profile::Constant { h0 } if h0 == height => {}
                other => {
                    return Err(DataError::CouetteNeedsFlatFilm {
                        expected: height,
                        found: format!("{other:?}"),
                    })
                }
            }
        }
        if let ForceField::Manufactured { .. } = self.force {
            if domain.profile() != (Profile::Constant { h0: 1.0 }) || domain.length() != 1.0 {
                return Err(DataError::ManufacturedNeedsUnitSquare);
            }
        }
        Ok(())
    }

    pub fn force(&self, t: f64, pos: [f64; 2]) -> [f64; 2] {
        match self.force {
            ForceField::Zero => [0.0, 0.0],
            ForceField::Uniform(f) => f,
            ForceField::Manufactured { viscosity } => mms::forcing(viscosity, t, pos),
        }
    }

    pub fn temperature(&self, t: f64, pos: [f64; 2]) -> f64 {
        match self.temperature {
            TemperatureField::Uniform(v) => v,
            TemperatureField::DecayingLinear { theta0 } => theta0 * pos[1] * (-t).exp(),
        }
    }

    pub fn threshold(&self, _t: f64, _x: f64) -> f64 {
        self.threshold
    }

    pub fn wall_speed(&self, _t: f64, _x: f64) -> f64 {
        self.wall_speed
    }

    pub fn lift(&self, pos: [f64; 2]) -> [f64; 2] {
        match self.lift {
            LiftField::Zero => [0.0, 0.0],
            LiftField::Couette { speed, height } => [speed * (1.0 - pos[1] / height), 0.0],
        }
    }

    /// Lateral Dirichlet profile `g`; the lift's trace on the side walls.
    pub fn lateral_profile(&self, pos: [f64; 2]) -> [f64; 2] {
        self.lift(pos)
    }

    pub fn xi(&self, t: f64) -> f64 {
        self.xi.value(t)
    }

    pub fn dxi(&self, t: f64) -> f64 {
        self.xi.derivative(t)
    }

    /// `f + v0 xi'`.
    pub fn modified_force(&self, t: f64, pos: [f64; 2], lift: [f64; 2]) -> [f64; 2] {
        let f = self.force(t, pos);
        let d = self.dxi(t);
        [f[0] + lift[0] * d, f[1] + lift[1] * d]
    }

    /// `s - (v0)_tau xi` at a bottom point with lift tangential value `lift_tau`.
    pub fn shifted_wall_speed(&self, t: f64, x: f64, lift_tau: f64) -> f64 {
        self.wall_speed(t, x) - lift_tau * self.xi(t)
    }

    /// Velocity scale used to size the friction smoothing.
    pub fn velocity_scale(&self) -> f64 {
        let lift = match self.lift {
            LiftField::Zero => 0.0,
            LiftField::Couette { speed, .. } => speed.abs(),
        };
        lift.max(self.wall_speed.abs()).max(1.0)
    }
}
