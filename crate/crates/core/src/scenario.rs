//! Builtin problem setups. Each satisfies the compatibility conditions of
//! the lift analytically.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::constitutive::{ConstitutiveError, FluidParams, ViscosityLaw};
use crate::discretization::{
    FlowProblem, ForceField, LiftField, ProblemData, ProblemError, TemperatureField, XiLaw,
};
use crate::geometry::{Profile, ThinDomain};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?} (expected zero, couette, coupled or mms-p2)")]
    Unknown(String),
    #[error("scenario {scenario} requires {requirement}")]
    Requirement {
        scenario: ScenarioKind,
        requirement: &'static str,
    },
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// All data zero.
    Zero,
    /// Flat film sheared by a lift `(U (1 - z/h0), 0)` over a sliding wall.
    Couette,
    /// Couette flow with a temperature- and velocity-dependent viscosity.
    Coupled,
    /// Manufactured p = 2 solution on the unit square.
    MmsP2,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Zero => "zero",
            ScenarioKind::Couette => "couette",
            ScenarioKind::Coupled => "coupled",
            ScenarioKind::MmsP2 => "mms-p2",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(ScenarioKind::Zero),
            "couette" => Ok(ScenarioKind::Couette),
            "coupled" => Ok(ScenarioKind::Coupled),
            "mms-p2" => Ok(ScenarioKind::MmsP2),
            other => Err(ScenarioError::Unknown(other.to_string())),
        }
    }
}

/// Tunable parameters of the builtin scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub p: f64,
    pub law: ViscosityLaw,
    pub length: f64,
    pub profile: Profile,
    /// Lift speed `U` at the bottom wall.
    pub lift_speed: f64,
    pub wall_speed: f64,
    pub threshold: f64,
    pub force: [f64; 2],
    pub theta0: f64,
    pub xi: XiLaw,
    pub horizon: f64,
    pub nx: usize,
    pub nz: usize,
}

impl Scenario {
    pub fn defaults(kind: ScenarioKind) -> Self {
        let base = Self {
            kind,
            p: 1.5,
            law: ViscosityLaw::Constant(1.0),
            length: 1.0,
            profile: Profile::Constant { h0: 1.0 },
            lift_speed: 0.0,
            wall_speed: 0.0,
            threshold: 0.0,
            force: [0.0, 0.0],
            theta0: 0.0,
            xi: XiLaw::Constant { initial: 1.0 },
            horizon: 1.0,
            nx: 4,
            nz: 2,
        };
        match kind {
            ScenarioKind::Zero => base,
            ScenarioKind::Couette => Self {
                lift_speed: 1.0,
                wall_speed: 0.3,
                threshold: 0.2,
                ..base
            },
            ScenarioKind::Coupled => Self {
                law: ViscosityLaw::ThermoCoupled {
                    mu0: 1.0,
                    mu1: 2.0,
                    alpha: 1.0,
                    beta: 0.5,
                },
                lift_speed: 1.0,
                wall_speed: 0.3,
                threshold: 0.2,
                theta0: 1.0,
                ..base
            },
            ScenarioKind::MmsP2 => Self {
                p: 2.0,
                nx: 8,
                nz: 4,
                ..base
            },
        }
    }

    pub fn domain(&self) -> Result<ThinDomain, ScenarioError> {
        ThinDomain::new(self.length, self.profile)
            .map_err(|e| ScenarioError::Problem(ProblemError::Geometry(e)))
    }

    pub fn params(&self) -> Result<FluidParams, ScenarioError> {
        Ok(FluidParams::new(self.p, self.law)?)
    }

    pub fn data(&self) -> Result<ProblemData, ScenarioError> {
        let h0 = match self.profile {
            Profile::Constant { h0 } => Some(h0),
            _ => None,
        };
        let requirement = |requirement| ScenarioError::Requirement {
            scenario: self.kind,
            requirement,
        };
        let base = ProblemData {
            xi: self.xi,
            horizon: self.horizon,
            ..ProblemData::zero(self.horizon)
        };
        Ok(match self.kind {
            ScenarioKind::Zero => base,
            ScenarioKind::Couette | ScenarioKind::Coupled => {
                let height = h0.ok_or_else(|| requirement("a constant film thickness"))?;
                if self.kind == ScenarioKind::Coupled
                    && !matches!(self.law, ViscosityLaw::ThermoCoupled { .. })
                {
                    return Err(requirement("the thermo-coupled viscosity family"));
                }
                ProblemData {
                    force: if self.force == [0.0, 0.0] {
                        ForceField::Zero
                    } else {
                        ForceField::Uniform(self.force)
                    },
                    temperature: if self.kind == ScenarioKind::Coupled {
                        TemperatureField::DecayingLinear { theta0: self.theta0 }
                    } else {
                        TemperatureField::Uniform(0.0)
                    },
                    threshold: self.threshold,
                    wall_speed: self.wall_speed,
                    lift: LiftField::Couette {
                        speed: self.lift_speed,
                        height,
                    },
                    ..base
                }
            }
            ScenarioKind::MmsP2 => {
                let mu = match self.law {
                    ViscosityLaw::Constant(mu) if self.p == 2.0 => mu,
                    _ => return Err(requirement("p = 2 and a constant viscosity")),
                };
                if self.threshold != 0.0 || self.xi != (XiLaw::Constant { initial: 1.0 }) {
                    return Err(requirement("k = 0 and a constant time modulation"));
                }
                ProblemData {
                    force: ForceField::Manufactured { viscosity: mu },
                    ..base
                }
            }
        })
    }

    pub fn build(&self) -> Result<FlowProblem, ScenarioError> {
        let domain = self.domain()?;
        Ok(FlowProblem::new(
            &domain,
            self.nx,
            self.nz,
            self.data()?,
            self.params()?,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in [
            ScenarioKind::Zero,
            ScenarioKind::Couette,
            ScenarioKind::Coupled,
            ScenarioKind::MmsP2,
        ] {
            assert_eq!(k.to_string().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("poiseuille".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn defaults_build() {
        for k in [
            ScenarioKind::Zero,
            ScenarioKind::Couette,
            ScenarioKind::Coupled,
            ScenarioKind::MmsP2,
        ] {
            Scenario::defaults(k).build().unwrap();
        }
    }

    #[test]
    fn cross_checks() {
        let mut s = Scenario::defaults(ScenarioKind::Couette);
        s.profile = Profile::Affine { h0: 1.0, slope: 0.1 };
        assert!(matches!(s.build(), Err(ScenarioError::Requirement { .. })));
        let mut s = Scenario::defaults(ScenarioKind::MmsP2);
        s.p = 1.5;
        assert!(s.build().is_err());
        let mut s = Scenario::defaults(ScenarioKind::Zero);
        s.xi = XiLaw::Constant { initial: 0.5 };
        assert!(s.build().is_err());
    }
}
