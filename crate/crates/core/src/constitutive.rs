//! Power-law stress map, its smoothed form, the lower-order split and the
//! scalar potential whose gradient is the stress.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::quadrature::adaptive_simpson;

#[derive(Debug, Error, PartialEq)]
pub enum ConstitutiveError {
    #[error("flow exponent p = {0} outside [6/5, 2]")]
    ExponentOutOfRange(f64),
    #[error("viscosity bounds must satisfy 0 < mu0 <= mu1 (got mu0 = {mu0}, mu1 = {mu1})")]
    InvalidBounds { mu0: f64, mu1: f64 },
    #[error("strain modulus must be non-negative, got {0}")]
    NegativeModulus(f64),
}

/// Symmetric 2x2 tensor stored by its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor {
    pub xx: f64,
    pub xz: f64,
    pub zz: f64,
}

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor {
        xx: 0.0,
        xz: 0.0,
        zz: 0.0,
    };

    pub fn new(xx: f64, xz: f64, zz: f64) -> Self {
        Self { xx, xz, zz }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self::new(a, 0.0, b)
    }

    /// Symmetric part of a velocity gradient `g[i][j] = d u_i / d x_j`.
    pub fn sym_grad(g: [[f64; 2]; 2]) -> Self {
        Self::new(g[0][0], 0.5 * (g[0][1] + g[1][0]), g[1][1])
    }

    /// Double contraction `A : B`.
    pub fn ddot(&self, other: &SymTensor) -> f64 {
        self.xx * other.xx + 2.0 * self.xz * other.xz + self.zz * other.zz
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.xx == 0.0 && self.xz == 0.0 && self.zz == 0.0
    }
}

impl Add for SymTensor {
    type Output = SymTensor;
    fn add(self, o: SymTensor) -> SymTensor {
        SymTensor::new(self.xx + o.xx, self.xz + o.xz, self.zz + o.zz)
    }
}

impl Sub for SymTensor {
    type Output = SymTensor;
    fn sub(self, o: SymTensor) -> SymTensor {
        SymTensor::new(self.xx - o.xx, self.xz - o.xz, self.zz - o.zz)
    }
}

impl Neg for SymTensor {
    type Output = SymTensor;
    fn neg(self) -> SymTensor {
        SymTensor::new(-self.xx, -self.xz, -self.zz)
    }
}

impl Mul<SymTensor> for f64 {
    type Output = SymTensor;
    fn mul(self, t: SymTensor) -> SymTensor {
        SymTensor::new(self * t.xx, self * t.xz, self * t.zz)
    }
}

/// Viscosity families `mu(temperature, velocity, strain modulus)`.
///
/// Every family is bounded in `[mu0, mu1]` and nondecreasing in the strain
/// modulus by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViscosityLaw {
    Constant(f64),
    /// `mu0 + (mu1 - mu0) d^2 / (1 + d^2)`
    BoundedIncreasing { mu0: f64, mu1: f64 },
    /// `mu0 + (mu1 - mu0) s(-alpha o + beta |e|) d^2 / (1 + d^2)`, `s` logistic.
    ThermoCoupled {
        mu0: f64,
        mu1: f64,
        alpha: f64,
        beta: f64,
    },
}

impl ViscosityLaw {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ViscosityLaw::Constant(c) => (c, c),
            ViscosityLaw::BoundedIncreasing { mu0, mu1 }
            | ViscosityLaw::ThermoCoupled { mu0, mu1, .. } => (mu0, mu1),
        }
    }

    /// True when `mu` ignores the velocity argument.
    pub fn is_velocity_independent(&self) -> bool {
        match *self {
            ViscosityLaw::Constant(_) | ViscosityLaw::BoundedIncreasing { .. } => true,
            ViscosityLaw::ThermoCoupled { beta, .. } => beta == 0.0,
        }
    }

    fn amplitude(&self, temp: f64, vel: [f64; 2]) -> f64 {
        match *self {
            ViscosityLaw::Constant(_) => 0.0,
            ViscosityLaw::BoundedIncreasing { mu0, mu1 } => mu1 - mu0,
            ViscosityLaw::ThermoCoupled {
                mu0,
                mu1,
                alpha,
                beta,
            } => {
                let arg = -alpha * temp + beta * vel[0].hypot(vel[1]);
                (mu1 - mu0) * logistic(arg)
            }
        }
    }

    /// Value and strain-modulus derivative at `d >= 0`.
    pub fn eval_with_slope(&self, temp: f64, vel: [f64; 2], d: f64) -> (f64, f64) {
        let base = self.bounds().0;
        let amp = self.amplitude(temp, vel);
        if amp == 0.0 {
            return (base, 0.0);
        }
        let d2 = d * d;
        let frac = d2 / (1.0 + d2);
        let slope = 2.0 * d / ((1.0 + d2) * (1.0 + d2));
        (base + amp * frac, amp * slope)
    }

    pub fn eval(&self, temp: f64, vel: [f64; 2], d: f64) -> f64 {
        self.eval_with_slope(temp, vel, d).0
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidParams {
    pub p: f64,
    pub p_conj: f64,
    pub law: ViscosityLaw,
}

impl FluidParams {
    pub fn new(p: f64, law: ViscosityLaw) -> Result<Self, ConstitutiveError> {
        if !(6.0 / 5.0..=2.0).contains(&p) {
            return Err(ConstitutiveError::ExponentOutOfRange(p));
        }
        let (mu0, mu1) = law.bounds();
        if !(mu0 > 0.0) || !(mu1 >= mu0) || !mu1.is_finite() {
            return Err(ConstitutiveError::InvalidBounds { mu0, mu1 });
        }
        Ok(Self {
            p,
            p_conj: p / (p - 1.0),
            law,
        })
    }

    pub fn mu0(&self) -> f64 {
        self.law.bounds().0
    }

    pub fn mu1(&self) -> f64 {
        self.law.bounds().1
    }
}

pub fn viscosity(
    params: &FluidParams,
    temp: f64,
    vel: [f64; 2],
    d: f64,
) -> Result<f64, ConstitutiveError> {
    if d < 0.0 || d.is_nan() {
        return Err(ConstitutiveError::NegativeModulus(d));
    }
    Ok(params.law.eval(temp, vel, d))
}

/// `2 mu(l0, l1, |l2|) |l2|^{p-2} l2`, and zero at `l2 = 0`.
pub fn eval_f(params: &FluidParams, temp: f64, vel: [f64; 2], strain: SymTensor) -> SymTensor {
    if strain.is_zero() {
        return SymTensor::ZERO;
    }
    let m = strain.norm();
    let mu = params.law.eval(temp, vel, m);
    (2.0 * mu * m.powf(params.p - 2.0)) * strain
}

/// Smoothed stress: the modulus inside `mu` and the power is `sqrt(|l2|^2 + eta^2)`.
pub fn eval_f_eta(
    params: &FluidParams,
    temp: f64,
    vel: [f64; 2],
    strain: SymTensor,
    eta: f64,
) -> SymTensor {
    let m = (strain.norm_sq() + eta * eta).sqrt();
    if m == 0.0 {
        return SymTensor::ZERO;
    }
    let mu = params.law.eval(temp, vel, m);
    (2.0 * mu * m.powf(params.p - 2.0)) * strain
}

/// Directional derivative data of a radial map `l -> g(|l|_eta) l`:
/// `dF[H] = scalar * H + rank_one * (l : H) l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialTangent {
    pub stress: SymTensor,
    pub scalar: f64,
    pub rank_one: f64,
}

impl RadialTangent {
    pub fn apply(&self, strain: &SymTensor, dir: &SymTensor) -> SymTensor {
        self.scalar * *dir + (self.rank_one * strain.ddot(dir)) * *strain
    }
}

/// Smoothed stress together with its derivative in the strain argument.
pub fn f_eta_tangent(
    params: &FluidParams,
    temp: f64,
    vel: [f64; 2],
    strain: SymTensor,
    eta: f64,
) -> RadialTangent {
    let m = (strain.norm_sq() + eta * eta).sqrt();
    if m == 0.0 {
        // only reachable with eta = 0; the derivative is unbounded for p < 2
        let mu = params.law.eval(temp, vel, 0.0);
        let scalar = if params.p == 2.0 { 2.0 * mu } else { f64::INFINITY };
        return RadialTangent {
            stress: SymTensor::ZERO,
            scalar,
            rank_one: 0.0,
        };
    }
    let (mu, dmu) = params.law.eval_with_slope(temp, vel, m);
    let pw = m.powf(params.p - 2.0);
    let g = 2.0 * mu * pw;
    // g'(m) / m
    let dg_over_m = 2.0 * (dmu * pw + mu * (params.p - 2.0) * pw / m) / m;
    RadialTangent {
        stress: g * strain,
        scalar: g,
        rank_one: dg_over_m,
    }
}

/// The vanishing-viscosity term `2 eps (|l|^2 + eta^2)^{(p'-2)/2} l` and its derivative.
pub fn eps_term_tangent(p_conj: f64, eps: f64, strain: SymTensor, eta: f64) -> RadialTangent {
    if eps == 0.0 {
        return RadialTangent {
            stress: SymTensor::ZERO,
            scalar: 0.0,
            rank_one: 0.0,
        };
    }
    let m2 = strain.norm_sq() + eta * eta;
    if m2 == 0.0 {
        let scalar = if p_conj == 2.0 { 2.0 * eps } else { 0.0 };
        return RadialTangent {
            stress: SymTensor::ZERO,
            scalar,
            rank_one: 0.0,
        };
    }
    let g = 2.0 * eps * m2.powf(0.5 * (p_conj - 2.0));
    let rank_one = 2.0 * eps * (p_conj - 2.0) * m2.powf(0.5 * (p_conj - 4.0));
    RadialTangent {
        stress: g * strain,
        scalar: g,
        rank_one,
    }
}

/// Splits the stress into the pure power part `mu0 |l|^{p-2} l` and the rest
/// `2 (mu - mu0/2) |l|^{p-2} l`.
pub fn split_f(
    params: &FluidParams,
    temp: f64,
    vel: [f64; 2],
    strain: SymTensor,
) -> (SymTensor, SymTensor) {
    if strain.is_zero() {
        return (SymTensor::ZERO, SymTensor::ZERO);
    }
    let m = strain.norm();
    let pw = m.powf(params.p - 2.0);
    let mu0 = params.mu0();
    let mu_bar = params.law.eval(temp, vel, m) - 0.5 * mu0;
    ((mu0 * pw) * strain, (2.0 * mu_bar * pw) * strain)
}

/// Lower-order power map `mu0 |l|^{p-2} l`.
pub fn power_part(p: f64, mu0: f64, strain: SymTensor) -> SymTensor {
    if strain.is_zero() {
        return SymTensor::ZERO;
    }
    (mu0 * strain.norm().powf(p - 2.0)) * strain
}

/// `Phi(t) = int_0^t 2 mu(l0, l1, s) s^{p-1} ds`.
///
/// Evaluated after the substitution `s = t y^{1/p}`, which turns the integral
/// into `(2 t^p / p) int_0^1 mu(l0, l1, t y^{1/p}) dy`.
pub fn potential_phi(params: &FluidParams, temp: f64, vel: [f64; 2], t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let p = params.p;
    let prefactor = 2.0 * t.powf(p) / p;
    if let ViscosityLaw::Constant(c) = params.law {
        return prefactor * c;
    }
    let law = params.law;
    let integrand = move |y: f64| law.eval(temp, vel, t * y.powf(1.0 / p));
    prefactor * adaptive_simpson(&integrand, 0.0, 1.0, 1e-12)
}

/// Potential of the smoothed stress, shifted to vanish at zero strain:
/// `Phi(sqrt(t^2 + eta^2)) - Phi(eta)`.
pub fn potential_phi_eta(params: &FluidParams, temp: f64, vel: [f64; 2], t: f64, eta: f64) -> f64 {
    let m = (t * t + eta * eta).sqrt();
    potential_phi(params, temp, vel, m) - potential_phi(params, temp, vel, eta)
}

/// `(|l| + |l'|)^{2-p} (F1(l) - F1(l')) : (l - l') - mu0 (p - 1) |l - l'|^2`,
/// with `F1(l) = mu0 |l|^{p-2} l`. Nonnegative for `p` in `(1, 2)`.
pub fn strong_monotonicity_residual(p: f64, mu0: f64, a: SymTensor, b: SymTensor) -> f64 {
    let diff = a - b;
    let weight = (a.norm() + b.norm()).powf(2.0 - p);
    let flux = power_part(p, mu0, a) - power_part(p, mu0, b);
    weight * flux.ddot(&diff) - mu0 * (p - 1.0) * diff.norm_sq()
}
