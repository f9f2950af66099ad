//! Manufactured solution for the linear (p = 2) Stokes limit on the unit square.
//!
//! `u*(t, x, z) = t w(x, z)` with `w = curl(X(x) Z(z))`,
//! `X = x^2 (1 - x)^2`, `Z = z - 3 z^3 + 2 z^4`. The field is divergence free,
//! vanishes on the top and lateral walls, has zero normal velocity and zero
//! shear traction on the bottom, and the exact pressure is zero. With constant
//! viscosity `mu` the forcing is `f = w - mu t lap(w)`.

/// Stream-function profile in `x` and its first derivative.
fn x_profile(x: f64) -> (f64, f64) {
    let xx = x * x;
    (xx * (1.0 - x) * (1.0 - x), 4.0 * xx * x - 6.0 * xx + 2.0 * x)
}

fn z_profile(z: f64) -> (f64, f64) {
    let zz = z * z;
    (z - 3.0 * zz * z + 2.0 * zz * zz, 8.0 * zz * z - 9.0 * zz + 1.0)
}

/// Spatial shape `w(x, z)`.
pub fn shape(pos: [f64; 2]) -> [f64; 2] {
    let (xv, dx) = x_profile(pos[0]);
    let (zv, dz) = z_profile(pos[1]);
    [xv * dz, -dx * zv]
}

/// Laplacian of `w`, expanded offline with a computer algebra system.
pub fn shape_laplacian(pos: [f64; 2]) -> [f64; 2] {
    let [x, z] = pos;
    let (x2, x3, x4) = (x * x, x * x * x, x * x * x * x);
    let (z2, z3) = (z * z, z * z * z);
    let lap_x = 2.0
        * (24.0 * x4 * z - 9.0 * x4 - 48.0 * x3 * z + 18.0 * x3 + 48.0 * x2 * z3
            - 54.0 * x2 * z2
            + 24.0 * x2 * z
            - 3.0 * x2
            - 48.0 * x * z3
            + 54.0 * x * z2
            - 6.0 * x
            + 8.0 * z3
            - 9.0 * z2
            + 1.0);
    let lap_z = -12.0
        * z
        * (2.0 * x - 1.0)
        * (4.0 * x2 * z - 3.0 * x2 - 4.0 * x * z + 3.0 * x + 2.0 * z3 - 3.0 * z2 + 1.0);
    [lap_x, lap_z]
}

pub fn velocity(t: f64, pos: [f64; 2]) -> [f64; 2] {
    let w = shape(pos);
    [t * w[0], t * w[1]]
}

pub fn forcing(viscosity: f64, t: f64, pos: [f64; 2]) -> [f64; 2] {
    let w = shape(pos);
    let l = shape_laplacian(pos);
    [w[0] - viscosity * t * l[0], w[1] - viscosity * t * l[1]]
}
