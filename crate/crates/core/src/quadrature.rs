//! Quadrature rules shared by the assembly routines.

/// Symmetric 6-point rule on the reference triangle, exact for degree 4.
/// Entries are `(barycentric coordinates, weight)`; weights sum to one and
/// are multiplied by the triangle area by the caller.
pub const TRIANGLE_DEGREE4: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.445_948_490_915_964_886_318;
    const B1: f64 = 0.108_103_018_168_070_227_363;
    const W1: f64 = 0.223_381_589_678_011_465_695;
    const A2: f64 = 0.091_576_213_509_770_743_460;
    const B2: f64 = 0.816_847_572_980_458_513_080;
    const W2: f64 = 0.109_951_743_655_321_867_638;
    [
        ([A1, A1, B1], W1),
        ([A1, B1, A1], W1),
        ([B1, A1, A1], W1),
        ([A2, A2, B2], W2),
        ([A2, B2, A2], W2),
        ([B2, A2, A2], W2),
    ]
};

/// 3-point Gauss-Legendre rule on `[0, 1]` (exact for degree 5), as
/// `(abscissa, weight)` pairs.
pub fn segment_gauss3() -> [(f64, f64); 3] {
    let r = (0.6f64).sqrt();
    [
        (0.5 * (1.0 - r), 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 * (1.0 + r), 5.0 / 18.0),
    ]
}

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// Stops when the Richardson error estimate drops below `tol` scaled by the
/// running magnitude of the integral, or at `max_depth` bisections.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // absolute floor keeps zero integrands from recursing forever
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    simpson_step(f, a, b, fa, fm, fb, whole, rel_tol * scale, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
