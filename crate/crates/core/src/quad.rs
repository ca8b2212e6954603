//! Adaptive Simpson quadrature used by the kernel and theory modules.

/// Absolute tolerance for adaptive quadrature. Downstream diffusion values
/// span several decades, so both an absolute and a relative target are
/// enforced.
pub(crate) const ABS_TOL: f64 = 1e-10;
/// Relative tolerance for adaptive quadrature.
pub(crate) const REL_TOL: f64 = 1e-8;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
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
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        // Richardson extrapolation of the two half-interval estimates.
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integrate `f` over `[a, b]` to the given absolute tolerance.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    adaptive(f, a, b, fa, fm, fb, whole, abs_tol, 48)
}

/// Integrate `f` over the panels defined by `knots`, tightening the
/// absolute tolerance until the relative target is met as well.
pub(crate) fn integrate_knots<F: Fn(f64) -> f64>(f: &F, knots: &[f64]) -> f64 {
    let mut abs_tol = ABS_TOL;
    loop {
        let mut total = 0.0;
        for pair in knots.windows(2) {
            total += integrate(f, pair[0], pair[1], abs_tol);
        }
        // abs_tol small enough relative to the magnitude of the result?
        if abs_tol <= REL_TOL * total.abs() || abs_tol <= ABS_TOL * 1e-4 {
            return total;
        }
        abs_tol = (REL_TOL * total.abs()).max(ABS_TOL * 1e-4);
    }
}
