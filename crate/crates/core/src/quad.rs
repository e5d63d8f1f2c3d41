//! Thin numerical-integration helpers shared by the coefficient and moment code.

use crate::error::{Error, Result};

/// Tanh-sinh integration on `(a, b)`; the endpoints are never evaluated, so
/// integrable endpoint singularities are fine.
pub fn integrate<F>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let out = quadrature::integrate(f, a, b, abs_tol);
    if !out.integral.is_finite() {
        return Err(Error::Quadrature(format!(
            "non-finite integral on ({a}, {b})"
        )));
    }
    // The tanh-sinh estimate is pessimistic near round-off; only flag gross misses.
    if out.error_estimate > abs_tol.max(1e-13 * out.integral.abs()) * 1e3 {
        return Err(Error::Quadrature(format!(
            "error estimate {:.3e} exceeds tolerance {:.3e} on ({a}, {b})",
            out.error_estimate, abs_tol
        )));
    }
    Ok(out.integral)
}

/// [`integrate`] over consecutive pieces `breaks[i]..breaks[i+1]`.
pub fn integrate_pieces<F>(f: F, breaks: &[f64], abs_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    breaks
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], abs_tol))
        .sum()
}

/// Adaptive Simpson on `[a, b]` returning `(value, error_estimate)`.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut err = 0.0;
    let value = simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth, &mut err)?;
    Ok((value, err))
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    err: &mut f64,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        *err += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson hit depth limit on [{a}, {b}], local error {:.3e}",
            delta.abs() / 15.0
        )));
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, err)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, err)?;
    Ok(l + r)
}
