//! Scalar maximization on a bracket.

use crate::error::{AfcError, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Result of a one-dimensional maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `tol`. Fails if `max_iter`
/// iterations are not enough or if `f` returns a non-finite value.
pub fn golden_section_maximize<F>(f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<Maximum>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !tol.is_finite() || tol <= 0.0 {
        return Err(AfcError::contract(format!(
            "golden-section bracket [{lo}, {hi}] with tolerance {tol} is not valid"
        )));
    }
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_nan() {
            Err(AfcError::Numeric(format!("objective returned NaN at x = {x}")))
        } else {
            Ok(v)
        }
    };

    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    let mut iterations = 0;

    while b - a > tol {
        if iterations >= max_iter {
            return Err(AfcError::Numeric(format!(
                "golden-section search did not converge in {max_iter} iterations \
                 (bracket [{a:e}, {b:e}], width {:e}, tolerance {tol:e})",
                b - a
            )));
        }
        iterations += 1;
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1)?;
        }
    }

    let (x, value) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    Ok(Maximum { x, value, iterations })
}

/// Maximizes `f` over a log-spaced scan followed by golden-section refinement
/// in `ln x` around the best scan point. Handles objectives that are only
/// unimodal on a logarithmic axis spanning several decades.
pub fn scan_then_refine_log<F>(f: F, lo: f64, hi: f64, scan_points: usize, rel_tol: f64) -> Result<Maximum>
where
    F: Fn(f64) -> f64,
{
    if !(lo > 0.0 && hi > lo) || scan_points < 3 {
        return Err(AfcError::contract(format!(
            "log scan needs 0 < lo < hi and at least 3 points (got [{lo}, {hi}], {scan_points})"
        )));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / (scan_points - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..scan_points {
        let v = f((llo + step * i as f64).exp());
        if v > best.1 {
            best = (i, v);
        }
    }
    let left = llo + step * best.0.saturating_sub(1) as f64;
    let right = llo + step * (best.0 + 1).min(scan_points - 1) as f64;
    let refined = golden_section_maximize(|u| f(u.exp()), left, right, rel_tol, 400)?;
    Ok(Maximum { x: refined.x.exp(), value: refined.value, iterations: refined.iterations })
}
