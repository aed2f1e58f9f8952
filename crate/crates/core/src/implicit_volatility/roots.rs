//! Bracketed Newton iteration with bisection fallback.

use super::VolError;
use crate::neural_driver::DriverError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Bracket {
    pub fn has_sign_change(&self) -> bool {
        self.f_lo == 0.0 || self.f_hi == 0.0 || (self.f_lo < 0.0) != (self.f_hi < 0.0)
    }
}

/// Widens `(lo, hi)` geometrically (`lo / 2`, `hi * 2`) until the function
/// changes sign, at most `max_expansions` times. Returns `None` when no
/// sign change was found.
pub fn expand_bracket<F>(f: &mut F, lo: f64, hi: f64, max_expansions: u32) -> Result<Option<Bracket>, DriverError>
where
    F: FnMut(f64) -> Result<(f64, f64), DriverError>,
{
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = f(lo)?.0;
    let mut f_hi = f(hi)?.0;
    for k in 0..=max_expansions {
        let b = Bracket { lo, hi, f_lo, f_hi };
        if b.has_sign_change() {
            return Ok(Some(b));
        }
        if k == max_expansions {
            break;
        }
        lo *= 0.5;
        hi *= 2.0;
        f_lo = f(lo)?.0;
        f_hi = f(hi)?.0;
    }
    Ok(None)
}

/// Refines a sign-change bracket to a root with `|f| <= tol`.
///
/// Newton steps are taken from the current iterate when they stay inside
/// the bracket and shrink fast enough; otherwise the bracket is bisected.
/// Iteration continues past `|f| <= tol` until the step is at rounding
/// level, so the returned root is accurate to a few ulps when `f'` is not
/// tiny.
pub fn safeguarded_newton<F>(f: &mut F, bracket: Bracket, tol: f64, max_iterations: usize) -> Result<f64, VolError>
where
    F: FnMut(f64) -> Result<(f64, f64), DriverError>,
{
    if bracket.f_lo == 0.0 {
        return Ok(bracket.lo);
    }
    if bracket.f_hi == 0.0 {
        return Ok(bracket.hi);
    }
    if !bracket.has_sign_change() {
        return Err(VolError::NoRootInBracket { lo: bracket.lo, hi: bracket.hi });
    }
    // x_neg keeps f < 0, x_pos keeps f > 0
    let (mut x_neg, mut x_pos) = if bracket.f_lo < 0.0 { (bracket.lo, bracket.hi) } else { (bracket.hi, bracket.lo) };
    let mut x = 0.5 * (bracket.lo + bracket.hi);
    let mut dx_old = (bracket.hi - bracket.lo).abs();
    let mut dx = dx_old;
    let (mut fx, mut dfx) = f(x)?;

    for _ in 0..max_iterations {
        if fx == 0.0 {
            return Ok(x);
        }
        let newton_leaves_bracket = ((x - x_pos) * dfx - fx) * ((x - x_neg) * dfx - fx) > 0.0;
        let newton_too_slow = (2.0 * fx).abs() > (dx_old * dfx).abs();
        dx_old = dx;
        if dfx == 0.0 || !dfx.is_finite() || newton_leaves_bracket || newton_too_slow {
            dx = 0.5 * (x_pos - x_neg);
            x = x_neg + dx;
        } else {
            dx = fx / dfx;
            x -= dx;
        }
        let (v, d) = f(x)?;
        fx = v;
        dfx = d;
        if fx < 0.0 {
            x_neg = x;
        } else {
            x_pos = x;
        }
        let scale = x.abs().max(f64::MIN_POSITIVE);
        let step_done = dx.abs() <= 1e-14 * scale;
        let bracket_done = (x_pos - x_neg).abs() <= 4.0 * f64::EPSILON * scale;
        if fx.abs() <= tol && (step_done || bracket_done) {
            return Ok(x);
        }
        if bracket_done {
            break;
        }
    }
    if fx.abs() <= tol {
        Ok(x)
    } else {
        Err(VolError::NonConvergence { last: x, residual: fx })
    }
}
