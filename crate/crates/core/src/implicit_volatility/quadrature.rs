/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Each panel is split until the two half-panel estimates agree with the
/// whole-panel estimate to `15 * eps`; the Richardson correction is added.
pub fn adaptive_simpson<F, E>(f: &mut F, a: f64, b: f64, eps: f64, max_depth: u32) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, eps, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F, E>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return Ok(left + right + delta / 15.0);
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn integrates_smooth_functions() {
        let mut f = |x: f64| Ok::<_, Infallible>(x.sin());
        let v = adaptive_simpson(&mut f, 0.0, std::f64::consts::PI, 1e-12, 50).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
        let mut g = |x: f64| Ok::<_, Infallible>((-x * x).exp());
        let v = adaptive_simpson(&mut g, -6.0, 6.0, 1e-12, 50).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn empty_interval_is_zero() {
        let mut f = |x: f64| Ok::<_, Infallible>(x + 1.0);
        assert_eq!(adaptive_simpson(&mut f, 0.0, 0.0, 1e-12, 50).unwrap(), 0.0);
    }
}
