//! Multi-root detection and the minimal-potential selection rule.

use super::quadrature::adaptive_simpson;
use super::roots::{safeguarded_newton, Bracket};
use super::VolError;
use crate::neural_driver::{DriverError, SpecializedDriver};

/// Roots whose slope magnitude is below this are rejected as degenerate.
pub const DEGENERATE_SLOPE: f64 = 1e-8;
/// Minimum gap between the selected potential and every other one.
pub const SEPARATION_MARGIN: f64 = 1e-9;

const POTENTIAL_EPS: f64 = 1e-11;
const POTENTIAL_MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub n_subdiv: usize,
}

impl ScanConfig {
    pub fn new(z_min: f64, z_max: f64, n_subdiv: usize) -> Result<Self, VolError> {
        if !(z_min > 0.0) || !(z_max > z_min) || !z_max.is_finite() {
            return Err(VolError::Precondition(format!("scan window needs 0 < z_min < z_max, got ({z_min}, {z_max})")));
        }
        if n_subdiv < 8 {
            return Err(VolError::Precondition(format!("n_subdiv must be >= 8, got {n_subdiv}")));
        }
        Ok(ScanConfig { z_min, z_max, n_subdiv })
    }

    /// Default resolution of 256 subintervals.
    pub fn window(z_min: f64, z_max: f64) -> Result<Self, VolError> {
        Self::new(z_min, z_max, 256)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootSet {
    pub roots: Vec<f64>,
    pub potentials: Vec<f64>,
    /// dg/dz at each root.
    pub slopes: Vec<f64>,
    pub selected_index: usize,
}

/// All sign changes of `f` on the scan grid, each refined to `|f| <= tol`.
/// Returns `(root, slope)` pairs in increasing order.
pub fn scan_roots<F>(f: &mut F, scan: &ScanConfig, tol: f64) -> Result<Vec<(f64, f64)>, VolError>
where
    F: FnMut(f64) -> Result<(f64, f64), DriverError>,
{
    let n = scan.n_subdiv;
    let h = (scan.z_max - scan.z_min) / n as f64;
    let node = |i: usize| if i == n { scan.z_max } else { scan.z_min + h * i as f64 };
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut z_prev = node(0);
    let mut f_prev = f(z_prev)?.0;
    for i in 1..=n {
        let z = node(i);
        let fz = f(z)?.0;
        // an exact zero at an interior node is attributed to the interval on its left
        let crosses = (f_prev < 0.0 && fz >= 0.0) || (f_prev > 0.0 && fz <= 0.0);
        if crosses && !(i == n && fz == 0.0) {
            let root = safeguarded_newton(f, Bracket { lo: z_prev, hi: z, f_lo: f_prev, f_hi: fz }, tol, 400)?;
            let slope = f(root)?.1;
            if slope.abs() < DEGENERATE_SLOPE {
                return Err(VolError::DegenerateRoot { root, slope });
            }
            if out.last().is_none_or(|&(r, _)| root > r) {
                out.push((root, slope));
            }
        }
        z_prev = z;
        f_prev = fz;
    }
    if out.is_empty() {
        return Err(VolError::NoRootFound { z_min: scan.z_min, z_max: scan.z_max });
    }
    Ok(out)
}

/// `G(t, x, z) = int_0^z g(t, x, u) du` by adaptive Simpson.
pub fn compute_potential(d: &SpecializedDriver, t: f64, x: f64, z: f64) -> Result<f64, VolError> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(VolError::Precondition(format!("potential needs z >= 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    let mut g = |u: f64| d.value(t, x, u);
    let eps = POTENTIAL_EPS * z.max(1.0);
    Ok(adaptive_simpson(&mut g, 0.0, z, eps, POTENTIAL_MAX_DEPTH)?)
}

impl RootSet {
    /// Detects roots in the scan window and evaluates their potentials.
    pub fn detect(d: &SpecializedDriver, t: f64, x: f64, scan: &ScanConfig, tol: f64) -> Result<Self, VolError> {
        let mut f = |z: f64| d.value_and_dz(t, x, z);
        let found = scan_roots(&mut f, scan, tol)?;
        let mut roots = Vec::with_capacity(found.len());
        let mut slopes = Vec::with_capacity(found.len());
        let mut potentials = Vec::with_capacity(found.len());
        for (r, s) in found {
            potentials.push(compute_potential(d, t, x, r)?);
            roots.push(r);
            slopes.push(s);
        }
        let selected_index = argmin(&potentials);
        Ok(RootSet { roots, potentials, slopes, selected_index })
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p < v[best] {
            best = i;
        }
    }
    best
}

/// The minimal-potential root, after checking branch separation and the
/// second-order condition.
pub fn select_volatility(rs: &RootSet) -> Result<f64, VolError> {
    if rs.roots.is_empty() || rs.selected_index >= rs.roots.len() {
        return Err(VolError::Precondition("empty root set".into()));
    }
    let k = rs.selected_index;
    let best = rs.potentials[k];
    for (j, &p) in rs.potentials.iter().enumerate() {
        if j != k && p - best < SEPARATION_MARGIN {
            let (a, b) = (rs.roots[k.min(j)], rs.roots[k.max(j)]);
            return Err(VolError::SeparationViolation { a, b, gap: p - best });
        }
    }
    if !(rs.slopes[k] > 0.0) {
        return Err(VolError::SecondOrderViolation { root: rs.roots[k], slope: rs.slopes[k] });
    }
    Ok(rs.roots[k])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> SpecializedDriver {
        SpecializedDriver::polynomial(vec![-6.0, 11.0, -6.0, 1.0]).unwrap()
    }

    fn antiderivative(z: f64) -> f64 {
        z.powi(4) / 4.0 - 2.0 * z.powi(3) + 5.5 * z * z - 6.0 * z
    }

    #[test]
    fn finds_all_cubic_roots() {
        let scan = ScanConfig::new(0.1, 5.0, 64).unwrap();
        let rs = RootSet::detect(&cubic(), 0.0, 0.0, &scan, 1e-10).unwrap();
        assert_eq!(rs.roots.len(), 3);
        for (r, want) in rs.roots.iter().zip([1.0, 2.0, 3.0]) {
            assert!((r - want).abs() < 1e-12);
        }
        for (r, p) in rs.roots.iter().zip(&rs.potentials) {
            assert!((p - antiderivative(*r)).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_cubic_is_a_tie() {
        let scan = ScanConfig::new(0.1, 5.0, 64).unwrap();
        let rs = RootSet::detect(&cubic(), 0.0, 0.0, &scan, 1e-10).unwrap();
        assert!((rs.potentials[0] + 2.25).abs() < 1e-9);
        assert!((rs.potentials[1] + 2.0).abs() < 1e-9);
        assert!(matches!(select_volatility(&rs), Err(VolError::SeparationViolation { .. })));
    }

    #[test]
    fn empty_window_reports_no_root() {
        let scan = ScanConfig::new(4.0, 5.0, 64).unwrap();
        assert!(matches!(RootSet::detect(&cubic(), 0.0, 0.0, &scan, 1e-10), Err(VolError::NoRootFound { .. })));
    }

    #[test]
    fn double_root_is_degenerate() {
        // (z - 1)^3 changes sign with zero slope
        let d = SpecializedDriver::polynomial(vec![-1.0, 3.0, -3.0, 1.0]).unwrap();
        let scan = ScanConfig::new(0.1, 2.0, 16).unwrap();
        assert!(matches!(RootSet::detect(&d, 0.0, 0.0, &scan, 1e-10), Err(VolError::DegenerateRoot { .. })));
    }

    #[test]
    fn potential_of_quadratic() {
        let d = SpecializedDriver::quadratic(2.0, 1.0).unwrap();
        assert!((compute_potential(&d, 0.0, 0.0, 1.0).unwrap() + 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(compute_potential(&d, 0.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn scan_config_validation() {
        assert!(ScanConfig::new(0.0, 1.0, 64).is_err());
        assert!(ScanConfig::new(0.1, 1.0, 4).is_err());
        assert!(ScanConfig::new(2.0, 1.0, 64).is_err());
    }
}
