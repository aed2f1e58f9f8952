use std::io::Write;

use rayon::prelude::*;

use super::roots::{expand_bracket, safeguarded_newton};
use super::selection::{select_volatility, RootSet, ScanConfig};
use super::VolError;
use crate::neural_driver::{DriverError, DriverKind, SpecializedDriver};

pub const DEFAULT_BRACKET: (f64, f64) = (0.5, 2.0);
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_EXPANSIONS: u32 = 60;
const MAX_NEWTON_ITERATIONS: usize = 400;

/// Precomputed `nu` on a rectangular `(t, x)` grid, queried bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct VolCache {
    t_nodes: Vec<f64>,
    x_nodes: Vec<f64>,
    /// Row-major, `values[i * x_nodes.len() + j] = nu(t_i, x_j)`.
    values: Vec<f64>,
    interp_error_bound: f64,
}

impl VolCache {
    pub fn t_nodes(&self) -> &[f64] {
        &self.t_nodes
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.x_nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest deviation between the interpolant and a direct solve observed
    /// at cell centres and edge midpoints while building.
    pub fn interp_error_bound(&self) -> f64 {
        self.interp_error_bound
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.x_nodes.len() + j]
    }

    fn cell(nodes: &[f64], v: f64) -> Option<(usize, f64)> {
        let n = nodes.len();
        if !(v >= nodes[0] && v <= nodes[n - 1]) {
            return None;
        }
        let k = nodes.partition_point(|&a| a <= v).clamp(1, n - 1) - 1;
        let w = (v - nodes[k]) / (nodes[k + 1] - nodes[k]);
        Some((k, w))
    }

    /// Bilinear value at `(t, x)`, or `None` outside the grid hull.
    pub fn interpolate(&self, t: f64, x: f64) -> Option<f64> {
        let (i, wt) = Self::cell(&self.t_nodes, t)?;
        let (j, wx) = Self::cell(&self.x_nodes, x)?;
        let lo = self.at(i, j) * (1.0 - wx) + self.at(i, j + 1) * wx;
        let hi = self.at(i + 1, j) * (1.0 - wx) + self.at(i + 1, j + 1) * wx;
        Some(lo * (1.0 - wt) + hi * wt)
    }
}

/// The implicit volatility of a driver, evaluated by root finding and
/// optionally backed by a grid cache.
#[derive(Debug, Clone)]
pub struct VolatilityField {
    driver: SpecializedDriver,
    bracket: (f64, f64),
    tol: f64,
    max_expansions: u32,
    explicit_bracket: bool,
    selection: Option<ScanConfig>,
    cache: Option<VolCache>,
    constant: Option<f64>,
}

impl VolatilityField {
    pub fn new(driver: SpecializedDriver) -> Result<Self, VolError> {
        let mut vf = VolatilityField {
            driver,
            bracket: DEFAULT_BRACKET,
            tol: DEFAULT_TOL,
            max_expansions: DEFAULT_MAX_EXPANSIONS,
            explicit_bracket: false,
            selection: None,
            cache: None,
            constant: None,
        };
        vf.refresh_constant();
        Ok(vf)
    }

    /// Uses `(z_lo, z_hi)` as the initial bracket and asserts that it
    /// isolates a single root, which permits `solve_root` on kinds that may
    /// have several.
    pub fn with_explicit_bracket(mut self, z_lo: f64, z_hi: f64) -> Result<Self, VolError> {
        if !(z_lo > 0.0 && z_hi > z_lo && z_hi.is_finite()) {
            return Err(VolError::Precondition(format!("bracket needs 0 < z_lo < z_hi, got ({z_lo}, {z_hi})")));
        }
        self.bracket = (z_lo, z_hi);
        self.explicit_bracket = true;
        self.cache = None;
        self.refresh_constant();
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self, VolError> {
        if !(tol > 0.0) {
            return Err(VolError::Precondition(format!("tol must be positive, got {tol}")));
        }
        self.tol = tol;
        self.cache = None;
        self.refresh_constant();
        Ok(self)
    }

    pub fn with_max_expansions(mut self, n: u32) -> Self {
        self.max_expansions = n;
        self.refresh_constant();
        self
    }

    /// Fixes the minimal-potential rule over `scan` as the way `nu` picks a
    /// root.
    pub fn with_selection(mut self, scan: ScanConfig) -> Self {
        self.selection = Some(scan);
        self.cache = None;
        self.refresh_constant();
        self
    }

    pub fn driver(&self) -> &SpecializedDriver {
        &self.driver
    }

    pub fn bracket(&self) -> (f64, f64) {
        self.bracket
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn selection(&self) -> Option<&ScanConfig> {
        self.selection.as_ref()
    }

    pub fn cache(&self) -> Option<&VolCache> {
        self.cache.as_ref()
    }

    /// The value of `nu` when it is the same at every `(t, x)`.
    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    fn refresh_constant(&mut self) {
        self.constant = None;
        if self.driver.is_state_independent() {
            self.constant = self.direct(0.0, 0.0).ok();
        }
    }

    /// The unique positive root at `(t, x)`, ignoring any cache.
    pub fn solve_root(&self, t: f64, x: f64) -> Result<f64, VolError> {
        if self.driver.kind() == DriverKind::MeanField {
            return Err(DriverError::UnsupportedKind {
                op: "solve_root without a measure",
                kind: DriverKind::MeanField,
            }
            .into());
        }
        if !self.driver.has_unique_positive_root() && !self.explicit_bracket {
            return Err(VolError::AmbiguousRoot(self.driver.kind()));
        }
        let d = &self.driver;
        let mut f = |z: f64| d.value_and_dz(t, x, z);
        let (lo, hi) = self.bracket;
        match expand_bracket(&mut f, lo, hi, self.max_expansions)? {
            Some(b) => safeguarded_newton(&mut f, b, self.tol, MAX_NEWTON_ITERATIONS),
            None => {
                let k = self.max_expansions as i32;
                Err(VolError::NoRootInBracket { lo: lo * 0.5f64.powi(k), hi: hi * 2f64.powi(k) })
            }
        }
    }

    pub fn solve_all_roots(&self, t: f64, x: f64, scan: &ScanConfig) -> Result<RootSet, VolError> {
        RootSet::detect(&self.driver, t, x, scan, self.tol)
    }

    fn direct(&self, t: f64, x: f64) -> Result<f64, VolError> {
        match &self.selection {
            Some(scan) => select_volatility(&self.solve_all_roots(t, x, scan)?),
            None => self.solve_root(t, x),
        }
    }

    /// `nu(t, x)`: cached value inside the cache hull, otherwise the
    /// selected root (if a selection rule is set) or the unique root.
    pub fn nu(&self, t: f64, x: f64) -> Result<f64, VolError> {
        if let Some(v) = self.cache.as_ref().and_then(|c| c.interpolate(t, x)) {
            return Ok(v);
        }
        if let Some(v) = self.constant {
            return Ok(v);
        }
        self.direct(t, x).map_err(|e| e.at(t, x))
    }

    fn check_residual(&self, t: f64, x: f64, v: f64) -> Result<(), VolError> {
        let (g, dg) = self.driver.value_and_dz(t, x, v)?;
        if g.abs() > 10.0 * self.tol * dg.abs().max(1.0) {
            return Err(VolError::NonConvergence { last: v, residual: g });
        }
        Ok(())
    }

    /// Precomputes `nu` on the tensor grid `t_nodes x x_nodes` (each strictly
    /// increasing with at least two nodes) and estimates the interpolation
    /// error at cell centres and edge midpoints.
    pub fn build_cache(mut self, t_nodes: &[f64], x_nodes: &[f64]) -> Result<Self, VolError> {
        for (name, nodes) in [("t", t_nodes), ("x", x_nodes)] {
            if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|v| !v.is_finite()) {
                return Err(VolError::Precondition(format!(
                    "cache {name}-nodes must be finite, strictly increasing, at least two"
                )));
            }
        }
        if !self.driver.has_unique_positive_root() && self.selection.is_none() && !self.explicit_bracket {
            return Err(VolError::AmbiguousRoot(self.driver.kind()));
        }
        self.cache = None;
        let nx = x_nodes.len();
        let points: Vec<(f64, f64)> = t_nodes.iter().flat_map(|&t| x_nodes.iter().map(move |&x| (t, x))).collect();
        let values = points
            .par_iter()
            .map(|&(t, x)| {
                let v = self.direct(t, x)?;
                self.check_residual(t, x, v)?;
                Ok(v)
            })
            .collect::<Vec<Result<f64, VolError>>>()
            .into_iter()
            .zip(&points)
            .map(|(r, &(t, x))| r.map_err(|e| e.at(t, x)))
            .collect::<Result<Vec<f64>, VolError>>()?;

        let mut cache =
            VolCache { t_nodes: t_nodes.to_vec(), x_nodes: x_nodes.to_vec(), values, interp_error_bound: 0.0 };
        // probe points: cell centres plus the midpoints of every cell edge
        let mut probes = Vec::new();
        for i in 0..t_nodes.len() {
            for j in 0..nx {
                let (t, x) = (t_nodes[i], x_nodes[j]);
                if j + 1 < nx {
                    probes.push((t, 0.5 * (x + x_nodes[j + 1])));
                }
                if i + 1 < t_nodes.len() {
                    let tm = 0.5 * (t + t_nodes[i + 1]);
                    probes.push((tm, x));
                    if j + 1 < nx {
                        probes.push((tm, 0.5 * (x + x_nodes[j + 1])));
                    }
                }
            }
        }
        let deviations = probes
            .par_iter()
            .map(|&(t, x)| {
                let v = self.direct(t, x).map_err(|e| e.at(t, x))?;
                Ok((cache.interpolate(t, x).expect("probe inside hull") - v).abs())
            })
            .collect::<Vec<Result<f64, VolError>>>();
        let mut bound = 0.0f64;
        for d in deviations {
            bound = bound.max(d?);
        }
        cache.interp_error_bound = bound;
        self.cache = Some(cache);
        Ok(self)
    }

    /// Writes the cache as CSV `t,x,nu`, one row per node, 17 significant
    /// digits.
    pub fn write_cache_csv<W: Write>(&self, mut w: W) -> Result<(), VolError> {
        let cache = self.cache.as_ref().ok_or_else(|| VolError::Precondition("field has no cache".into()))?;
        writeln!(w, "t,x,nu")?;
        for (i, t) in cache.t_nodes.iter().enumerate() {
            for (j, x) in cache.x_nodes.iter().enumerate() {
                writeln!(w, "{t:.16e},{x:.16e},{:.16e}", cache.at(i, j))?;
            }
        }
        Ok(())
    }
}
