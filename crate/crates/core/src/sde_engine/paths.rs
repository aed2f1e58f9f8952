use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{SimError, TimeGrid};
use crate::implicit_volatility::VolatilityField;
use crate::neural_driver::{DriverError, QuadraticDriver, SpecializedDriver};
use crate::rng::stream_rng;
use crate::stats::{moments, weighted_mean, Moments};

/// Probability measure a bundle was simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    P,
    QAlpha(f64),
}

/// Simulated paths with their Brownian increments.
///
/// Row `i` of `paths` holds `M_i(t_0), ..., M_i(t_n)`; row `i` of
/// `increments` holds the `n` increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    n_paths: usize,
    paths: Vec<f64>,
    increments: Vec<f64>,
    seed: u64,
    measure: Measure,
    weights: Option<Vec<f64>>,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    /// Likelihood-ratio weights, when the bundle has been reweighted.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.grid.n_steps() + 1;
        &self.paths[i * w..(i + 1) * w]
    }

    pub fn path_increments(&self, i: usize) -> &[f64] {
        let w = self.grid.n_steps();
        &self.increments[i * w..(i + 1) * w]
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.paths[i * (self.grid.n_steps() + 1) + k]
    }

    pub fn increment(&self, i: usize, k: usize) -> f64 {
        self.increments[i * self.grid.n_steps() + k]
    }

    /// All path values at step `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.value(i, k)).collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.column(self.grid.n_steps())
    }

    /// `W(T) - W(t0)` per path.
    pub fn brownian_terminal(&self) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.path_increments(i).iter().sum()).collect()
    }

    /// Unweighted moments of `M` at step `k`.
    pub fn moments_at(&self, k: usize) -> Moments {
        moments(&self.column(k))
    }

    /// Mean of `M_T` (self-normalised if weighted) and its standard error.
    pub fn terminal_mean(&self) -> (f64, f64) {
        let xs = self.terminal();
        match &self.weights {
            Some(w) => weighted_mean(&xs, w),
            None => {
                let m = moments(&xs);
                (m.mean, m.se)
            }
        }
    }

    /// Attaches `L_T = exp(gamma W_T - gamma^2 T / 2)`.
    pub fn with_girsanov_weights(mut self, gamma: f64) -> Self {
        let horizon = self.grid.horizon();
        let w =
            self.brownian_terminal().into_iter().map(|wt| (gamma * wt - 0.5 * gamma * gamma * horizon).exp()).collect();
        self.weights = Some(w);
        self
    }

    /// CSV `path_id,t,M`, one row per path and grid time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path_id,t,M")?;
        let times = self.grid.times();
        for i in 0..self.n_paths {
            for (k, t) in times.iter().enumerate() {
                writeln!(w, "{i},{t:.16e},{:.16e}", self.value(i, k))?;
            }
        }
        Ok(())
    }
}

fn draw_increments(seed: u64, n_paths: usize, n_steps: usize, dt: f64) -> Vec<f64> {
    let sd = dt.sqrt();
    let mut inc = vec![0.0; n_paths * n_steps];
    inc.par_chunks_mut(n_steps).enumerate().for_each(|(i, row)| {
        let mut rng = stream_rng(seed, i as u64);
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    });
    inc
}

fn check_paths(n_paths: usize) -> Result<(), SimError> {
    if n_paths < 1 {
        return Err(SimError::Precondition("n_paths must be >= 1".into()));
    }
    Ok(())
}

/// Euler-Maruyama for `dM = b(t, M) dt + nu(t, M) dW` on given increments.
fn euler<F>(
    grid: &TimeGrid,
    increments: &[f64],
    n_paths: usize,
    m0: f64,
    drift: f64,
    vol: F,
) -> Result<Vec<f64>, SimError>
where
    F: Fn(usize, usize, f64, f64) -> Result<f64, SimError> + Sync,
{
    let n = grid.n_steps();
    let dt = grid.dt();
    let times = grid.times();
    let mut paths = vec![0.0; n_paths * (n + 1)];
    let results: Vec<Result<(), SimError>> = paths
        .par_chunks_mut(n + 1)
        .enumerate()
        .map(|(i, row)| {
            let dw = &increments[i * n..(i + 1) * n];
            row[0] = m0;
            for k in 0..n {
                let m = row[k];
                let nu = vol(i, k, times[k], m)?;
                row[k + 1] = m + drift * dt + nu * dw[k];
            }
            Ok(())
        })
        .collect();
    // report the failure on the lowest path index, whatever the scheduling
    results.into_iter().collect::<Result<Vec<()>, SimError>>()?;
    Ok(paths)
}

fn field_vol(vf: &VolatilityField) -> impl Fn(usize, usize, f64, f64) -> Result<f64, SimError> + Sync + '_ {
    move |path, step, t, m| vf.nu(t, m).map_err(|source| SimError::Root { path, step, state: m, source })
}

/// Canonical paths `dM = nu(t, M) dW`, `M_0 = 0`, under P.
pub fn simulate_nbm(vf: &VolatilityField, grid: TimeGrid, n_paths: usize, seed: u64) -> Result<PathBundle, SimError> {
    simulate_from(vf, grid, n_paths, seed, 0.0)
}

/// As [`simulate_nbm`] but started from `m0`.
pub fn simulate_from(
    vf: &VolatilityField,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    m0: f64,
) -> Result<PathBundle, SimError> {
    check_paths(n_paths)?;
    let increments = draw_increments(seed, n_paths, grid.n_steps(), grid.dt());
    let paths = euler(&grid, &increments, n_paths, m0, 0.0, field_vol(vf))?;
    Ok(PathBundle { grid, n_paths, paths, increments, seed, measure: Measure::P, weights: None })
}

/// Canonical paths driven by caller-supplied increments (row-major,
/// `n_paths x n_steps`). The bundle's seed is recorded as 0.
pub fn simulate_with_increments(
    vf: &VolatilityField,
    grid: TimeGrid,
    increments: Vec<f64>,
    m0: f64,
) -> Result<PathBundle, SimError> {
    let n = grid.n_steps();
    if increments.is_empty() || !increments.len().is_multiple_of(n) {
        return Err(SimError::Precondition(format!(
            "increments length {} is not a positive multiple of n_steps {n}",
            increments.len()
        )));
    }
    let n_paths = increments.len() / n;
    let paths = euler(&grid, &increments, n_paths, m0, 0.0, field_vol(vf))?;
    Ok(PathBundle { grid, n_paths, paths, increments, seed: 0, measure: Measure::P, weights: None })
}

fn quadratic_of(vf: &VolatilityField, op: &'static str) -> Result<QuadraticDriver, SimError> {
    match vf.driver() {
        SpecializedDriver::QuadraticConstant(q) => Ok(*q),
        other => Err(SimError::Driver(DriverError::UnsupportedKind { op, kind: other.kind() })),
    }
}

/// Paths of `dM = alpha nu^2 dt + nu dW^alpha` under Q_alpha for a
/// quadratic driver. The stored increments are those of `W^alpha`.
pub fn simulate_girsanov(
    vf: &VolatilityField,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle, SimError> {
    check_paths(n_paths)?;
    let q = quadratic_of(vf, "Girsanov simulation")?;
    let nu = q.volatility();
    let increments = draw_increments(seed, n_paths, grid.n_steps(), grid.dt());
    let paths = euler(&grid, &increments, n_paths, 0.0, q.alpha() * nu * nu, |_, _, _, _| Ok(nu))?;
    Ok(PathBundle { grid, n_paths, paths, increments, seed, measure: Measure::QAlpha(q.alpha()), weights: None })
}

/// P-paths of a quadratic driver carrying the density `dQ_alpha/dP` with
/// kernel `gamma = alpha nu`.
pub fn simulate_girsanov_by_reweighting(
    vf: &VolatilityField,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle, SimError> {
    let q = quadratic_of(vf, "Girsanov reweighting")?;
    let gamma = q.alpha() * q.volatility();
    let mut b = simulate_nbm(vf, grid, n_paths, seed)?.with_girsanov_weights(gamma);
    b.measure = Measure::QAlpha(q.alpha());
    Ok(b)
}
