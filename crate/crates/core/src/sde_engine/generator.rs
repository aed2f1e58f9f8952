//! Monte Carlo check of the generator `L u = u_t + nu^2 u_xx / 2`.

use serde::Serialize;

use super::{simulate_nbm, SimError, TimeGrid};
use crate::implicit_volatility::VolatilityField;
use crate::stats::moments;

/// A twice-differentiable test function with its partial derivatives.
pub trait TestFunction: Sync {
    fn u(&self, t: f64, x: f64) -> f64;
    fn u_t(&self, t: f64, x: f64) -> f64;
    fn u_x(&self, t: f64, x: f64) -> f64;
    fn u_xx(&self, t: f64, x: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorRow {
    pub t: f64,
    /// mean of u(t + dt, M_{t+dt}) - u(t, M_t)
    pub lhs: f64,
    /// mean of L u(t, M_t) dt
    pub rhs: f64,
    pub residual: f64,
    pub se: f64,
    /// 4 se + dt^2
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub rows: Vec<GeneratorRow>,
}

impl GeneratorReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Simulates canonical paths and compares one-step increments of `u` with
/// the generator at each step listed in `steps` (all steps if empty).
pub fn check_generator(
    vf: &VolatilityField,
    u: &dyn TestFunction,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    steps: &[usize],
) -> Result<GeneratorReport, SimError> {
    let pb = simulate_nbm(vf, grid, n_paths, seed)?;
    let dt = grid.dt();
    let all: Vec<usize> = (0..grid.n_steps()).collect();
    let steps = if steps.is_empty() { &all[..] } else { steps };
    let mut rows = Vec::with_capacity(steps.len());
    for &k in steps {
        if k >= grid.n_steps() {
            return Err(SimError::Precondition(format!("step {k} beyond the grid")));
        }
        let t = grid.time(k);
        let t1 = grid.time(k + 1);
        let mut diffs = Vec::with_capacity(n_paths);
        let mut lhs_v = Vec::with_capacity(n_paths);
        let mut rhs_v = Vec::with_capacity(n_paths);
        for i in 0..n_paths {
            let m = pb.value(i, k);
            let nu = vf.nu(t, m).map_err(|source| SimError::Root { path: i, step: k, state: m, source })?;
            let du = u.u(t1, pb.value(i, k + 1)) - u.u(t, m);
            let lu = (u.u_t(t, m) + 0.5 * nu * nu * u.u_xx(t, m)) * dt;
            if !(du.is_finite() && lu.is_finite()) {
                return Err(SimError::Precondition(format!("test function not finite at (t={t}, x={m})")));
            }
            lhs_v.push(du);
            rhs_v.push(lu);
            diffs.push(du - lu);
        }
        let d = moments(&diffs);
        let bound = 4.0 * d.se + dt * dt;
        rows.push(GeneratorRow {
            t,
            lhs: moments(&lhs_v).mean,
            rhs: moments(&rhs_v).mean,
            residual: d.mean,
            se: d.se,
            bound,
            pass: d.mean.abs() <= bound,
        });
    }
    Ok(GeneratorReport { rows })
}
