//! Backward regression solver for one-dimensional BSDEs on simulated
//! forward paths.

mod regression;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::implicit_volatility::VolatilityField;
use crate::neural_driver::{DriverError, GeneralDriver};
use crate::sde_engine::{simulate_nbm, PathBundle, SimError, TimeGrid};

pub use regression::Projector;

/// Driver evaluations are clipped to this magnitude.
pub const DRIVER_CLIP: f64 = 1e6;

#[derive(Debug, Error)]
pub enum BsdeError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("regression at step {step} is ill-conditioned (condition number {condition:e}); lower basis_degree")]
    IllConditioned { step: usize, condition: f64 },
    #[error("driver failed at step {step}, path {path}: {source}")]
    Driver {
        step: usize,
        path: usize,
        #[source]
        source: DriverError,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `f(t, x, y, z) = a y + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDriver {
    pub a: f64,
    pub b: f64,
}

impl GeneralDriver for AffineDriver {
    fn general(&self, _t: f64, _x: f64, y: f64, _z: f64) -> Result<f64, DriverError> {
        Ok(self.a * y + self.b)
    }
}

/// A driver shifted by a constant, `f + c`.
#[derive(Debug, Clone, Copy)]
pub struct Offset<'a, D: GeneralDriver + ?Sized> {
    pub inner: &'a D,
    pub offset: f64,
}

impl<D: GeneralDriver + ?Sized> GeneralDriver for Offset<'_, D> {
    fn general(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, DriverError> {
        Ok(self.inner.general(t, x, y, z)? + self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeConfig {
    pub basis_degree: usize,
    /// Extra fixed-point passes for `Y_k` with `Y_k` (rather than
    /// `Y_{k+1}`) inside the driver; 0 gives the explicit scheme.
    pub picard_iterations: usize,
    pub max_condition: f64,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        BsdeConfig { basis_degree: 3, picard_iterations: 0, max_condition: 1e12 }
    }
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub n_paths: usize,
    /// Row-major `n_paths x (n_steps + 1)`.
    pub y: Vec<f64>,
    /// Row-major `n_paths x n_steps`.
    pub z: Vec<f64>,
    pub basis_degree: usize,
    pub terminal: String,
    pub clip_count: usize,
    /// Gram-matrix condition number per step.
    pub condition_numbers: Vec<f64>,
}

impl BsdeSolution {
    pub fn y_at(&self, i: usize, k: usize) -> f64 {
        self.y[i * (self.grid.n_steps() + 1) + k]
    }

    pub fn z_at(&self, i: usize, k: usize) -> f64 {
        self.z[i * self.grid.n_steps() + k]
    }

    pub fn y_column(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.y_at(i, k)).collect()
    }

    pub fn z_column(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.z_at(i, k)).collect()
    }

    /// Mean of `Y_0` over paths (all paths share `X_0` in the usual setup).
    pub fn y0(&self) -> f64 {
        self.y_column(0).iter().sum::<f64>() / self.n_paths as f64
    }
}

fn eval_driver(
    d: &dyn GeneralDriver,
    t: f64,
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    step: usize,
) -> Result<(Vec<f64>, usize), BsdeError> {
    let vals: Vec<Result<f64, BsdeError>> = (0..xs.len())
        .into_par_iter()
        .map(|i| d.general(t, xs[i], ys[i], zs[i]).map_err(|source| BsdeError::Driver { step, path: i, source }))
        .collect();
    let mut clips = 0;
    let mut out = Vec::with_capacity(vals.len());
    for v in vals {
        let v = v?;
        if v.abs() > DRIVER_CLIP || v.is_nan() {
            clips += 1;
            out.push(if v.is_nan() { 0.0 } else { v.signum() * DRIVER_CLIP });
        } else {
            out.push(v);
        }
    }
    Ok((out, clips))
}

/// Solves `-dY = f(t, X, Y, Z) dt - Z dW`, `Y_T = xi(X_T)`, with `X` the
/// forward paths of `forward`.
///
/// At each step, `Z_k` is the projection of
/// `(Y_{k+1} - E[Y_{k+1} | X_k]) dW_k / dt` and `Y_k` the projection of
/// `Y_{k+1} + f(t_k, X_k, Y_{k+1}, Z_k) dt`. Subtracting the fitted
/// conditional mean before multiplying by `dW_k` leaves the target's
/// expectation unchanged and removes most of its variance.
pub fn solve_bsde(
    d: &dyn GeneralDriver,
    forward: &PathBundle,
    terminal: &dyn Fn(f64) -> f64,
    terminal_label: &str,
    cfg: &BsdeConfig,
) -> Result<BsdeSolution, BsdeError> {
    if cfg.basis_degree < 1 {
        return Err(BsdeError::Precondition("basis_degree must be >= 1".into()));
    }
    let grid = *forward.grid();
    let n = grid.n_steps();
    let np = forward.n_paths();
    let dt = grid.dt();
    let mut y = vec![0.0; np * (n + 1)];
    let mut z = vec![0.0; np * n];
    let mut condition_numbers = vec![0.0; n];
    let mut clip_count = 0;

    let mut y_next: Vec<f64> = forward.terminal().iter().map(|&x| terminal(x)).collect();
    for (i, v) in y_next.iter().enumerate() {
        y[i * (n + 1) + n] = *v;
    }
    for k in (0..n).rev() {
        let t = grid.time(k);
        let xs = forward.column(k);
        let proj = Projector::new(&xs, cfg.basis_degree, cfg.max_condition, k)?;
        condition_numbers[k] = proj.condition();
        let e_next = proj.project(&y_next);
        let z_target: Vec<f64> = (0..np).map(|i| (y_next[i] - e_next[i]) * forward.increment(i, k) / dt).collect();
        let z_k = proj.project(&z_target);

        let (f, c) = eval_driver(d, t, &xs, &y_next, &z_k, k)?;
        clip_count += c;
        let mut y_k = proj.project(&(0..np).map(|i| y_next[i] + f[i] * dt).collect::<Vec<_>>());
        for _ in 0..cfg.picard_iterations {
            let (f, c) = eval_driver(d, t, &xs, &y_k, &z_k, k)?;
            clip_count += c;
            y_k = proj.project(&(0..np).map(|i| y_next[i] + f[i] * dt).collect::<Vec<_>>());
        }
        for i in 0..np {
            y[i * (n + 1) + k] = y_k[i];
            z[i * n + k] = z_k[i];
        }
        y_next = y_k;
    }
    Ok(BsdeSolution {
        grid,
        n_paths: np,
        y,
        z,
        basis_degree: cfg.basis_degree,
        terminal: terminal_label.to_string(),
        clip_count,
        condition_numbers,
    })
}

/// `{checkpoints, mean_abs_err, max_abs_err, clip_count, condition_numbers}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub checkpoints: Vec<f64>,
    pub mean_abs_err: Vec<f64>,
    pub max_abs_err: Vec<f64>,
    pub clip_count: usize,
    pub condition_numbers: Vec<f64>,
}

/// Default checkpoints `T/4, T/2, 3T/4` measured from `t0`.
pub fn default_checkpoints(grid: &TimeGrid) -> Vec<f64> {
    [0.25, 0.5, 0.75].iter().map(|f| grid.t0() + f * grid.horizon()).collect()
}

/// `|Y_s - M_s|` statistics at the checkpoints for a solved BSDE.
pub fn martingale_report(forward: &PathBundle, sol: &BsdeSolution, checkpoints: &[f64]) -> MartingaleReport {
    let grid = forward.grid();
    let mut mean_abs_err = Vec::new();
    let mut max_abs_err = Vec::new();
    for &s in checkpoints {
        let k = grid.nearest_step(s);
        let errs: Vec<f64> = (0..forward.n_paths()).map(|i| (sol.y_at(i, k) - forward.value(i, k)).abs()).collect();
        mean_abs_err.push(errs.iter().sum::<f64>() / errs.len() as f64);
        max_abs_err.push(errs.iter().cloned().fold(0.0, f64::max));
    }
    MartingaleReport {
        checkpoints: checkpoints.to_vec(),
        mean_abs_err,
        max_abs_err,
        clip_count: sol.clip_count,
        condition_numbers: sol.condition_numbers.clone(),
    }
}

/// Simulates canonical paths from `vf`, solves the BSDE with driver `d`
/// and terminal `M_T`, and compares `Y` with `M` at the checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn verify_nbm_martingale(
    vf: &VolatilityField,
    d: &dyn GeneralDriver,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    checkpoints: &[f64],
    cfg: &BsdeConfig,
) -> Result<MartingaleReport, BsdeError> {
    for &s in checkpoints {
        if !(s >= grid.t0() && s <= grid.t_end()) {
            return Err(BsdeError::Precondition(format!("checkpoint {s} outside the time grid")));
        }
    }
    let forward = simulate_nbm(vf, grid, n_paths, seed)?;
    let sol = solve_bsde(d, &forward, &|x| x, "M_T", cfg)?;
    Ok(martingale_report(&forward, &sol, checkpoints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_driver::SpecializedDriver;
    use crate::sde_engine::simulate_with_increments;

    fn unit_field() -> VolatilityField {
        VolatilityField::new(SpecializedDriver::quadratic(2.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn terminal_is_exact() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let fwd = simulate_nbm(&unit_field(), grid, 500, 1).unwrap();
        let xi = |x: f64| x.sin();
        let sol = solve_bsde(&AffineDriver { a: 0.0, b: 0.0 }, &fwd, &xi, "sin", &BsdeConfig::default()).unwrap();
        for i in 0..500 {
            assert_eq!(sol.y_at(i, 10).to_bits(), fwd.value(i, 10).sin().to_bits());
        }
    }

    #[test]
    fn discounting_driver() {
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let fwd = simulate_nbm(&unit_field(), grid, 2000, 2).unwrap();
        let sol = solve_bsde(&AffineDriver { a: -0.05, b: 0.0 }, &fwd, &|_| 1.0, "1", &BsdeConfig::default()).unwrap();
        // explicit Euler gives (1 - r dt)^n exactly for a constant terminal
        let want = (1.0f64 - 0.05 / 50.0).powi(50);
        assert!((sol.y0() - want).abs() < 1e-12);
        assert!((sol.y0() - (-0.05f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn frozen_paths_give_zero_solution() {
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let fwd = simulate_with_increments(&unit_field(), grid, vec![0.0; 8 * 16], 0.0).unwrap();
        let d = SpecializedDriver::polynomial(vec![0.0, 0.0, 1.0]).unwrap();
        let sol = solve_bsde(&d, &fwd, &|x| x, "M_T", &BsdeConfig::default()).unwrap();
        assert!(sol.y.iter().all(|&v| v == 0.0));
        assert!(sol.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degree_zero_is_rejected() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let fwd = simulate_nbm(&unit_field(), grid, 10, 1).unwrap();
        let cfg = BsdeConfig { basis_degree: 0, ..BsdeConfig::default() };
        assert!(matches!(
            solve_bsde(&AffineDriver { a: 0.0, b: 0.0 }, &fwd, &|x| x, "M_T", &cfg),
            Err(BsdeError::Precondition(_))
        ));
    }
}
