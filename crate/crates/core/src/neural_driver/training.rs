//! Fitting a monotone driver so that its implicit root tracks a target
//! volatility surface.
//!
//! The network is regressed onto the ideal driver `z - nu(t, x)` at
//! `z = nu` and `z = nu +- band` on a rectangular grid. The centre term puts
//! the root on the target; the side terms keep the z-slope near one, so a
//! small residual means a small root error rather than a flat driver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::driver::{MonotoneNet, SpecializedDriver, DEFAULT_C_H};
use super::mlp::{softplus_inverse, Activation, MlpParams};
use super::DriverError;
use crate::implicit_volatility::VolatilityField;

/// Rectangular `(t, x)` sample grid, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGrid {
    pub t_range: (f64, f64),
    pub x_range: (f64, f64),
    pub n_t: usize,
    pub n_x: usize,
}

impl TrainingGrid {
    pub fn new(t_range: (f64, f64), x_range: (f64, f64), n_t: usize, n_x: usize) -> Result<Self, DriverError> {
        if n_t < 1 || n_x < 1 || !(t_range.1 >= t_range.0) || !(x_range.1 >= x_range.0) {
            return Err(DriverError::Precondition("training grid needs ordered ranges and >= 1 node per axis".into()));
        }
        Ok(TrainingGrid { t_range, x_range, n_t, n_x })
    }

    fn nodes(range: (f64, f64), n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![range.0];
        }
        (0..n).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        Self::nodes(self.t_range, self.n_t)
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        Self::nodes(self.x_range, self.n_x)
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let xs = self.x_nodes();
        self.t_nodes().into_iter().flat_map(|t| xs.iter().map(move |&x| (t, x))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub grid: TrainingGrid,
    pub epsilon: f64,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub c_h: f64,
    /// Half-width of the z-band around the target used in the loss.
    pub band: f64,
    /// Iterations between sup-error checks; training stops once the error
    /// falls below half of `epsilon`.
    pub check_every: usize,
}

impl TrainingConfig {
    pub fn new(grid: TrainingGrid, epsilon: f64, iterations: usize, seed: u64) -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            iterations,
            grid,
            epsilon,
            seed,
            hidden_sizes: vec![16, 16],
            // softplus or ELU with positive downstream weights would make the
            // network convex in every input, unable to fit non-convex targets
            activation: Activation::Tanh,
            c_h: DEFAULT_C_H,
            band: 0.1,
            check_every: 250,
        }
    }

    fn validate(&self) -> Result<(), DriverError> {
        if self.iterations < 1 {
            return Err(DriverError::Precondition("iterations must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(DriverError::Precondition("epsilon must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(DriverError::Precondition("learning_rate must be positive".into()));
        }
        if !(self.band >= 0.0) {
            return Err(DriverError::Precondition("band must be >= 0".into()));
        }
        if !self.activation.is_monotone() {
            return Err(DriverError::Precondition("training needs a monotone activation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub driver: SpecializedDriver,
    /// max over the grid of |nu_theta - nu|; infinite if a root could not be found.
    pub achieved_sup_error: f64,
    pub final_loss: f64,
    pub iterations_used: usize,
}

/// Root error of `driver` against `target` at every grid node.
pub fn sup_root_error(driver: &SpecializedDriver, grid: &TrainingGrid, target: &dyn Fn(f64, f64) -> f64) -> f64 {
    let field = match VolatilityField::new(driver.clone()) {
        Ok(f) => f,
        Err(_) => return f64::INFINITY,
    };
    grid.points()
        .into_iter()
        .map(|(t, x)| match field.solve_root(t, x) {
            Ok(nu) => (nu - target(t, x)).abs(),
            Err(_) => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

pub fn fit_driver_to_target(target: &dyn Fn(f64, f64) -> f64, cfg: &TrainingConfig) -> Result<FitResult, DriverError> {
    cfg.validate()?;
    let points = cfg.grid.points();
    let mut samples = Vec::with_capacity(points.len());
    for (t, x) in points {
        let nu = target(t, x);
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(DriverError::Precondition(format!(
                "target volatility must be positive on the grid, got {nu} at (t={t}, x={x})"
            )));
        }
        samples.push((t, x, nu));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![3];
    sizes.extend(&cfg.hidden_sizes);
    sizes.push(1);
    let mlp = MlpParams::random(&sizes, cfg.activation, Some(2), 0.1, &mut rng);
    // total initial z-slope of one, matching the ideal driver z - nu
    let mut net = MonotoneNet::new(Some(mlp), softplus_inverse(1.0 - cfg.c_h), cfg.c_h)?;

    let n_params = net.n_params();
    let mut theta = net.param_vector();
    let mut grad = vec![0.0; n_params];
    let mut adam = Adam::new(n_params, cfg.learning_rate);
    let offsets: &[f64] = if cfg.band > 0.0 { &[-cfg.band, 0.0, cfg.band] } else { &[0.0] };
    let inv_n = 1.0 / (samples.len() * offsets.len()) as f64;
    let mut loss = f64::INFINITY;
    let mut iterations_used = 0;
    let mut sup = f64::INFINITY;

    for it in 1..=cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for &(t, x, nu) in &samples {
            for &dz in offsets {
                let r = net.value(t, x, nu + dz) - dz;
                total += r * r;
                net.accumulate_param_grad(t, x, nu + dz, 2.0 * r * inv_n, &mut grad);
            }
        }
        loss = total * inv_n;
        adam.step(&mut theta, &grad);
        net.set_param_vector(&theta);
        iterations_used = it;
        if cfg.check_every > 0 && it % cfg.check_every == 0 {
            let d = SpecializedDriver::MonotoneNetwork(net.clone());
            sup = sup_root_error(&d, &cfg.grid, target);
            if sup < 0.5 * cfg.epsilon {
                break;
            }
        }
    }

    let driver = SpecializedDriver::MonotoneNetwork(net);
    if cfg.check_every == 0 || iterations_used % cfg.check_every != 0 {
        sup = sup_root_error(&driver, &cfg.grid, target);
    }
    Ok(FitResult { driver, achieved_sup_error: sup, final_loss: loss, iterations_used })
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999).
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-12);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_is_fitted() {
        let grid = TrainingGrid::new((0.0, 1.0), (-1.0, 1.0), 6, 11).unwrap();
        let cfg = TrainingConfig::new(grid, 0.05, 2000, 1);
        let target = |_t: f64, _x: f64| 1.0;
        let fit = fit_driver_to_target(&target, &cfg).unwrap();
        assert!(fit.achieved_sup_error < 0.05, "sup error {}", fit.achieved_sup_error);
        let c_h = fit.driver.c_h().unwrap();
        assert!(fit.driver.dz(0.5, 0.0, 1.0).unwrap() >= c_h);
    }

    #[test]
    fn non_positive_target_is_rejected() {
        let grid = TrainingGrid::new((0.0, 1.0), (-1.0, 1.0), 3, 3).unwrap();
        let cfg = TrainingConfig::new(grid, 0.05, 10, 1);
        let target = |_t: f64, x: f64| x;
        assert!(matches!(fit_driver_to_target(&target, &cfg), Err(DriverError::Precondition(_))));
    }

    #[test]
    fn exhausted_budget_is_reported_not_raised() {
        let grid = TrainingGrid::new((0.0, 1.0), (-3.0, 3.0), 3, 9).unwrap();
        let mut cfg = TrainingConfig::new(grid, 1e-9, 3, 1);
        cfg.check_every = 0;
        let target = |_t: f64, x: f64| 0.2 + 0.1 * x.sin();
        let fit = fit_driver_to_target(&target, &cfg).unwrap();
        assert_eq!(fit.iterations_used, 3);
        assert!(fit.achieved_sup_error > 1e-9);
    }
}
