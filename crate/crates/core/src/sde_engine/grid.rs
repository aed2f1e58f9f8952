use serde::{Deserialize, Serialize};

use super::SimError;

/// Uniform grid `t0 < t0 + dt < ... < t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self, SimError> {
        if !(t0 >= 0.0) || !(t_end > t0) || !t_end.is_finite() {
            return Err(SimError::Precondition(format!("time grid needs 0 <= t0 < T, got t0={t0}, T={t_end}")));
        }
        if n_steps < 1 {
            return Err(SimError::Precondition("time grid needs n_steps >= 1".into()));
        }
        Ok(TimeGrid { t0, t_end, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn dt(&self) -> f64 {
        self.horizon() / self.n_steps as f64
    }

    /// `t_k`; the last node is exactly `t_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t0 + self.dt() * k as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid node nearest to `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt()).round();
        k.clamp(0.0, self.n_steps as f64) as usize
    }
}
