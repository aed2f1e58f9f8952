//! The interacting particle system and its coupled ideal copy.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{gaussian_pdf, DensityGrid};
use super::interaction::{volatilities, Atoms};
use super::pde::{MeasureFlow, Snapshot};
use super::MeanFieldError;
use crate::neural_driver::MeanFieldDriver;
use crate::rng::stream_rng;

/// Law of the initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<(), MeanFieldError> {
        let ok = match *self {
            InitialLaw::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            InitialLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && hi > lo,
        };
        if ok {
            Ok(())
        } else {
            Err(MeanFieldError::Precondition(format!("invalid initial law {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { mean, .. } => mean,
            InitialLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { sd, .. } => sd,
            InitialLaw::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            InitialLaw::Gaussian { mean, sd } => gaussian_pdf(x, mean, sd),
            InitialLaw::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            InitialLaw::Gaussian { mean, sd } => {
                let d = Normal::new(mean, sd).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            InitialLaw::Uniform { lo, hi } => {
                let d = Uniform::new(lo, hi).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }

    /// Nodal density on `n` points of `[x_min, x_max]`, renormalised.
    pub fn density(&self, x_min: f64, x_max: f64, n: usize) -> Result<DensityGrid, MeanFieldError> {
        DensityGrid::from_fn(x_min, x_max, n, |x| self.pdf(x))
    }
}

/// `N` interacting particles and their ideal counterparts, started from the
/// same points and driven by the same increments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub t: f64,
    pub states: Vec<f64>,
    pub ideal_states: Vec<f64>,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn new(initial: Vec<f64>, seed: u64) -> Result<Self, MeanFieldError> {
        if initial.is_empty() || initial.iter().any(|x| !x.is_finite()) {
            return Err(MeanFieldError::Precondition("ensemble needs finite initial states".into()));
        }
        Ok(ParticleEnsemble { t: 0.0, ideal_states: initial.clone(), states: initial, seed })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `(1/N) sum_i |M^i - Mbar^i|^2`.
    pub fn coupling_error(&self) -> f64 {
        let s: f64 = self.states.iter().zip(&self.ideal_states).map(|(a, b)| (a - b) * (a - b)).sum();
        s / self.states.len() as f64
    }

    pub fn sorted_states(&self) -> Vec<f64> {
        sorted(&self.states)
    }

    pub fn sorted_ideal_states(&self) -> Vec<f64> {
        sorted(&self.ideal_states)
    }
}

pub(crate) fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Volatilities at `xs` against a reference law.
pub fn volatilities_against(
    d: &MeanFieldDriver,
    t: f64,
    xs: &[f64],
    law: &Snapshot,
) -> Result<Vec<f64>, MeanFieldError> {
    match law {
        Snapshot::Density(u) => {
            let m = u.mass();
            let w: Vec<f64> = u.values().iter().enumerate().map(|(j, v)| u.weight(j) * v / m).collect();
            let nodes = u.nodes();
            volatilities(d, t, xs, Atoms { points: &nodes, weights: Some(&w) })
        }
        Snapshot::Quantiles(q) => volatilities(d, t, xs, Atoms::uniform(q)),
    }
}

/// One Euler step of both systems. The interacting particles see their own
/// empirical measure, the ideal ones see `reference`. `increments[i]` is the
/// Brownian increment of particle `i` (variance `dt`).
pub fn step_interacting(
    ens: &ParticleEnsemble,
    d: &MeanFieldDriver,
    dt: f64,
    increments: &[f64],
    reference: &Snapshot,
) -> Result<ParticleEnsemble, MeanFieldError> {
    if !(dt > 0.0) {
        return Err(MeanFieldError::Precondition(format!("dt must be > 0, got {dt}")));
    }
    if increments.len() != ens.len() {
        return Err(MeanFieldError::Precondition(format!(
            "{} increments for {} particles",
            increments.len(),
            ens.len()
        )));
    }
    let nu = volatilities(d, ens.t, &ens.states, Atoms::uniform(&ens.states))?;
    let nu_bar = volatilities_against(d, ens.t, &ens.ideal_states, reference)?;
    Ok(ParticleEnsemble {
        t: ens.t + dt,
        states: ens.states.iter().zip(&nu).zip(increments).map(|((x, v), dw)| x + v * dw).collect(),
        ideal_states: ens.ideal_states.iter().zip(&nu_bar).zip(increments).map(|((x, v), dw)| x + v * dw).collect(),
        seed: ens.seed,
    })
}

/// Brownian increments for step `step` of an `n`-particle ensemble, drawn
/// from per-particle streams so the values do not depend on scheduling.
pub fn particle_increments(seed: u64, step: usize, n: usize, dt: f64) -> Vec<f64> {
    let sq = dt.sqrt();
    let mut out = vec![0.0; n];
    out.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
        let mut rng = stream_rng(seed, ((step as u64) << 32) | c as u64);
        for v in chunk {
            let z: f64 = rng.sample(StandardNormal);
            *v = sq * z;
        }
    });
    out
}

/// Self-consistent reference flow from one large interacting system; each
/// snapshot is the sorted sample at a time node.
pub fn particle_proxy_flow(
    d: &MeanFieldDriver,
    mu0: &InitialLaw,
    t_end: f64,
    n_steps: usize,
    n_particles: usize,
    seed: u64,
) -> Result<MeasureFlow, MeanFieldError> {
    mu0.validate()?;
    if !(t_end > 0.0) || n_steps < 1 || n_particles < 2 {
        return Err(MeanFieldError::Precondition(
            "proxy flow needs T > 0, n_steps >= 1 and at least 2 particles".into(),
        ));
    }
    let dt = t_end / n_steps as f64;
    let mut x = mu0.sample(n_particles, &mut stream_rng(seed, u64::MAX));
    let mut times = vec![0.0];
    let mut snapshots = vec![Snapshot::Quantiles(sorted(&x))];
    for k in 0..n_steps {
        let t = dt * k as f64;
        let nu = volatilities(d, t, &x, Atoms::uniform(&x))?;
        let dw = particle_increments(seed, k, n_particles, dt);
        for ((xi, v), w) in x.iter_mut().zip(&nu).zip(&dw) {
            *xi += v * w;
        }
        times.push(if k + 1 == n_steps { t_end } else { dt * (k + 1) as f64 });
        snapshots.push(Snapshot::Quantiles(sorted(&x)));
    }
    Ok(MeasureFlow { times, snapshots, clip_mass: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_driver::{MlpParams, MonotoneNet, DEFAULT_C_H};

    fn driver(w_y: f64, b: f64) -> MeanFieldDriver {
        let h = MonotoneNet::linear(1.0, DEFAULT_C_H).unwrap();
        MeanFieldDriver::new(h, MlpParams::linear(&[0.0, w_y], b)).unwrap()
    }

    #[test]
    fn decoupled_systems_coincide() {
        let d = driver(0.0, 0.8);
        let x0 = InitialLaw::Gaussian { mean: 0.0, sd: 1.0 }.sample(50, &mut stream_rng(1, 0));
        let mut ens = ParticleEnsemble::new(x0, 1).unwrap();
        let reference = Snapshot::Quantiles(vec![0.0]);
        for k in 0..20 {
            let dw = particle_increments(1, k, ens.len(), 0.05);
            ens = step_interacting(&ens, &d, 0.05, &dw, &reference).unwrap();
        }
        assert_eq!(ens.states, ens.ideal_states);
        assert_eq!(ens.coupling_error(), 0.0);
    }

    #[test]
    fn single_particle_step() {
        // nu = 1 + 0.1 x at N = 1
        let d = driver(0.1, 1.0);
        let ens = ParticleEnsemble::new(vec![2.0], 0).unwrap();
        let next = step_interacting(&ens, &d, 0.01, &[0.1], &Snapshot::Quantiles(vec![0.0])).unwrap();
        assert!((next.states[0] - (2.0 + 1.2 * 0.1)).abs() < 1e-15);
        assert!((next.ideal_states[0] - (2.0 + 1.0 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn increments_have_unit_scale() {
        let dw = particle_increments(3, 0, 20_000, 0.25);
        let var = dw.iter().map(|x| x * x).sum::<f64>() / dw.len() as f64;
        assert!((var - 0.25).abs() < 0.02);
        assert_eq!(dw, particle_increments(3, 0, 20_000, 0.25));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let ens = ParticleEnsemble::new(vec![0.0, 1.0], 0).unwrap();
        let r = step_interacting(&ens, &driver(0.1, 1.0), 0.1, &[0.0], &Snapshot::Quantiles(vec![0.0]));
        assert!(matches!(r, Err(MeanFieldError::Precondition(_))));
    }
}
