//! Interacting particle systems driven by a mean-field driver, their
//! McKean-Vlasov limit, and the density PDE of that limit.

mod chaos;
mod density;
mod interaction;
mod particles;
mod pde;
mod wasserstein;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::implicit_volatility::VolError;
use crate::neural_driver::{DriverError, MeanFieldDriver};
use crate::rng::stream_rng;

pub use chaos::{pde_domain, reference_flow, run_chaos_experiment, ChaosConfig, ChaosRow, ChaosSummary, ReferenceFlow};
pub use density::{gaussian_pdf, DensityGrid};
pub use interaction::{meanfield_volatility, solve_level, Atoms};
pub use particles::{
    particle_increments, particle_proxy_flow, step_interacting, volatilities_against, InitialLaw, ParticleEnsemble,
};
pub use pde::{solve_mckean_vlasov_pde, MeasureFlow, PdeScheme, Snapshot};
pub use wasserstein::{w2_distance_1d, w2_sorted};

#[derive(Debug, Error)]
pub enum MeanFieldError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("volatility failed for particle {index} at t = {t}, x = {x}: {source}")]
    Root {
        index: usize,
        t: f64,
        x: f64,
        #[source]
        source: VolError,
    },
    #[error("explicit step dt = {dt} is unstable; use dt <= {max_dt} or the implicit scheme")]
    Stability { dt: f64, max_dt: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of comparing `|nu(mu1) - nu(mu2)|` with `L * W2(mu1, mu2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzProbe {
    pub bound: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub n_pairs: usize,
}

/// Draws `n_pairs` pairs of Gaussian samples (random location and scale)
/// and a random point `x` per pair, and checks the measure-Lipschitz bound.
pub fn lipschitz_probe(
    d: &MeanFieldDriver,
    n_pairs: usize,
    sample_size: usize,
    seed: u64,
) -> Result<LipschitzProbe, MeanFieldError> {
    if n_pairs == 0 || sample_size == 0 {
        return Err(MeanFieldError::Precondition("probe needs pairs and samples".into()));
    }
    let bound = d.measure_lipschitz_bound();
    let mut rng = stream_rng(seed, 0);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..n_pairs {
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let law = InitialLaw::Gaussian { mean: rng.random_range(-1.0..1.0), sd: rng.random_range(0.2..1.5) };
            law.sample(sample_size, rng)
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let t = rng.random_range(0.0..1.0);
        let x = rng.random_range(-2.0..2.0);
        let na = volatilities_against(d, t, &[x], &Snapshot::Quantiles(a.clone()))?[0];
        let nb = volatilities_against(d, t, &[x], &Snapshot::Quantiles(b.clone()))?[0];
        let w2 = w2_distance_1d(&a, &b)?;
        let diff = (na - nb).abs();
        if w2 > 0.0 {
            max_ratio = max_ratio.max(diff / w2);
        }
        if diff > bound * w2 + 1e-12 {
            violations += 1;
        }
    }
    Ok(LipschitzProbe { bound, max_ratio, violations, n_pairs })
}
