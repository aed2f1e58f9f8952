//! Euler-Maruyama simulation of canonical paths, the measure change for
//! quadratic drivers, and Monte Carlo checks of drift and generator.

mod generator;
mod grid;
mod ito;
mod paths;

use serde::Serialize;
use thiserror::Error;

use crate::implicit_volatility::VolError;
use crate::neural_driver::DriverError;

pub use generator::{check_generator, GeneratorReport, GeneratorRow, TestFunction};
pub use grid::TimeGrid;
pub use ito::{estimate_ito_decomposition, BinSpec, ItoBin, ItoDecomposition};
pub use paths::{
    simulate_from, simulate_girsanov, simulate_girsanov_by_reweighting, simulate_nbm, simulate_with_increments,
    Measure, PathBundle,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("volatility failed on path {path}, step {step}, state {state}: {source}")]
    Root {
        path: usize,
        step: usize,
        state: f64,
        #[source]
        source: VolError,
    },
    #[error(transparent)]
    Vol(#[from] VolError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinValue {
    pub t: f64,
    pub m: f64,
    pub count: usize,
    pub value: f64,
    pub se: f64,
}

/// Serialised run summary: `{measure, alpha, n_paths, mean_T, var_T,
/// drift_bins, diffusion_bins}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub measure: &'static str,
    pub alpha: Option<f64>,
    pub n_paths: usize,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    #[serde(rename = "se_mean_T")]
    pub se_mean_t: f64,
    #[serde(rename = "var_T")]
    pub var_t: f64,
    pub drift_bins: Vec<BinValue>,
    pub diffusion_bins: Vec<BinValue>,
}

impl PathSummary {
    pub fn new(pb: &PathBundle, ito: &ItoDecomposition) -> Self {
        let (measure, alpha) = match pb.measure() {
            Measure::P => ("P", None),
            Measure::QAlpha(a) => ("Q_alpha", Some(a)),
        };
        let (mean_t, se_mean_t) = pb.terminal_mean();
        let var_t = pb.moments_at(pb.grid().n_steps()).var;
        let pick = |f: &dyn Fn(&ItoBin) -> (f64, f64)| {
            ito.bins
                .iter()
                .map(|b| {
                    let (value, se) = f(b);
                    BinValue { t: b.t_mid(), m: b.m_mid(), count: b.count, value, se }
                })
                .collect()
        };
        PathSummary {
            measure,
            alpha,
            n_paths: pb.n_paths(),
            mean_t,
            se_mean_t,
            var_t,
            drift_bins: pick(&|b| (b.drift, b.drift_se)),
            diffusion_bins: pick(&|b| (b.diffusion, b.diffusion_se)),
        }
    }
}
