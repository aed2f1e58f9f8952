//! Implicit volatility: the positive root `nu(t, x)` of `g(t, x, z) = 0`,
//! plus minimal-potential selection when several roots exist.

mod field;
mod quadrature;
mod roots;
mod selection;

use thiserror::Error;

use crate::neural_driver::DriverError;

pub use field::{VolCache, VolatilityField, DEFAULT_BRACKET, DEFAULT_MAX_EXPANSIONS, DEFAULT_TOL};
pub use quadrature::adaptive_simpson;
pub use roots::{expand_bracket, safeguarded_newton, Bracket};
pub use selection::{
    compute_potential, scan_roots, select_volatility, RootSet, ScanConfig, DEGENERATE_SLOPE, SEPARATION_MARGIN,
};

#[derive(Debug, Error)]
pub enum VolError {
    #[error("no sign change in [{lo}, {hi}] after bracket expansion")]
    NoRootInBracket { lo: f64, hi: f64 },
    #[error("driver kind {0} may have several positive roots; use solve_all_roots or assert a single-root bracket")]
    AmbiguousRoot(crate::neural_driver::DriverKind),
    #[error("no root found in scan window ({z_min}, {z_max})")]
    NoRootFound { z_min: f64, z_max: f64 },
    #[error("degenerate root at z={root}: |dg/dz| = {slope:e} < {DEGENERATE_SLOPE:e}")]
    DegenerateRoot { root: f64, slope: f64 },
    #[error("potentials of roots {a} and {b} differ by {gap:e}, within the separation margin")]
    SeparationViolation { a: f64, b: f64, gap: f64 },
    #[error("selected root {root} has dg/dz = {slope} <= 0")]
    SecondOrderViolation { root: f64, slope: f64 },
    #[error("root iteration stalled at z={last} with residual {residual:e}")]
    NonConvergence { last: f64, residual: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("at (t={t}, x={x}): {source}")]
    AtNode {
        t: f64,
        x: f64,
        #[source]
        source: Box<VolError>,
    },
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VolError {
    pub(crate) fn at(self, t: f64, x: f64) -> VolError {
        match self {
            e @ VolError::AtNode { .. } => e,
            e => VolError::AtNode { t, x, source: Box::new(e) },
        }
    }

    /// The error with any grid-coordinate wrapper removed.
    pub fn root_cause(&self) -> &VolError {
        match self {
            VolError::AtNode { source, .. } => source.root_cause(),
            e => e,
        }
    }
}
