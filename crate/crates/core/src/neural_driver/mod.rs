//! Architecturally constrained BSDE drivers.
//!
//! A driver is stored in its specialised form `g(t, m, z)`; the general
//! form `f(t, x, y, z)` is available through [`GeneralDriver`]. Network
//! kinds are strictly increasing in `z` with slope at least `c_h`, so the
//! implicit volatility root is unique wherever it exists.

mod driver;
mod io;
mod mlp;
mod training;

use thiserror::Error;

pub use driver::{
    DriverKind, GeneralDriver, MeanFieldDriver, MonotoneNet, Polynomial, QuadraticDriver, ShiftedMonotone,
    SpecializedDriver, DEFAULT_C_H,
};
pub use io::{driver_from_json, driver_to_json, load_driver, save_driver, DriverFile, NetworkRecord};
pub use mlp::{sigmoid, softplus, softplus_inverse, Activation, ForwardTrace, MlpParams};
pub use training::{fit_driver_to_target, sup_root_error, FitResult, TrainingConfig, TrainingGrid};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{op} is not supported for driver kind {kind}")]
    UnsupportedKind { op: &'static str, kind: DriverKind },
    #[error("driver file field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
