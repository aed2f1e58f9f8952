//! Option pricing under the asset model `S_t = e^{rt} M_t`, where `M` is a
//! canonical path, and calibration of driver parameters to quotes.

mod calibration;
mod pde;
mod quotes;

use serde::Serialize;
use thiserror::Error;

use crate::implicit_volatility::{VolError, VolatilityField};
use crate::neural_driver::{DriverError, MlpParams, MonotoneNet, SpecializedDriver};

pub use calibration::{
    calibrate, calibration_loss, CalibrationConfig, CalibrationResult, NELDER_MEAD_MAX_DIM, PENALTY_LOSS,
};
pub use pde::{solve_pricing_pde_with, GridSpec, Payoff, PricingGrid, SIGMA_CAP, SIGMA_FLOOR};
pub use quotes::{call_crossings, price_quotes, read_quotes, write_quotes, MarketQuote, OptionType, QuoteGrid};

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure at time step {step}: {message}")]
    Numerical { step: usize, message: String },
    #[error(transparent)]
    Vol(#[from] VolError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `sigma(t, S) = e^{rt} nu(t, e^{-rt} S) / S`.
pub fn asset_vol_from_driver(vf: &VolatilityField, t: f64, s: f64, r: f64) -> Result<f64, PricingError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(PricingError::Domain(format!("S must be positive, got {s}")));
    }
    let growth = (r * t).exp();
    Ok(growth * vf.nu(t, s / growth)? / s)
}

/// Prices `payoff` with the local volatility implied by `vf`.
pub fn solve_pricing_pde(
    vf: &VolatilityField,
    payoff: Payoff,
    r: f64,
    spec: &GridSpec,
) -> Result<PricingGrid, PricingError> {
    solve_pricing_pde_with(|t, s| asset_vol_from_driver(vf, t, s, r), payoff, r, spec)
}

/// A network driver `h(t, m, z) = z - s m` (up to a negligible `z` term),
/// whose positive root `nu = s m` gives constant asset volatility `s`.
pub fn proportional_driver(s: f64) -> Result<SpecializedDriver, DriverError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(DriverError::Precondition(format!("scale must be positive, got {s}")));
    }
    // the masked z weight is softplus(-40) ~ 4e-18
    let mlp = MlpParams::new(
        vec![3, 1],
        vec![vec![0.0, -s, -40.0]],
        vec![vec![0.0]],
        crate::neural_driver::Activation::Identity,
        vec![vec![false, false, true]],
    )?;
    let c_h = crate::neural_driver::DEFAULT_C_H;
    let h = MonotoneNet::new(Some(mlp), crate::neural_driver::softplus_inverse(1.0 - c_h), c_h)?;
    Ok(SpecializedDriver::MonotoneNetwork(h))
}

/// Serialised calibration report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub loss: f64,
    pub residuals: Vec<f64>,
    pub theta_file: String,
    pub iterations: usize,
    pub budget_exhausted: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_driver_gives_constant_sigma() {
        let vf = VolatilityField::new(proportional_driver(0.2).unwrap()).unwrap();
        for s in [10.0, 100.0, 250.0] {
            assert!((asset_vol_from_driver(&vf, 0.3, s, 0.0).unwrap() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_nu_scales_inversely_with_spot() {
        let vf = VolatilityField::new(SpecializedDriver::quadratic(2.0, 1.0).unwrap()).unwrap();
        let a = asset_vol_from_driver(&vf, 0.5, 50.0, 0.05).unwrap();
        let b = asset_vol_from_driver(&vf, 0.5, 100.0, 0.05).unwrap();
        assert!((a - (0.025f64).exp() / 50.0).abs() < 1e-14);
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(asset_vol_from_driver(&vf, 0.5, 0.0, 0.05).is_err());
    }
}
