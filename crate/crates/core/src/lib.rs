//! Neural-driver BSDE numerics: constrained drivers, implicit volatility,
//! path simulation, BSDE regression, mean-field particle systems and PDE
//! pricing.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde_solver;
pub mod implicit_volatility;
pub mod meanfield;
pub mod neural_driver;
pub mod pricing;
pub mod rng;
pub mod sde_engine;
pub mod stats;
