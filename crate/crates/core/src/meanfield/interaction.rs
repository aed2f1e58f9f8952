//! Interaction levels `E_{Y~mu}[phi(x, Y)]` and the volatility root
//! `h1(t, x, nu) = level`.

use rayon::prelude::*;

use super::MeanFieldError;
use crate::implicit_volatility::{expand_bracket, safeguarded_newton, VolError, DEFAULT_MAX_EXPANSIONS, DEFAULT_TOL};
use crate::neural_driver::{MeanFieldDriver, MlpParams, MonotoneNet};

/// A probability measure given by atoms and weights summing to one
/// (uniform when `weights` is `None`).
#[derive(Debug, Clone, Copy)]
pub struct Atoms<'a> {
    pub points: &'a [f64],
    pub weights: Option<&'a [f64]>,
}

impl<'a> Atoms<'a> {
    pub fn uniform(points: &'a [f64]) -> Self {
        Atoms { points, weights: None }
    }

    fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self.weights {
            Some(w) => self.points.iter().zip(w).map(|(&y, &w)| w * f(y)).sum(),
            None => self.points.iter().map(|&y| f(y)).sum::<f64>() / self.points.len() as f64,
        }
    }
}

/// `x -> E_mu[phi(x, Y)]`, with the expectation precomputed whenever the
/// network structure allows.
pub(crate) enum Level<'a> {
    /// single affine layer: `w_x x + w_y E[Y] + b`
    Affine {
        wx: f64,
        c: f64,
    },
    /// phi does not read x
    Constant(f64),
    General {
        phi: &'a MlpParams,
        atoms: Atoms<'a>,
    },
}

impl<'a> Level<'a> {
    pub(crate) fn new(phi: &'a MlpParams, atoms: Atoms<'a>) -> Result<Self, MeanFieldError> {
        if atoms.points.is_empty() {
            return Err(MeanFieldError::Precondition("measure has no atoms".into()));
        }
        if phi.n_layers() == 1 {
            let w = &phi.effective_weights()[0];
            let b = phi.biases()[0][0];
            let mean = atoms.expect(|y| y);
            return Ok(Level::Affine { wx: w[0], c: w[1] * mean + b });
        }
        if phi.ignores_input(0) {
            return Ok(Level::Constant(atoms.expect(|y| phi.forward(&[0.0, y]))));
        }
        Ok(Level::General { phi, atoms })
    }

    pub(crate) fn at(&self, x: f64) -> f64 {
        match self {
            Level::Affine { wx, c } => wx * x + c,
            Level::Constant(c) => *c,
            Level::General { phi, atoms } => atoms.expect(|y| phi.forward(&[x, y])),
        }
    }
}

/// The positive root of `h(t, x, z) = level`.
pub fn solve_level(h: &MonotoneNet, t: f64, x: f64, level: f64) -> Result<f64, VolError> {
    if h.mlp().is_none() {
        let z = level / h.slope_floor();
        if z > 0.0 {
            return Ok(z);
        }
        return Err(VolError::NoRootInBracket { lo: 0.0, hi: f64::INFINITY });
    }
    let mut f = |z: f64| {
        let (v, d) = h.value_and_dz(t, x, z);
        Ok((v - level, d))
    };
    match expand_bracket(&mut f, 0.5, 2.0, DEFAULT_MAX_EXPANSIONS)? {
        Some(b) => safeguarded_newton(&mut f, b, DEFAULT_TOL, 400),
        None => Err(VolError::NoRootInBracket {
            lo: 0.5 * 0.5f64.powi(DEFAULT_MAX_EXPANSIONS as i32),
            hi: 2.0 * 2f64.powi(DEFAULT_MAX_EXPANSIONS as i32),
        }),
    }
}

/// `nu(t, x, mu)` for every point in `xs`. Points are solved in parallel;
/// the reported failure is the one with the lowest index.
pub(crate) fn volatilities(d: &MeanFieldDriver, t: f64, xs: &[f64], mu: Atoms<'_>) -> Result<Vec<f64>, MeanFieldError> {
    let level = Level::new(d.interaction(), mu)?;
    let solve = |i: usize, x: f64| {
        solve_level(d.h(), t, x, level.at(x)).map_err(|source| MeanFieldError::Root { index: i, t, x, source })
    };
    if xs.len() < PARALLEL_MIN || matches!(level, Level::Affine { .. }) && d.h().mlp().is_none() {
        return xs.iter().enumerate().map(|(i, &x)| solve(i, x)).collect();
    }
    let out: Vec<Result<f64, MeanFieldError>> = xs.par_iter().enumerate().map(|(i, &x)| solve(i, x)).collect();
    out.into_iter().collect()
}

const PARALLEL_MIN: usize = 512;

/// `nu(t, x, mu)` at a single point.
pub fn meanfield_volatility(d: &MeanFieldDriver, t: f64, x: f64, sample: &[f64]) -> Result<f64, MeanFieldError> {
    Ok(volatilities(d, t, &[x], Atoms::uniform(sample))?[0])
}
