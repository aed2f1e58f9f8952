//! Weighted least-squares fit of driver parameters to option quotes.
//!
//! The search runs over the driver's unconstrained parameter vector, so every
//! trial point is a valid driver. Trials whose pricing fails get
//! [`PENALTY_LOSS`] instead of aborting the search.

use serde::{Deserialize, Serialize};

use super::quotes::{price_quotes, MarketQuote, QuoteGrid};
use super::PricingError;
use crate::implicit_volatility::VolatilityField;
use crate::neural_driver::SpecializedDriver;

pub const PENALTY_LOSS: f64 = 1e10;
/// Above this many free parameters the optimiser switches from Nelder-Mead
/// to finite-difference gradient descent.
pub const NELDER_MEAD_MAX_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Maximum optimiser iterations.
    pub budget: usize,
    /// Indices into the parameter vector that may move; all when `None`.
    pub free: Option<Vec<usize>>,
    /// Initial simplex edge (Nelder-Mead) or step size (gradient descent).
    pub step: f64,
    /// Stop once the loss spread over the simplex (or the last decrease)
    /// falls below this.
    pub ftol: f64,
    pub grid: QuoteGrid,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { budget: 200, free: None, step: 0.1, ftol: 1e-16, grid: QuoteGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub driver: SpecializedDriver,
    pub loss: f64,
    /// Model minus market, per quote.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    /// Best loss after each iteration.
    pub loss_history: Vec<f64>,
}

/// `(loss, residuals)` for `driver`.
pub fn calibration_loss(
    driver: &SpecializedDriver,
    quotes: &[MarketQuote],
    s0: f64,
    r: f64,
    grid: QuoteGrid,
) -> Result<(f64, Vec<f64>), PricingError> {
    let vf = VolatilityField::new(driver.clone())?;
    let prices = price_quotes(&vf, quotes, s0, r, grid)?;
    let residuals: Vec<f64> = prices.iter().zip(quotes).map(|(p, q)| p - q.price).collect();
    let loss = residuals.iter().zip(quotes).map(|(e, q)| q.weight * e * e).sum();
    Ok((loss, residuals))
}

struct Objective<'a> {
    init: &'a SpecializedDriver,
    base: Vec<f64>,
    free: Vec<usize>,
    quotes: &'a [MarketQuote],
    s0: f64,
    r: f64,
    grid: QuoteGrid,
    evaluations: usize,
}

impl Objective<'_> {
    fn theta(&self, x: &[f64]) -> Vec<f64> {
        let mut theta = self.base.clone();
        for (&i, &v) in self.free.iter().zip(x) {
            theta[i] = v;
        }
        theta
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let loss = self
            .init
            .with_param_vector(&self.theta(x))
            .map_err(PricingError::from)
            .and_then(|d| calibration_loss(&d, self.quotes, self.s0, self.r, self.grid))
            .map(|(l, _)| l);
        match loss {
            Ok(l) if l.is_finite() => l,
            _ => PENALTY_LOSS,
        }
    }
}

/// Fits `init`'s parameters to `quotes`. Returns the best point found; the
/// loss and residuals are recomputed from the returned driver.
pub fn calibrate(
    quotes: &[MarketQuote],
    s0: f64,
    r: f64,
    init: &SpecializedDriver,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult, PricingError> {
    if cfg.budget < 1 {
        return Err(PricingError::Precondition("calibration budget must be >= 1".into()));
    }
    if !(cfg.step > 0.0) {
        return Err(PricingError::Precondition("calibration step must be > 0".into()));
    }
    if quotes.is_empty() {
        return Err(PricingError::Precondition("no quotes to calibrate to".into()));
    }
    let problems: Vec<String> = quotes
        .iter()
        .enumerate()
        .filter_map(|(i, q)| q.validate(s0, r).err().map(|e| format!("quote {i}: {e}")))
        .collect();
    if !problems.is_empty() {
        return Err(PricingError::Precondition(problems.join("; ")));
    }
    let base = init.param_vector();
    let free = match &cfg.free {
        Some(f) => {
            if f.is_empty() || f.iter().any(|&i| i >= base.len()) {
                return Err(PricingError::Precondition(format!(
                    "free indices must be non-empty and below {}",
                    base.len()
                )));
            }
            f.clone()
        }
        None => (0..base.len()).collect(),
    };

    if quotes.iter().all(|q| q.weight == 0.0) {
        let (_, residuals) = calibration_loss(init, quotes, s0, r, cfg.grid)?;
        return Ok(CalibrationResult {
            driver: init.clone(),
            loss: 0.0,
            residuals,
            iterations: 0,
            evaluations: 1,
            budget_exhausted: false,
            loss_history: Vec::new(),
        });
    }

    let x0: Vec<f64> = free.iter().map(|&i| base[i]).collect();
    let mut obj = Objective { init, base, free, quotes, s0, r, grid: cfg.grid, evaluations: 0 };
    let run = if x0.len() <= NELDER_MEAD_MAX_DIM {
        nelder_mead(&mut obj, &x0, cfg)
    } else {
        gradient_descent(&mut obj, &x0, cfg)
    };
    let driver = init.with_param_vector(&obj.theta(&run.x))?;
    let (loss, residuals) = calibration_loss(&driver, quotes, s0, r, cfg.grid)?;
    Ok(CalibrationResult {
        driver,
        loss,
        residuals,
        iterations: run.iterations,
        evaluations: obj.evaluations + 1,
        budget_exhausted: !run.converged,
        loss_history: run.history,
    })
}

struct Run {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn nelder_mead(obj: &mut Objective<'_>, x0: &[f64], cfg: &CalibrationConfig) -> Run {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), obj.eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += cfg.step;
        let f = obj.eval(&x);
        simplex.push((x, f));
    }
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    while iterations < cfg.budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[n].1 - simplex[0].1 <= cfg.ftol || simplex[0].1 <= cfg.ftol {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> =
            (0..n).map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = obj.eval(&xr);
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &worst.0, -2.0);
            let fe = obj.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = lerp(&centroid, &worst.0, -0.5);
                let fc = obj.eval(&xc);
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &worst.0, 0.5);
                let fc = obj.eval(&xc);
                (xc, fc)
            };
            if fc < fr.min(worst.1) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x = lerp(&best, &v.0, 0.5);
                    let f = obj.eval(&x);
                    *v = (x, f);
                }
            }
        }
        history.push(simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min));
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Run { x: simplex.swap_remove(0).0, iterations, converged, history }
}

fn gradient_descent(obj: &mut Objective<'_>, x0: &[f64], cfg: &CalibrationConfig) -> Run {
    let mut x = x0.to_vec();
    let mut f = obj.eval(&x);
    let mut step = cfg.step;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.budget {
        if f <= cfg.ftol {
            converged = true;
            break;
        }
        iterations += 1;
        let h = 1e-6;
        let grad: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (obj.eval(&xp) - obj.eval(&xm)) / (2.0 * h)
            })
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            converged = true;
            break;
        }
        // backtracking on a normalised step
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(x, g)| x - step * g / norm).collect();
            let ft = obj.eval(&trial);
            if ft < f {
                let gain = f - ft;
                x = trial;
                f = ft;
                step *= 1.5;
                accepted = true;
                if gain <= cfg.ftol {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        history.push(f);
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    Run { x, iterations, converged, history }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::quotes::OptionType;

    fn quotes_for(driver: &SpecializedDriver, grid: QuoteGrid) -> Vec<MarketQuote> {
        let mut q: Vec<MarketQuote> = [(90.0, 0.5), (100.0, 1.0), (110.0, 1.0)]
            .iter()
            .map(|&(k, t)| MarketQuote {
                option_type: OptionType::Call,
                strike: k,
                maturity: t,
                price: 1.0,
                weight: 1.0,
            })
            .collect();
        let vf = VolatilityField::new(driver.clone()).unwrap();
        let p = price_quotes(&vf, &q, 100.0, 0.02, grid).unwrap();
        for (q, p) in q.iter_mut().zip(p) {
            q.price = p;
        }
        q
    }

    #[test]
    fn zero_weights_return_init() {
        let d = SpecializedDriver::quadratic(1.0, 200.0).unwrap();
        let grid = QuoteGrid { n_s: 60, n_t: 20 };
        let mut q = quotes_for(&d, grid);
        q.iter_mut().for_each(|q| q.weight = 0.0);
        let init = SpecializedDriver::quadratic(1.0, 150.0).unwrap();
        let res = calibrate(&q, 100.0, 0.02, &init, &CalibrationConfig { grid, ..Default::default() }).unwrap();
        assert_eq!(res.loss, 0.0);
        assert_eq!(res.driver, init);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn history_is_non_increasing_and_loss_is_reproducible() {
        let d = SpecializedDriver::quadratic(1.0, 200.0).unwrap();
        let grid = QuoteGrid { n_s: 60, n_t: 20 };
        let q = quotes_for(&d, grid);
        let init = SpecializedDriver::quadratic(1.0, 120.0).unwrap();
        let cfg = CalibrationConfig { budget: 15, grid, ..Default::default() };
        let res = calibrate(&q, 100.0, 0.02, &init, &cfg).unwrap();
        assert!(res.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let (again, _) = calibration_loss(&res.driver, &q, 100.0, 0.02, grid).unwrap();
        assert_eq!(again, res.loss);
        assert!(res.budget_exhausted);
        assert_eq!(res.iterations, 15);
    }

    #[test]
    fn free_indices_are_checked() {
        let d = SpecializedDriver::quadratic(1.0, 200.0).unwrap();
        let grid = QuoteGrid { n_s: 60, n_t: 20 };
        let q = quotes_for(&d, grid);
        let cfg = CalibrationConfig { free: Some(vec![2]), grid, ..Default::default() };
        assert!(calibrate(&q, 100.0, 0.02, &d, &cfg).is_err());
    }
}
