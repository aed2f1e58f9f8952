//! Backward pricing PDE `C_t + r S C_S + (sigma S)^2 C_SS / 2 - r C = 0` on a
//! grid uniform in `ln S`.
//!
//! Derivatives are three-point differences in `S` on the non-uniform nodes,
//! which are exact on `1` and `S`, so cash and forward payoffs are priced
//! without spatial error. The drift switches to a one-sided difference at
//! nodes where the centred stencil would lose its sign (tiny `sigma`). Time
//! stepping is Crank-Nicolson after two backward-Euler half steps.

use std::io::Write;

use super::PricingError;

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const SIGMA_CAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Call {
        strike: f64,
    },
    Put {
        strike: f64,
    },
    /// `H = 1`
    Cash,
    /// `H = S`
    Asset,
}

impl Payoff {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Put { strike } => (strike - s).max(0.0),
            Payoff::Cash => 1.0,
            Payoff::Asset => s,
        }
    }

    pub fn strike(&self) -> Option<f64> {
        match *self {
            Payoff::Call { strike } | Payoff::Put { strike } => Some(strike),
            _ => None,
        }
    }

    /// Dirichlet values at time-to-maturity `tau`.
    fn boundary(&self, s: f64, tau: f64, r: f64) -> f64 {
        let df = (-r * tau).exp();
        match *self {
            Payoff::Call { strike } => (s - strike * df).max(0.0),
            Payoff::Put { strike } => (strike * df - s).max(0.0),
            Payoff::Cash => df,
            Payoff::Asset => s,
        }
    }
}

/// Grid layout: `n_s` nodes uniform in `ln S` over about `[s_min, s_max]`
/// (shifted by less than one cell so a strike lands on a node) and `n_t`
/// time steps over `[t0, maturity]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub s_min: f64,
    pub s_max: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub t0: f64,
    pub maturity: f64,
}

impl GridSpec {
    /// `[min(S0, K) / 8, 4 max(S0, K)]` on `n_s x n_t` nodes from `t0 = 0`.
    pub fn for_quote(s0: f64, strike: f64, maturity: f64, n_s: usize, n_t: usize) -> Self {
        GridSpec { s_min: s0.min(strike) / 8.0, s_max: 4.0 * s0.max(strike), n_s, n_t, t0: 0.0, maturity }
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        let mut problems = Vec::new();
        if !(self.s_min > 0.0 && self.s_max > self.s_min && self.s_max.is_finite()) {
            problems.push(format!("need 0 < s_min < s_max, got [{}, {}]", self.s_min, self.s_max));
        }
        if self.n_s < 5 {
            problems.push(format!("n_s must be >= 5, got {}", self.n_s));
        }
        if self.n_t < 2 {
            problems.push(format!("n_t must be >= 2, got {}", self.n_t));
        }
        if !(self.maturity > self.t0 && self.t0 >= 0.0 && self.maturity.is_finite()) {
            problems.push(format!("need 0 <= t0 < maturity, got {} and {}", self.t0, self.maturity));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PricingError::Precondition(problems.join("; ")))
        }
    }
}

/// Prices on every `(t, S)` node; `values[k]` is the slice at `t_nodes[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingGrid {
    pub t_nodes: Vec<f64>,
    pub s_nodes: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Node evaluations where `sigma` was clamped to `[SIGMA_FLOOR, SIGMA_CAP]`.
    pub sigma_clamped: usize,
}

impl PricingGrid {
    /// Cubic interpolation in `ln S` on the slice at `t_nodes[k]`.
    pub fn value_at(&self, k: usize, s: f64) -> Result<f64, PricingError> {
        let n = self.s_nodes.len();
        if !(s >= self.s_nodes[0] && s <= self.s_nodes[n - 1]) {
            return Err(PricingError::Domain(format!(
                "S = {s} outside the grid [{}, {}]",
                self.s_nodes[0],
                self.s_nodes[n - 1]
            )));
        }
        let x = s.ln();
        let x0 = self.s_nodes[0].ln();
        let dx = (self.s_nodes[n - 1].ln() - x0) / (n - 1) as f64;
        let pos = (x - x0) / dx;
        let nearest = pos.round();
        let row = &self.values[k];
        if (pos - nearest).abs() < 1e-9 {
            return Ok(row[nearest as usize]);
        }
        let j = (pos.floor() as usize).clamp(1, n - 3) - 1;
        let mut acc = 0.0;
        for a in 0..4 {
            let mut l = 1.0;
            for b in 0..4 {
                if a != b {
                    l *= (pos - (j + b) as f64) / ((j + a) as f64 - (j + b) as f64);
                }
            }
            acc += l * row[j + a];
        }
        Ok(acc)
    }

    /// Price at `t0`.
    pub fn spot_value(&self, s: f64) -> Result<f64, PricingError> {
        self.value_at(0, s)
    }

    /// CSV `t,S,C` over every node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,S,C")?;
        for (t, row) in self.t_nodes.iter().zip(&self.values) {
            for (s, c) in self.s_nodes.iter().zip(row) {
                writeln!(w, "{t:.16e},{s:.16e},{c:.16e}")?;
            }
        }
        Ok(())
    }
}

fn log_nodes(spec: &GridSpec, strike: Option<f64>) -> Vec<f64> {
    let (lo, hi) = (spec.s_min.ln(), spec.s_max.ln());
    let dx = (hi - lo) / (spec.n_s - 1) as f64;
    let shift = match strike {
        Some(k) if k > spec.s_min && k < spec.s_max => {
            let off = (k.ln() - lo) / dx;
            (off - off.round()) * dx
        }
        _ => 0.0,
    };
    let mut nodes: Vec<f64> = (0..spec.n_s).map(|j| (lo + shift + dx * j as f64).exp()).collect();
    if let Some(k) = strike {
        // land exactly on the strike despite rounding in exp/ln
        if let Some(j) = nodes.iter().position(|s| (s / k - 1.0).abs() < 1e-9) {
            nodes[j] = k;
        }
    }
    nodes
}

/// Interior operator rows `(lower, diag, upper)` for `L C = r S C_S +
/// sigma^2 S^2 C_SS / 2 - r C`.
fn operator(s: &[f64], sigma: &[f64], r: f64) -> Vec<(f64, f64, f64)> {
    let n = s.len();
    let mut rows = vec![(0.0, 0.0, 0.0); n];
    for j in 1..n - 1 {
        let (hm, hp) = (s[j] - s[j - 1], s[j + 1] - s[j]);
        let diff = sigma[j] * sigma[j] * s[j] * s[j];
        let dl = diff / (hm * (hm + hp));
        let du = diff / (hp * (hm + hp));
        let drift = r * s[j];
        let (cl, cu) = (-drift * hp / (hm * (hm + hp)), drift * hm / (hp * (hm + hp)));
        let (mut l, mut u) = (dl + cl, du + cu);
        let mut d = -(dl + du) - cl - cu;
        if l < 0.0 || u < 0.0 {
            // one-sided drift in the upwind direction
            l = dl;
            u = du;
            d = -(dl + du);
            if drift >= 0.0 {
                u += drift / hp;
                d -= drift / hp;
            } else {
                l -= drift / hm;
                d += drift / hm;
            }
        }
        rows[j] = (l, d - r, u);
    }
    rows
}

fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], rhs: &mut [f64], step: usize) -> Result<(), PricingError> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut beta = b[0];
    for j in 0..n {
        if j > 0 {
            beta = b[j] - a[j] * cp[j - 1];
        }
        if beta == 0.0 || !beta.is_finite() {
            return Err(PricingError::Numerical { step, message: "singular tridiagonal system".into() });
        }
        if j + 1 < n {
            cp[j] = c[j] / beta;
        }
        rhs[j] = (rhs[j] - if j > 0 { a[j] * rhs[j - 1] } else { 0.0 }) / beta;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= cp[j] * rhs[j + 1];
    }
    Ok(())
}

/// One `theta`-step from `u` at `t + dt` to time `t`; `rows_new` are the
/// operator rows at `t`, `rows_old` at `t + dt`.
#[allow(clippy::too_many_arguments)]
fn theta_step(
    u: &[f64],
    rows_old: &[(f64, f64, f64)],
    rows_new: &[(f64, f64, f64)],
    dt: f64,
    theta: f64,
    bc: (f64, f64),
    step: usize,
) -> Result<Vec<f64>, PricingError> {
    let n = u.len();
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![1.0; n], vec![0.0; n]);
    let mut rhs = vec![0.0; n];
    rhs[0] = bc.0;
    rhs[n - 1] = bc.1;
    for j in 1..n - 1 {
        let (lo, d, up) = rows_old[j];
        rhs[j] = u[j] + (1.0 - theta) * dt * (lo * u[j - 1] + d * u[j] + up * u[j + 1]);
        let (lo, d, up) = rows_new[j];
        a[j] = -theta * dt * lo;
        b[j] = 1.0 - theta * dt * d;
        c[j] = -theta * dt * up;
    }
    solve_tridiagonal(&a, &b, &c, &mut rhs, step)?;
    Ok(rhs)
}

/// Solves backward from `payoff` at `spec.maturity` to `spec.t0` with local
/// volatility `sigma(t, S)`, clamped to `[SIGMA_FLOOR, SIGMA_CAP]`.
pub fn solve_pricing_pde_with<F>(sigma: F, payoff: Payoff, r: f64, spec: &GridSpec) -> Result<PricingGrid, PricingError>
where
    F: Fn(f64, f64) -> Result<f64, PricingError>,
{
    spec.validate()?;
    if !r.is_finite() {
        return Err(PricingError::Precondition(format!("r must be finite, got {r}")));
    }
    if let Some(k) = payoff.strike() {
        if !(k > spec.s_min && 4.0 * k <= spec.s_max * (1.0 + 1e-12)) {
            return Err(PricingError::Precondition(format!(
                "strike {k} must lie in the grid with s_max >= 4 K (s_max = {})",
                spec.s_max
            )));
        }
    }
    let s = log_nodes(spec, payoff.strike());
    let n = s.len();
    let dt = (spec.maturity - spec.t0) / spec.n_t as f64;
    let t_nodes: Vec<f64> =
        (0..=spec.n_t).map(|k| if k == spec.n_t { spec.maturity } else { spec.t0 + dt * k as f64 }).collect();
    let mut clamped = 0usize;
    let mut sigma_at = |t: f64| -> Result<Vec<f64>, PricingError> {
        s.iter()
            .map(|&x| {
                let v = sigma(t, x)?;
                if !v.is_finite() {
                    return Err(PricingError::Domain(format!("sigma({t}, {x}) is not finite")));
                }
                if !(SIGMA_FLOOR..=SIGMA_CAP).contains(&v) {
                    clamped += 1;
                }
                Ok(v.clamp(SIGMA_FLOOR, SIGMA_CAP))
            })
            .collect()
    };
    let bc = |t: f64| {
        let tau = spec.maturity - t;
        (payoff.boundary(s[0], tau, r), payoff.boundary(s[n - 1], tau, r))
    };

    let mut values = vec![Vec::new(); spec.n_t + 1];
    values[spec.n_t] = s.iter().map(|&x| payoff.value(x)).collect();
    let mut rows_old = operator(&s, &sigma_at(spec.maturity)?, r);
    for k in (0..spec.n_t).rev() {
        let t = t_nodes[k];
        let rows_new = operator(&s, &sigma_at(t)?, r);
        let u = &values[k + 1];
        let next = if k + 1 == spec.n_t {
            let t_half = 0.5 * (t + t_nodes[k + 1]);
            let rows_half = operator(&s, &sigma_at(t_half)?, r);
            let half = theta_step(u, &rows_half, &rows_half, 0.5 * dt, 1.0, bc(t_half), k)?;
            theta_step(&half, &rows_new, &rows_new, 0.5 * dt, 1.0, bc(t), k)?
        } else {
            theta_step(u, &rows_old, &rows_new, dt, 0.5, bc(t), k)?
        };
        values[k] = next;
        rows_old = rows_new;
    }
    Ok(PricingGrid { t_nodes, s_nodes: s, values, sigma_clamped: clamped })
}
