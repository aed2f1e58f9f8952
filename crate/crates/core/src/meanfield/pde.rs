//! Conservative finite-volume solver for `u_t = (nu(t, x, mu_t)^2 u / 2)_xx`
//! with zero flux at both ends.
//!
//! With `v_j = a_j u_j`, `a_j = nu_j^2 / 2`, and trapezoid control volumes
//! `w_j`, the semi-discrete scheme is
//! `w_j u_j' = (v_{j+1} - v_j) / dx - (v_j - v_{j-1}) / dx`, the end faces
//! carrying no flux. Every column of the implicit matrix sums to `w_j / dt`,
//! so the trapezoid mass is conserved to rounding and the matrix is an
//! M-matrix, so non-negativity is preserved. The coefficients `a_j` are
//! evaluated from the density at the start of each step.

use std::io::Write;

use super::density::DensityGrid;
use super::interaction::{volatilities, Atoms};
use super::MeanFieldError;
use crate::neural_driver::MeanFieldDriver;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeScheme {
    /// Backward Euler; unconditionally stable.
    Implicit,
    /// Forward Euler; refused when `nu^2 dt / dx^2 > 1/2`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Density(DensityGrid),
    /// Sorted sample standing in for the law.
    Quantiles(Vec<f64>),
}

impl Snapshot {
    pub fn mean(&self) -> f64 {
        match self {
            Snapshot::Density(d) => d.mean(),
            Snapshot::Quantiles(q) => q.iter().sum::<f64>() / q.len() as f64,
        }
    }

    /// `k` quantiles at levels `(i + 1/2) / k` (a density), or the stored
    /// sample itself.
    pub fn quantiles(&self, k: usize) -> Vec<f64> {
        match self {
            Snapshot::Density(d) => d.quantiles(k),
            Snapshot::Quantiles(q) => q.clone(),
        }
    }
}

/// A law per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    pub times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Negative mass removed by clipping, summed over steps.
    pub clip_mass: f64,
}

impl MeasureFlow {
    pub fn terminal(&self) -> &Snapshot {
        self.snapshots.last().expect("flow has at least the initial law")
    }

    /// CSV `t,x,u` for every density snapshot.
    pub fn write_density_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,u")?;
        for (t, s) in self.times.iter().zip(&self.snapshots) {
            if let Snapshot::Density(d) = s {
                for (j, u) in d.values().iter().enumerate() {
                    writeln!(w, "{t:.16e},{:.16e},{u:.16e}", d.node(j))?;
                }
            }
        }
        Ok(())
    }
}

fn interaction_weights(u: &DensityGrid) -> Vec<f64> {
    let m = u.mass();
    u.values().iter().enumerate().map(|(j, v)| u.weight(j) * v / m).collect()
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], step: usize) -> Result<(), MeanFieldError> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(MeanFieldError::Numerical(format!("zero pivot in tridiagonal solve at step {step}")));
    }
    rhs[0] /= beta;
    for j in 1..n {
        c[j - 1] = upper[j - 1] / beta;
        beta = diag[j] - lower[j] * c[j - 1];
        if beta == 0.0 {
            return Err(MeanFieldError::Numerical(format!("zero pivot in tridiagonal solve at step {step}")));
        }
        rhs[j] = (rhs[j] - lower[j] * rhs[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= c[j] * rhs[j + 1];
    }
    Ok(())
}

/// Solves the McKean-Vlasov equation on `u0`'s grid over `[0, t_end]` in
/// `n_t_steps` steps, recording the density at every step.
pub fn solve_mckean_vlasov_pde(
    d: &MeanFieldDriver,
    u0: &DensityGrid,
    t_end: f64,
    n_t_steps: usize,
    scheme: PdeScheme,
) -> Result<MeasureFlow, MeanFieldError> {
    if !(t_end > 0.0) || n_t_steps < 1 {
        return Err(MeanFieldError::Precondition("PDE needs T > 0 and n_t_steps >= 1".into()));
    }
    let n = u0.len();
    let dt = t_end / n_t_steps as f64;
    let dx = u0.dx();
    let nodes = u0.nodes();
    let w = u0.weights();
    let mut u = u0.clone();
    let mut times = vec![0.0];
    let mut snapshots = vec![Snapshot::Density(u.clone())];
    let mut clip_mass = 0.0;

    for step in 0..n_t_steps {
        let t = dt * step as f64;
        let iw = interaction_weights(&u);
        let nu = volatilities(d, t, &nodes, Atoms { points: &nodes, weights: Some(&iw) })?;
        let a: Vec<f64> = nu.iter().map(|v| 0.5 * v * v).collect();
        let vals = u.values().to_vec();
        let mut next = match scheme {
            PdeScheme::Explicit => {
                let nu_max = nu.iter().cloned().fold(0.0, f64::max);
                if nu_max * nu_max * dt / (dx * dx) > 0.5 {
                    return Err(MeanFieldError::Stability { dt, max_dt: 0.5 * dx * dx / (nu_max * nu_max) });
                }
                let v: Vec<f64> = vals.iter().zip(&a).map(|(u, a)| u * a).collect();
                (0..n)
                    .map(|j| {
                        let right = if j + 1 < n { (v[j + 1] - v[j]) / dx } else { 0.0 };
                        let left = if j > 0 { (v[j] - v[j - 1]) / dx } else { 0.0 };
                        vals[j] + dt / w[j] * (right - left)
                    })
                    .collect::<Vec<f64>>()
            }
            PdeScheme::Implicit => {
                let mut lower = vec![0.0; n];
                let mut diag = vec![0.0; n];
                let mut upper = vec![0.0; n];
                for j in 0..n {
                    diag[j] = w[j] / dt;
                    if j + 1 < n {
                        diag[j] += a[j] / dx;
                        upper[j] = -a[j + 1] / dx;
                    }
                    if j > 0 {
                        diag[j] += a[j] / dx;
                        lower[j] = -a[j - 1] / dx;
                    }
                }
                let mut rhs: Vec<f64> = vals.iter().zip(&w).map(|(u, w)| u * w / dt).collect();
                thomas(&lower, &diag, &upper, &mut rhs, step)?;
                rhs
            }
        };
        for v in next.iter_mut() {
            if *v < 0.0 {
                clip_mass += -*v * dx;
                *v = 0.0;
            }
        }
        u.values_mut().copy_from_slice(&next);
        times.push(if step + 1 == n_t_steps { t_end } else { dt * (step + 1) as f64 });
        snapshots.push(Snapshot::Density(u.clone()));
    }
    Ok(MeasureFlow { times, snapshots, clip_mass })
}
