//! Empirical drift and diffusion by binning increments on `(t, M)`.

use serde::Serialize;

use super::{PathBundle, SimError};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    /// Grid steps per time slab.
    pub slab_steps: usize,
    /// Equal-width state bins per slab over the central 99% of states.
    pub n_state_bins: usize,
    /// Bins with fewer increments are flagged as poorly populated.
    pub min_count: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec { slab_steps: 10, n_state_bins: 20, min_count: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoBin {
    pub t_lo: f64,
    pub t_hi: f64,
    pub m_lo: f64,
    pub m_hi: f64,
    pub count: usize,
    /// mean(dM) / dt
    pub drift: f64,
    pub drift_se: f64,
    /// sqrt(mean(dM^2) / dt)
    pub diffusion: f64,
    pub diffusion_se: f64,
    pub well_populated: bool,
}

impl ItoBin {
    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_lo + self.t_hi)
    }

    pub fn m_mid(&self) -> f64 {
        0.5 * (self.m_lo + self.m_hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoDecomposition {
    pub bins: Vec<ItoBin>,
}

impl ItoDecomposition {
    pub fn populated(&self) -> impl Iterator<Item = &ItoBin> {
        self.bins.iter().filter(|b| b.well_populated)
    }
}

/// Bins every increment `dM_k` by `(t_k, M_k)`. Weights on the bundle are
/// ignored; a bundle simulated under Q_alpha is read as it stands.
pub fn estimate_ito_decomposition(pb: &PathBundle, spec: &BinSpec) -> Result<ItoDecomposition, SimError> {
    if pb.n_paths() == 0 {
        return Err(SimError::Precondition("empty path bundle".into()));
    }
    if spec.slab_steps < 1 || spec.n_state_bins < 1 {
        return Err(SimError::Precondition("slab_steps and n_state_bins must be >= 1".into()));
    }
    let grid = pb.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut bins = Vec::new();
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + spec.slab_steps).min(n);
        let mut states: Vec<f64> = (k0..k1).flat_map(|k| pb.column(k)).collect();
        states.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&states, 0.005);
        let hi = quantile_sorted(&states, 0.995);
        let nb = spec.n_state_bins;
        let width = if hi > lo { (hi - lo) / nb as f64 } else { 1.0 };
        // per bin: count, sum dM, sum dM^2, sum dM^4
        let mut acc = vec![[0.0f64; 4]; nb];
        for i in 0..pb.n_paths() {
            for k in k0..k1 {
                let m = pb.value(i, k);
                if m < lo || m > hi {
                    continue;
                }
                let b = (((m - lo) / width) as usize).min(nb - 1);
                let dm = pb.value(i, k + 1) - m;
                let a = &mut acc[b];
                a[0] += 1.0;
                a[1] += dm;
                a[2] += dm * dm;
                a[3] += dm * dm * dm * dm;
            }
        }
        for (b, a) in acc.iter().enumerate() {
            let c = a[0];
            let (drift, drift_se, diffusion, diffusion_se) = if c >= 2.0 {
                let mean = a[1] / c;
                let var = (a[2] / c - mean * mean) * c / (c - 1.0);
                let q = a[2] / c;
                let q_var = (a[3] / c - q * q).max(0.0) * c / (c - 1.0);
                let diffusion = (q / dt).sqrt();
                // delta method for the square root
                let diffusion_se = if diffusion > 0.0 { (q_var / c).sqrt() / dt / (2.0 * diffusion) } else { f64::NAN };
                (mean / dt, (var.max(0.0) / c).sqrt() / dt, diffusion, diffusion_se)
            } else {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            };
            bins.push(ItoBin {
                t_lo: grid.time(k0),
                t_hi: grid.time(k1),
                m_lo: lo + width * b as f64,
                m_hi: lo + width * (b + 1) as f64,
                count: c as usize,
                drift,
                drift_se,
                diffusion,
                diffusion_se,
                well_populated: c as usize >= spec.min_count,
            });
        }
        k0 = k1;
    }
    Ok(ItoDecomposition { bins })
}
