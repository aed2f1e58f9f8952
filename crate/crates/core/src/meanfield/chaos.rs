//! Propagation-of-chaos experiment: coupling error and W2 distance to the
//! limit law as functions of the ensemble size.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interaction::{volatilities, Atoms};
use super::particles::{particle_increments, particle_proxy_flow, step_interacting, InitialLaw, ParticleEnsemble};
use super::pde::{solve_mckean_vlasov_pde, MeasureFlow, PdeScheme};
use super::wasserstein::w2_sorted;
use super::MeanFieldError;
use crate::neural_driver::MeanFieldDriver;
use crate::rng::{derive_seed, stream_rng};
use crate::stats::linear_fit;

/// Where the ideal particles read their law from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceFlow {
    /// Implicit PDE on `n_x` nodes over mean +- `sd_multiple` terminal
    /// standard deviations, with `refine` PDE steps per particle step.
    Pde { n_x: usize, sd_multiple: f64, refine: usize },
    /// One large self-consistent particle system.
    Particles { n: usize },
}

impl Default for ReferenceFlow {
    fn default() -> Self {
        ReferenceFlow::Pde { n_x: 801, sd_multiple: 8.0, refine: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosConfig {
    pub t_end: f64,
    pub n_steps: usize,
    pub n_list: Vec<usize>,
    pub n_replicas: usize,
    pub seed: u64,
    pub reference: ReferenceFlow,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig {
            t_end: 1.0,
            n_steps: 100,
            n_list: vec![64, 256, 1024, 4096],
            n_replicas: 10,
            seed: 0,
            reference: ReferenceFlow::default(),
        }
    }
}

impl ChaosConfig {
    pub fn validate(&self) -> Result<(), MeanFieldError> {
        let mut problems = Vec::new();
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            problems.push(format!("T must be finite and > 0, got {}", self.t_end));
        }
        if self.n_steps < 1 {
            problems.push("n_steps must be >= 1".to_string());
        }
        if self.n_replicas < 1 {
            problems.push("n_replicas must be >= 1".to_string());
        }
        let l = &self.n_list;
        if l.len() < 3 {
            problems.push(format!("N_list needs at least 3 entries, got {}", l.len()));
        }
        if l.windows(2).any(|w| w[1] <= w[0]) || l.first() == Some(&0) {
            problems.push("N_list must be strictly ascending and positive".to_string());
        }
        if let (Some(&a), Some(&b)) = (l.first(), l.last()) {
            if a > 0 && (b as f64) < 10.0 * a as f64 {
                problems.push(format!("N_list must span at least one decade, got {a}..{b}"));
            }
        }
        match self.reference {
            ReferenceFlow::Pde { n_x, sd_multiple, refine } => {
                if n_x < 3 || !(sd_multiple > 0.0) || refine < 1 {
                    problems.push("PDE reference needs n_x >= 3, sd_multiple > 0, refine >= 1".to_string());
                }
            }
            ReferenceFlow::Particles { n } => {
                if n < 2 {
                    problems.push("particle reference needs n >= 2".to_string());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MeanFieldError::Precondition(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub replica: usize,
    #[serde(rename = "E_N")]
    pub e_n: f64,
    pub w2_emp_vs_limit: f64,
    pub w2_ideal_vs_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosSummary {
    pub n_list: Vec<usize>,
    /// Replica-averaged `E_N(T)` per `N`.
    pub mean_e_n: Vec<f64>,
    /// Replica-averaged `W2(ideal empirical, limit)^2` per `N`.
    pub mean_w2_ideal_sq: Vec<f64>,
    /// Log-log slope of `mean_e_n` against `N`.
    pub slope: f64,
    pub w2_ideal_slope: f64,
    /// Number of `N` steps where the averaged `E_N` went up.
    pub inversions: usize,
    pub rows: Vec<ChaosRow>,
    pub reference_clip_mass: f64,
}

impl ChaosSummary {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "N,replica,E_N,W2_emp_vs_limit")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:.16e},{:.16e}", r.n, r.replica, r.e_n, r.w2_emp_vs_limit)?;
        }
        Ok(())
    }
}

/// Builds the reference flow on the particle time grid.
pub fn reference_flow(d: &MeanFieldDriver, mu0: &InitialLaw, cfg: &ChaosConfig) -> Result<MeasureFlow, MeanFieldError> {
    match cfg.reference {
        ReferenceFlow::Pde { n_x, sd_multiple, refine } => {
            let (lo, hi) = pde_domain(d, mu0, cfg.t_end, sd_multiple)?;
            let u0 = mu0.density(lo, hi, n_x)?;
            let flow = solve_mckean_vlasov_pde(d, &u0, cfg.t_end, cfg.n_steps * refine, PdeScheme::Implicit)?;
            Ok(MeasureFlow {
                times: flow.times.iter().step_by(refine).cloned().collect(),
                snapshots: flow.snapshots.into_iter().step_by(refine).collect(),
                clip_mass: flow.clip_mass,
            })
        }
        ReferenceFlow::Particles { n } => {
            particle_proxy_flow(d, mu0, cfg.t_end, cfg.n_steps, n, derive_seed(cfg.seed, "reference", 0))
        }
    }
}

/// `mean +- k sd` of the terminal law, with the terminal spread estimated
/// from the largest initial volatility over `mean +- 4 sd0`.
pub fn pde_domain(d: &MeanFieldDriver, mu0: &InitialLaw, t_end: f64, k: f64) -> Result<(f64, f64), MeanFieldError> {
    mu0.validate()?;
    let (m, s0) = (mu0.mean(), mu0.sd());
    let probe = mu0.density(m - 8.0 * s0, m + 8.0 * s0, 401)?;
    let xs: Vec<f64> = (0..=16).map(|i| m + s0 * (i as f64 / 2.0 - 4.0)).collect();
    let w: Vec<f64> = {
        let mass = probe.mass();
        probe.values().iter().enumerate().map(|(j, v)| probe.weight(j) * v / mass).collect()
    };
    let nodes = probe.nodes();
    let nu = volatilities(d, 0.0, &xs, Atoms { points: &nodes, weights: Some(&w) })?;
    let nu_max = nu.iter().cloned().fold(0.0, f64::max);
    let sd_t = (s0 * s0 + nu_max * nu_max * t_end).sqrt();
    Ok((m - k * sd_t, m + k * sd_t))
}

fn run_replica(
    d: &MeanFieldDriver,
    mu0: &InitialLaw,
    cfg: &ChaosConfig,
    flow: &MeasureFlow,
    n: usize,
    replica: usize,
) -> Result<ChaosRow, MeanFieldError> {
    let seed = derive_seed(derive_seed(cfg.seed, "chaos", n as u64), "replica", replica as u64);
    let dt = cfg.t_end / cfg.n_steps as f64;
    let x0 = mu0.sample(n, &mut stream_rng(seed, u64::MAX));
    let mut ens = ParticleEnsemble::new(x0, seed)?;
    for k in 0..cfg.n_steps {
        let dw = particle_increments(seed, k, n, dt);
        ens = step_interacting(&ens, d, dt, &dw, &flow.snapshots[k])?;
    }
    let limit = flow.terminal().quantiles(n);
    Ok(ChaosRow {
        n,
        replica,
        e_n: ens.coupling_error(),
        w2_emp_vs_limit: w2_sorted(&ens.sorted_states(), &limit),
        w2_ideal_vs_limit: w2_sorted(&ens.sorted_ideal_states(), &limit),
    })
}

/// Runs every `(N, replica)` pair in parallel against a shared reference
/// flow and fits the decay rates.
pub fn run_chaos_experiment(
    d: &MeanFieldDriver,
    mu0: &InitialLaw,
    cfg: &ChaosConfig,
) -> Result<ChaosSummary, MeanFieldError> {
    cfg.validate()?;
    mu0.validate()?;
    let flow = reference_flow(d, mu0, cfg)?;
    let jobs: Vec<(usize, usize)> = cfg.n_list.iter().flat_map(|&n| (0..cfg.n_replicas).map(move |r| (n, r))).collect();
    let results: Vec<Result<ChaosRow, MeanFieldError>> =
        jobs.par_iter().map(|&(n, r)| run_replica(d, mu0, cfg, &flow, n, r)).collect();
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let reps = cfg.n_replicas as f64;
    let per_n = |f: &dyn Fn(&ChaosRow) -> f64| -> Vec<f64> {
        cfg.n_list.iter().map(|&n| rows.iter().filter(|r| r.n == n).map(f).sum::<f64>() / reps).collect()
    };
    let mean_e_n = per_n(&|r| r.e_n);
    let mean_w2_ideal_sq = per_n(&|r| r.w2_ideal_vs_limit * r.w2_ideal_vs_limit);
    let log_n: Vec<f64> = cfg.n_list.iter().map(|&n| (n as f64).ln()).collect();
    let log_fit = |ys: &[f64]| {
        if ys.iter().all(|&y| y > 0.0) {
            linear_fit(&log_n, &ys.iter().map(|y| y.ln()).collect::<Vec<_>>()).0
        } else {
            f64::NAN
        }
    };
    Ok(ChaosSummary {
        n_list: cfg.n_list.clone(),
        slope: log_fit(&mean_e_n),
        w2_ideal_slope: log_fit(&mean_w2_ideal_sq),
        inversions: mean_e_n.windows(2).filter(|w| w[1] > w[0]).count(),
        mean_e_n,
        mean_w2_ideal_sq,
        rows,
        reference_clip_mass: flow.clip_mass,
    })
}
