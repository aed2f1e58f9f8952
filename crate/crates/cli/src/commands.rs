use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use nbm_core::bsde_solver::{default_checkpoints, verify_nbm_martingale, BsdeConfig, Offset};
use nbm_core::implicit_volatility::{select_volatility, RootSet, ScanConfig, VolatilityField};
use nbm_core::meanfield::{
    pde_domain, run_chaos_experiment, solve_mckean_vlasov_pde, ChaosConfig, InitialLaw, MeasureFlow, PdeScheme,
    ReferenceFlow, Snapshot,
};
use nbm_core::neural_driver::{
    driver_to_json, fit_driver_to_target, load_driver, MeanFieldDriver, SpecializedDriver, TrainingConfig, TrainingGrid,
};
use nbm_core::pricing::{
    calibrate, call_crossings, price_quotes, read_quotes, solve_pricing_pde, write_quotes, CalibrationConfig,
    CalibrationReport, GridSpec, MarketQuote, Payoff, QuoteGrid,
};
use nbm_core::rng::derive_seed;
use nbm_core::sde_engine::{
    estimate_ito_decomposition, simulate_from, simulate_girsanov, simulate_girsanov_by_reweighting, BinSpec,
    PathSummary, TimeGrid,
};

use crate::config::*;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration ({} problem(s))", .0.len())]
    Config(Vec<String>),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io { .. } => "io",
        }
    }
}

/// Formats `e` with its whole source chain.
fn chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        let part = s.to_string();
        if !msg.contains(&part) {
            msg.push_str(": ");
            msg.push_str(&part);
        }
        src = s.source();
    }
    msg
}

fn numerical<E: std::error::Error>(e: E) -> CliError {
    CliError::Numerical(chain(&e))
}

/// Output directory plus the list of files written so far.
pub struct Artifacts {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(Artifacts { dir, written: Vec::new() })
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let path = self.dir.join(name);
        let io = |source| CliError::Io { path: path.clone(), source };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        f(&mut w)?;
        w.flush().map_err(io)?;
        self.written.push(path);
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        self.write_with(name, |w| {
            w.write_all(text.as_bytes()).map_err(|source| CliError::Io { path: path.clone(), source })
        })
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(numerical)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    fn io_err(&self, name: &str) -> impl Fn(std::io::Error) -> CliError {
        let path = self.dir.join(name);
        move |source| CliError::Io { path: path.clone(), source }
    }
}

/// Reads the config file, checks `command`, merges flags, and returns the
/// config with its output directory. Unknown keys are problems.
fn resolve<C: Serialize>(
    command: &str,
    common: &Common,
    problems: &mut Problems,
    merge: impl FnOnce(&mut Map<String, Value>, &mut Problems) -> C,
) -> (C, PathBuf) {
    let mut obj = load_object(common.config.as_deref(), problems);
    if let Some(c) = take::<String>(&mut obj, "command", problems) {
        problems.check(c == command, || format!("config is for command `{c}`, not `{command}`"));
    }
    let out_json = take::<PathBuf>(&mut obj, "output_dir", problems);
    let cfg = merge(&mut obj, problems);
    reject_unknown(&obj, problems);
    let out = common.out.clone().or(out_json).unwrap_or_else(|| PathBuf::from("out"));
    (cfg, out)
}

fn load(path: &Path, problems: &mut Problems) -> Option<SpecializedDriver> {
    problems.file("driver_file", path);
    if !path.is_file() {
        return None;
    }
    match load_driver(path) {
        Ok(d) => Some(d),
        Err(e) => {
            problems.push(format!("driver_file: {}", chain(&e)));
            None
        }
    }
}

fn load_quotes(path: &Path, problems: &mut Problems) -> Option<Vec<MarketQuote>> {
    problems.file("quotes_file", path);
    let f = File::open(path).ok()?;
    match read_quotes(f) {
        Ok(q) => Some(q),
        Err(e) => {
            problems.push(format!("quotes_file: {}", chain(&e)));
            None
        }
    }
}

fn mean_field(d: Option<SpecializedDriver>, problems: &mut Problems) -> Option<MeanFieldDriver> {
    match d? {
        SpecializedDriver::MeanField(m) => Some(m),
        other => {
            problems.push(format!("driver_file: expected a mean_field driver, got {:?}", other.kind()));
            None
        }
    }
}

fn time_grid(t0: f64, t_end: f64, n_steps: usize, problems: &mut Problems) -> Option<TimeGrid> {
    TimeGrid::new(t0, t_end, n_steps).map_err(|e| problems.push(chain(&e))).ok()
}

fn initial_law(law: LawKind, mean: f64, sd: f64, lo: f64, hi: f64, problems: &mut Problems) -> InitialLaw {
    let l = match law {
        LawKind::Gaussian => InitialLaw::Gaussian { mean, sd },
        LawKind::Uniform => InitialLaw::Uniform { lo, hi },
    };
    if let Err(e) = l.validate() {
        problems.push(chain(&e));
    }
    l
}

fn finish(problems: Problems) -> Result<(), CliError> {
    if problems.0.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(problems.0))
    }
}

/// The resolved config, without the output directory, as `config.json`.
fn echo<C: Serialize>(art: &mut Artifacts, command: &str, cfg: &C) -> Result<(), CliError> {
    let mut v = serde_json::to_value(cfg).map_err(numerical)?;
    if let Value::Object(m) = &mut v {
        m.insert("command".into(), Value::String(command.into()));
    }
    art.write_json("config.json", &v)
}

pub fn simulate(common: &Common, args: &SimulateArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("simulate", common, &mut p, |o, p| SimulateConfig::merge(o, args, p));
    let d = load(&cfg.driver_file, &mut p);
    let grid = time_grid(cfg.t0, cfg.t_end, cfg.n_steps, &mut p);
    p.at_least("n_paths", cfg.n_paths, 1);
    p.finite("m0", cfg.m0);
    finish(p)?;
    let (d, grid) = (d.unwrap(), grid.unwrap());

    let vf = VolatilityField::new(d).map_err(numerical)?;
    let pb = simulate_from(&vf, grid, cfg.n_paths, cfg.seed, cfg.m0).map_err(numerical)?;
    let bins = BinSpec { slab_steps: cfg.slab_steps, n_state_bins: cfg.n_state_bins, min_count: cfg.min_count };
    let ito = estimate_ito_decomposition(&pb, &bins).map_err(numerical)?;
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "simulate", &cfg)?;
    if cfg.write_paths {
        let e = art.io_err("paths.csv");
        art.write_with("paths.csv", |w| pb.write_csv(w).map_err(e))?;
    }
    art.write_json("summary.json", &PathSummary::new(&pb, &ito))?;
    Ok(art)
}

#[derive(Serialize)]
struct GirsanovReport {
    alpha: f64,
    nu: f64,
    /// `alpha nu^2 (T - t0)`
    #[serde(rename = "target_mean_T")]
    target_mean_t: f64,
    direct: PathSummary,
    reweighted: PathSummary,
}

pub fn girsanov(common: &Common, args: &GirsanovArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("girsanov", common, &mut p, |o, p| GirsanovConfig::merge(o, args, p));
    let q = match load(&cfg.driver_file, &mut p) {
        Some(SpecializedDriver::QuadraticConstant(q)) => Some(q),
        Some(other) => {
            p.push(format!("driver_file: Girsanov needs a quadratic_constant driver, got {:?}", other.kind()));
            None
        }
        None => None,
    };
    let grid = time_grid(0.0, cfg.t_end, cfg.n_steps, &mut p);
    p.at_least("n_paths", cfg.n_paths, 1);
    finish(p)?;
    let (q, grid) = (q.unwrap(), grid.unwrap());

    let vf = VolatilityField::new(SpecializedDriver::QuadraticConstant(q)).map_err(numerical)?;
    let bins = BinSpec { slab_steps: cfg.slab_steps, n_state_bins: cfg.n_state_bins, min_count: cfg.min_count };
    let direct = simulate_girsanov(&vf, grid, cfg.n_paths, derive_seed(cfg.seed, "girsanov", 0)).map_err(numerical)?;
    let weighted = simulate_girsanov_by_reweighting(&vf, grid, cfg.n_paths, derive_seed(cfg.seed, "reweighting", 0))
        .map_err(numerical)?;
    let ito_d = estimate_ito_decomposition(&direct, &bins).map_err(numerical)?;
    let ito_w = estimate_ito_decomposition(&weighted, &bins).map_err(numerical)?;
    let nu = q.volatility();
    let report = GirsanovReport {
        alpha: q.alpha(),
        nu,
        target_mean_t: q.alpha() * nu * nu * grid.horizon(),
        direct: PathSummary::new(&direct, &ito_d),
        reweighted: PathSummary::new(&weighted, &ito_w),
    };
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "girsanov", &cfg)?;
    if cfg.write_paths {
        let e = art.io_err("paths_q.csv");
        art.write_with("paths_q.csv", |w| direct.write_csv(w).map_err(e))?;
    }
    art.write_json("girsanov.json", &report)?;
    Ok(art)
}

pub fn verify_martingale(common: &Common, args: &MartingaleArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("verify-martingale", common, &mut p, |o, p| MartingaleConfig::merge(o, args, p));
    let d = load(&cfg.driver_file, &mut p);
    let grid = time_grid(0.0, cfg.t_end, cfg.n_steps, &mut p);
    p.at_least("n_paths", cfg.n_paths, 1);
    p.finite("offset", cfg.offset);
    p.check(cfg.checkpoints.iter().all(|s| (0.0..=cfg.t_end).contains(s)), || {
        format!("checkpoints must lie in [0, {}], got {:?}", cfg.t_end, cfg.checkpoints.0)
    });
    finish(p)?;
    let (d, grid) = (d.unwrap(), grid.unwrap());

    let checkpoints = if cfg.checkpoints.is_empty() { default_checkpoints(&grid) } else { cfg.checkpoints.0.clone() };
    let bsde = BsdeConfig {
        basis_degree: cfg.basis_degree,
        picard_iterations: cfg.picard_iterations,
        max_condition: cfg.max_condition,
    };
    let vf = VolatilityField::new(d.clone()).map_err(numerical)?;
    let perturbed = Offset { inner: &d, offset: cfg.offset };
    let report =
        verify_nbm_martingale(&vf, &perturbed, grid, cfg.n_paths, cfg.seed, &checkpoints, &bsde).map_err(numerical)?;
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "verify-martingale", &cfg)?;
    art.write_json("report.json", &report)?;
    Ok(art)
}

pub fn meanfield(common: &Common, args: &MeanFieldArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("meanfield", common, &mut p, |o, p| MeanFieldConfig::merge(o, args, p));
    let d = load(&cfg.driver_file, &mut p);
    let d = mean_field(d, &mut p);
    let mu0 = initial_law(cfg.law, cfg.mean, cfg.sd, cfg.lo, cfg.hi, &mut p);
    let chaos = ChaosConfig {
        t_end: cfg.t_end,
        n_steps: cfg.n_steps,
        n_list: cfg.n_list.0.clone(),
        n_replicas: cfg.n_replicas,
        seed: cfg.seed,
        reference: match cfg.reference {
            ReferenceKind::Pde => {
                ReferenceFlow::Pde { n_x: cfg.pde_n_x, sd_multiple: cfg.sd_multiple, refine: cfg.refine }
            }
            ReferenceKind::Particles => ReferenceFlow::Particles { n: cfg.proxy_n },
        },
    };
    if let Err(e) = chaos.validate() {
        p.push(chain(&e));
    }
    finish(p)?;

    let summary = run_chaos_experiment(&d.unwrap(), &mu0, &chaos).map_err(numerical)?;
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "meanfield", &cfg)?;
    let e = art.io_err("chaos.csv");
    art.write_with("chaos.csv", |w| summary.write_csv(w).map_err(e))?;
    art.write_json("chaos_summary.json", &summary)?;
    Ok(art)
}

#[derive(Serialize)]
struct PdeSummary {
    x_range: [f64; 2],
    times: Vec<f64>,
    mass: Vec<f64>,
    mean: Vec<f64>,
    clip_mass: f64,
}

pub fn mkv_pde(common: &Common, args: &MkvPdeArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("mkv-pde", common, &mut p, |o, p| MkvPdeConfig::merge(o, args, p));
    let d = load(&cfg.driver_file, &mut p);
    let d = mean_field(d, &mut p);
    let mu0 = initial_law(cfg.law, cfg.mean, cfg.sd, cfg.lo, cfg.hi, &mut p);
    p.positive("t_end", cfg.t_end);
    p.at_least("n_steps", cfg.n_steps, 1);
    p.at_least("n_x", cfg.n_x, 3);
    p.at_least("snapshot_every", cfg.snapshot_every, 1);
    if !cfg.x_range.is_empty() {
        p.range("x_range", &cfg.x_range);
    }
    p.positive("sd_multiple", cfg.sd_multiple);
    finish(p)?;
    let d = d.unwrap();

    let (lo, hi) = if cfg.x_range.is_empty() {
        pde_domain(&d, &mu0, cfg.t_end, cfg.sd_multiple).map_err(numerical)?
    } else {
        (cfg.x_range[0], cfg.x_range[1])
    };
    let u0 = mu0.density(lo, hi, cfg.n_x).map_err(numerical)?;
    let scheme = match cfg.scheme {
        SchemeKind::Implicit => PdeScheme::Implicit,
        SchemeKind::Explicit => PdeScheme::Explicit,
    };
    let flow = solve_mckean_vlasov_pde(&d, &u0, cfg.t_end, cfg.n_steps, scheme).map_err(numerical)?;
    let last = flow.times.len() - 1;
    let keep: Vec<usize> = (0..=last).filter(|k| k % cfg.snapshot_every == 0 || *k == last).collect();
    let kept = MeasureFlow {
        times: keep.iter().map(|&k| flow.times[k]).collect(),
        snapshots: keep.iter().map(|&k| flow.snapshots[k].clone()).collect(),
        clip_mass: flow.clip_mass,
    };
    let summary = PdeSummary {
        x_range: [lo, hi],
        times: kept.times.clone(),
        mass: kept
            .snapshots
            .iter()
            .map(|s| match s {
                Snapshot::Density(u) => u.mass(),
                Snapshot::Quantiles(_) => 1.0,
            })
            .collect(),
        mean: kept.snapshots.iter().map(|s| s.mean()).collect(),
        clip_mass: flow.clip_mass,
    };
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "mkv-pde", &cfg)?;
    let e = art.io_err("density.csv");
    art.write_with("density.csv", |w| kept.write_density_csv(w).map_err(e))?;
    art.write_json("pde_summary.json", &summary)?;
    Ok(art)
}

#[derive(Serialize)]
struct UatReport {
    achieved_sup_error: f64,
    epsilon: f64,
    converged: bool,
    final_loss: f64,
    iterations_used: usize,
    driver_file: &'static str,
}

pub fn uat(common: &Common, args: &UatArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("uat", common, &mut p, |o, p| UatConfig::merge(o, args, p));
    p.range("t_range", &cfg.t_range);
    p.range("x_range", &cfg.x_range);
    p.check(cfg.target_a.is_finite() && cfg.target_b.is_finite() && cfg.target_k.is_finite(), || {
        "target coefficients must be finite".into()
    });
    p.check(cfg.target_a - cfg.target_b.abs() > 0.0, || {
        format!("target a + b sin(k x) must stay positive: need a > |b|, got a {} b {}", cfg.target_a, cfg.target_b)
    });
    p.check(!cfg.hidden.is_empty() && cfg.hidden.iter().all(|&h| h > 0), || {
        format!("hidden must list positive widths, got {:?}", cfg.hidden.0)
    });
    let grid = if cfg.t_range.len() == 2 && cfg.x_range.len() == 2 {
        TrainingGrid::new((cfg.t_range[0], cfg.t_range[1]), (cfg.x_range[0], cfg.x_range[1]), cfg.n_t, cfg.n_x)
            .map_err(|e| p.push(chain(&e)))
            .ok()
    } else {
        None
    };
    p.positive("epsilon", cfg.epsilon);
    p.positive("learning_rate", cfg.learning_rate);
    p.at_least("iterations", cfg.iterations, 1);
    p.check(cfg.band >= 0.0, || format!("band must be >= 0, got {}", cfg.band));
    finish(p)?;

    let mut tc = TrainingConfig::new(grid.unwrap(), cfg.epsilon, cfg.iterations, cfg.seed);
    tc.learning_rate = cfg.learning_rate;
    tc.hidden_sizes = cfg.hidden.0.clone();
    tc.band = cfg.band;
    tc.check_every = cfg.check_every;
    let (a, b, k) = (cfg.target_a, cfg.target_b, cfg.target_k);
    let target = move |_t: f64, x: f64| a + b * (k * x).sin();
    let fit = fit_driver_to_target(&target, &tc).map_err(numerical)?;
    let report = UatReport {
        achieved_sup_error: fit.achieved_sup_error,
        epsilon: cfg.epsilon,
        converged: fit.achieved_sup_error < cfg.epsilon,
        final_loss: fit.final_loss,
        iterations_used: fit.iterations_used,
        driver_file: "driver.json",
    };
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "uat", &cfg)?;
    art.write_text("driver.json", &(driver_to_json(&fit.driver) + "\n"))?;
    art.write_json("uat_report.json", &report)?;
    Ok(art)
}

#[derive(Serialize)]
struct RootsReport {
    t: f64,
    x: f64,
    roots: Vec<f64>,
    potentials: Vec<f64>,
    slopes: Vec<f64>,
    selected: Option<f64>,
    error: Option<String>,
}

pub fn select_vol(common: &Common, args: &SelectVolArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("select-vol", common, &mut p, |o, p| SelectVolConfig::merge(o, args, p));
    let d = load(&cfg.driver_file, &mut p);
    let scan = ScanConfig::new(cfg.z_min, cfg.z_max, cfg.n_subdiv).map_err(|e| p.push(chain(&e))).ok();
    p.finite("t", cfg.t);
    p.finite("x", cfg.x);
    p.positive("tol", cfg.tol);
    if cfg.cache_n_t > 0 {
        p.at_least("cache_n_t", cfg.cache_n_t, 2);
        p.at_least("cache_n_x", cfg.cache_n_x, 2);
        p.range("cache_t_range", &cfg.cache_t_range);
        p.range("cache_x_range", &cfg.cache_x_range);
    }
    finish(p)?;
    let (d, scan) = (d.unwrap(), scan.unwrap());

    let mut art = Artifacts::new(out)?;
    echo(&mut art, "select-vol", &cfg)?;
    let rs = RootSet::detect(&d, cfg.t, cfg.x, &scan, cfg.tol).map_err(numerical)?;
    let selected = select_volatility(&rs);
    let report = RootsReport {
        t: cfg.t,
        x: cfg.x,
        roots: rs.roots.clone(),
        potentials: rs.potentials.clone(),
        slopes: rs.slopes.clone(),
        selected: selected.as_ref().ok().copied(),
        error: selected.as_ref().err().map(|e| chain(e)),
    };
    art.write_json("roots.json", &report)?;
    selected.map_err(numerical)?;

    if cfg.cache_n_t > 0 {
        let nodes = |r: &[f64], n: usize| -> Vec<f64> {
            (0..n).map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64).collect()
        };
        let mut vf = VolatilityField::new(d.clone()).map_err(numerical)?;
        if !d.has_unique_positive_root() {
            vf = vf.with_selection(scan);
        }
        let vf = vf
            .build_cache(&nodes(&cfg.cache_t_range, cfg.cache_n_t), &nodes(&cfg.cache_x_range, cfg.cache_n_x))
            .map_err(numerical)?;
        art.write_with("nu_cache.csv", |w| vf.write_cache_csv(w).map_err(numerical))?;
    }
    Ok(art)
}

#[derive(Serialize)]
struct PriceReport {
    payoff: PayoffKind,
    strike: Option<f64>,
    maturity: f64,
    s0: f64,
    r: f64,
    price: f64,
    sigma_clamped: usize,
    quote_prices: Option<Vec<f64>>,
    call_crossings: Option<Vec<(usize, usize)>>,
}

pub fn price(common: &Common, args: &PriceArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("price", common, &mut p, |o, p| PriceConfig::merge(o, args, p));
    let d = load(&cfg.driver_file, &mut p);
    p.positive("s0", cfg.s0);
    p.positive("maturity", cfg.maturity);
    p.finite("r", cfg.r);
    if matches!(cfg.payoff, PayoffKind::Call | PayoffKind::Put) {
        p.positive("strike", cfg.strike);
    }
    let spec = if cfg.s_range.is_empty() {
        GridSpec::for_quote(cfg.s0, cfg.strike, cfg.maturity, cfg.n_s, cfg.n_t)
    } else {
        p.range("s_range", &cfg.s_range);
        GridSpec {
            s_min: cfg.s_range.first().copied().unwrap_or(f64::NAN),
            s_max: cfg.s_range.get(1).copied().unwrap_or(f64::NAN),
            n_s: cfg.n_s,
            n_t: cfg.n_t,
            t0: 0.0,
            maturity: cfg.maturity,
        }
    };
    if let Err(e) = spec.validate() {
        p.push(chain(&e));
    }
    let quotes = if cfg.quotes_file.as_os_str().is_empty() { None } else { load_quotes(&cfg.quotes_file, &mut p) };
    finish(p)?;

    let payoff = match cfg.payoff {
        PayoffKind::Call => Payoff::Call { strike: cfg.strike },
        PayoffKind::Put => Payoff::Put { strike: cfg.strike },
        PayoffKind::Cash => Payoff::Cash,
        PayoffKind::Asset => Payoff::Asset,
    };
    let vf = VolatilityField::new(d.unwrap()).map_err(numerical)?;
    let grid = solve_pricing_pde(&vf, payoff, cfg.r, &spec).map_err(numerical)?;
    let price = grid.spot_value(cfg.s0).map_err(numerical)?;
    let (quote_prices, crossings) = match &quotes {
        Some(q) => {
            let qg = QuoteGrid { n_s: cfg.quote_n_s, n_t: cfg.quote_n_t };
            let prices = price_quotes(&vf, q, cfg.s0, cfg.r, qg).map_err(numerical)?;
            let crossings = call_crossings(q, &prices);
            (Some(prices), Some(crossings))
        }
        None => (None, None),
    };
    let report = PriceReport {
        payoff: cfg.payoff,
        strike: payoff.strike(),
        maturity: cfg.maturity,
        s0: cfg.s0,
        r: cfg.r,
        price,
        sigma_clamped: grid.sigma_clamped,
        quote_prices: quote_prices.clone(),
        call_crossings: crossings,
    };
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "price", &cfg)?;
    if cfg.write_surface {
        let e = art.io_err("surface.csv");
        art.write_with("surface.csv", |w| grid.write_csv(w).map_err(e))?;
    }
    if let (Some(q), Some(prices)) = (&quotes, &quote_prices) {
        let model: Vec<MarketQuote> = q.iter().zip(prices).map(|(q, &price)| MarketQuote { price, ..*q }).collect();
        art.write_with("model_prices.csv", |w| write_quotes(w, &model).map_err(numerical))?;
    }
    art.write_json("price.json", &report)?;
    Ok(art)
}

pub fn calibrate_cmd(common: &Common, args: &CalibrateArgs) -> Result<Artifacts, CliError> {
    let mut p = Problems::default();
    let (cfg, out) = resolve("calibrate", common, &mut p, |o, p| CalibrateConfig::merge(o, args, p));
    let d = load(&cfg.driver_file, &mut p);
    let quotes = load_quotes(&cfg.quotes_file, &mut p);
    p.positive("s0", cfg.s0);
    p.finite("r", cfg.r);
    p.at_least("budget", cfg.budget, 1);
    p.positive("step", cfg.step);
    if let Some(d) = &d {
        let n = d.n_params();
        p.check(cfg.free.iter().all(|&i| i < n), || {
            format!("free indices must be < {n} (the driver's parameter count), got {:?}", cfg.free.0)
        });
    }
    if let Some(q) = &quotes {
        p.check(!q.is_empty(), || "quotes_file has no quotes".into());
        for (i, q) in q.iter().enumerate() {
            if let Err(e) = q.validate(cfg.s0, cfg.r) {
                p.push(format!("quote {i}: {}", chain(&e)));
            }
        }
    }
    finish(p)?;

    let cc = CalibrationConfig {
        budget: cfg.budget,
        free: if cfg.free.is_empty() { None } else { Some(cfg.free.0.clone()) },
        step: cfg.step,
        ftol: cfg.ftol,
        grid: QuoteGrid { n_s: cfg.n_s, n_t: cfg.n_t },
    };
    let res = calibrate(&quotes.unwrap(), cfg.s0, cfg.r, &d.unwrap(), &cc).map_err(numerical)?;
    let report = CalibrationReport {
        loss: res.loss,
        residuals: res.residuals.clone(),
        theta_file: "theta.json".into(),
        iterations: res.iterations,
        budget_exhausted: res.budget_exhausted,
    };
    let mut art = Artifacts::new(out)?;
    echo(&mut art, "calibrate", &cfg)?;
    art.write_text("theta.json", &(driver_to_json(&res.driver) + "\n"))?;
    art.write_json("calibration.json", &report)?;
    Ok(art)
}
