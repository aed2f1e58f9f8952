//! JSON run configuration with per-field flag overrides.
//!
//! Each subcommand has a config struct and a matching clap argument struct
//! generated from one field list. Loading reads every known key from the
//! JSON object, applies flags on top, and records every problem (bad type,
//! unknown key, failed check) instead of stopping at the first.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// A comma-separated list on the command line, a JSON array in files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(List(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<T>, String>>()
            .map(List)
    }
}

impl<T> std::ops::Deref for List<T> {
    type Target = Vec<T>;
    fn deref(&self) -> &Vec<T> {
        &self.0
    }
}

/// Collected configuration problems.
#[derive(Debug, Default)]
pub struct Problems(pub Vec<String>);

impl Problems {
    pub fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    pub fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    pub fn positive(&mut self, name: &str, v: f64) {
        self.check(v > 0.0 && v.is_finite(), || format!("{name} must be positive and finite, got {v}"));
    }

    pub fn at_least(&mut self, name: &str, v: usize, min: usize) {
        self.check(v >= min, || format!("{name} must be >= {min}, got {v}"));
    }

    pub fn finite(&mut self, name: &str, v: f64) {
        self.check(v.is_finite(), || format!("{name} must be finite, got {v}"));
    }

    pub fn range(&mut self, name: &str, v: &[f64]) {
        self.check(v.len() == 2 && v[0] < v[1] && v.iter().all(|x| x.is_finite()), || {
            format!("{name} must be two finite increasing values, got {v:?}")
        });
    }

    pub fn file(&mut self, name: &str, p: &Path) {
        if p.as_os_str().is_empty() {
            self.push(format!("{name} is required"));
        } else if !p.is_file() {
            self.push(format!("{name}: {} does not exist", p.display()));
        }
    }
}

/// The JSON object from `--config`, or an empty one.
pub fn load_object(path: Option<&Path>, problems: &mut Problems) -> Map<String, Value> {
    let Some(path) = path else { return Map::new() };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            problems.push(format!("config {}: {e}", path.display()));
            return Map::new();
        }
    };
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => m,
        Ok(_) => {
            problems.push(format!("config {}: top level must be an object", path.display()));
            Map::new()
        }
        Err(e) => {
            problems.push(format!("config {}: {e}", path.display()));
            Map::new()
        }
    }
}

/// Removes `key` from `obj` and decodes it, recording a problem on failure.
pub fn take<T: for<'de> Deserialize<'de>>(
    obj: &mut Map<String, Value>,
    key: &str,
    problems: &mut Problems,
) -> Option<T> {
    let v = obj.remove(key)?;
    match serde_json::from_value(v) {
        Ok(t) => Some(t),
        Err(e) => {
            problems.push(format!("{key}: {e}"));
            None
        }
    }
}

/// Records every key left in `obj` as unknown.
pub fn reject_unknown(obj: &Map<String, Value>, problems: &mut Problems) {
    for k in obj.keys() {
        problems.push(format!("unknown field `{k}`"));
    }
}

/// Generates a config struct with defaults, its clap flags, and the merge
/// of JSON values and flags.
macro_rules! command_config {
    (
        $(#[$smeta:meta])*
        $name:ident / $args:ident {
            $(
                $(#[doc = $doc:literal])*
                $field:ident : $ty:ty = $default:expr,
            )*
        }
    ) => {
        $(#[$smeta])*
        #[derive(Debug, Clone, PartialEq, serde::Serialize)]
        pub struct $name {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for $name {
            fn default() -> Self {
                $name { $( $field: $default, )* }
            }
        }

        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct $args {
            $(
                $(#[doc = $doc])*
                #[arg(long)]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            pub fn merge(
                obj: &mut serde_json::Map<String, serde_json::Value>,
                args: &$args,
                problems: &mut $crate::config::Problems,
            ) -> Self {
                let mut cfg = $name::default();
                $(
                    if let Some(v) = $crate::config::take::<$ty>(obj, stringify!($field), problems) {
                        cfg.$field = v;
                    }
                    if let Some(v) = &args.$field {
                        cfg.$field = v.clone();
                    }
                )*
                cfg
            }
        }
    };
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON run configuration; keys are the flag names with underscores.
    /// Flags given on the command line override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for the artifacts (created if missing) [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Pde,
    Particles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Call,
    Put,
    Cash,
    Asset,
}

command_config! {
    SimulateConfig / SimulateArgs {
        /// Driver parameter file (JSON, required)
        driver_file: PathBuf = PathBuf::new(),
        /// Start time [default: 0.0]
        t0: f64 = 0.0,
        /// Horizon T [default: 1.0]
        t_end: f64 = 1.0,
        /// Euler steps [default: 100]
        n_steps: usize = 100,
        /// Number of paths [default: 10000]
        n_paths: usize = 10_000,
        /// Root seed [default: 0]
        seed: u64 = 0,
        /// Initial state M_0 [default: 0.0]
        m0: f64 = 0.0,
        /// Time steps per Ito-estimator slab [default: 10]
        slab_steps: usize = 10,
        /// State bins per slab [default: 10]
        n_state_bins: usize = 10,
        /// Minimum samples for a bin to be reported [default: 30]
        min_count: usize = 30,
        /// Write paths.csv (every path at every step) [default: true]
        write_paths: bool = true,
    }
}

command_config! {
    GirsanovConfig / GirsanovArgs {
        /// Driver parameter file (JSON, required); must be quadratic_constant
        driver_file: PathBuf = PathBuf::new(),
        /// Horizon T [default: 1.0]
        t_end: f64 = 1.0,
        /// Euler steps [default: 100]
        n_steps: usize = 100,
        /// Number of paths per estimator [default: 100000]
        n_paths: usize = 100_000,
        /// Root seed [default: 0]
        seed: u64 = 0,
        /// Time steps per Ito-estimator slab [default: 10]
        slab_steps: usize = 10,
        /// State bins per slab [default: 10]
        n_state_bins: usize = 10,
        /// Minimum samples for a bin to be reported [default: 30]
        min_count: usize = 30,
        /// Write paths_q.csv with the paths simulated under the new measure [default: false]
        write_paths: bool = false,
    }
}

command_config! {
    MartingaleConfig / MartingaleArgs {
        /// Driver parameter file (JSON, required)
        driver_file: PathBuf = PathBuf::new(),
        /// Constant added to the BSDE driver (0 checks the driver itself) [default: 0.0]
        offset: f64 = 0.0,
        /// Horizon T [default: 1.0]
        t_end: f64 = 1.0,
        /// Time steps [default: 200]
        n_steps: usize = 200,
        /// Number of paths [default: 100000]
        n_paths: usize = 100_000,
        /// Root seed [default: 0]
        seed: u64 = 0,
        /// Polynomial regression degree [default: 3]
        basis_degree: usize = 3,
        /// Fixed-point passes per step (0 = explicit scheme) [default: 0]
        picard_iterations: usize = 0,
        /// Largest accepted Gram-matrix condition number [default: 1e12]
        max_condition: f64 = 1e12,
        /// Checkpoint times, comma separated [default: T/4,T/2,3T/4]
        checkpoints: List<f64> = List::default(),
    }
}

command_config! {
    MeanFieldConfig / MeanFieldArgs {
        /// Mean-field driver parameter file (JSON, required)
        driver_file: PathBuf = PathBuf::new(),
        /// Initial law [default: gaussian]
        law: LawKind = LawKind::Gaussian,
        /// Gaussian initial mean [default: 0.0]
        mean: f64 = 0.0,
        /// Gaussian initial standard deviation [default: 1.0]
        sd: f64 = 1.0,
        /// Uniform initial lower end [default: -1.0]
        lo: f64 = -1.0,
        /// Uniform initial upper end [default: 1.0]
        hi: f64 = 1.0,
        /// Horizon T [default: 1.0]
        t_end: f64 = 1.0,
        /// Particle time steps [default: 100]
        n_steps: usize = 100,
        /// Particle counts N, comma separated [default: 64,256,1024,4096]
        n_list: List<usize> = List(vec![64, 256, 1024, 4096]),
        /// Replicas per N [default: 10]
        n_replicas: usize = 10,
        /// Root seed [default: 0]
        seed: u64 = 0,
        /// Law driving the ideal particles [default: pde]
        reference: ReferenceKind = ReferenceKind::Pde,
        /// PDE nodes for the pde reference [default: 801]
        pde_n_x: usize = 801,
        /// PDE domain half-width in terminal standard deviations [default: 8.0]
        sd_multiple: f64 = 8.0,
        /// PDE steps per particle step [default: 4]
        refine: usize = 4,
        /// Particles in the proxy reference [default: 100000]
        proxy_n: usize = 100_000,
    }
}

command_config! {
    MkvPdeConfig / MkvPdeArgs {
        /// Mean-field driver parameter file (JSON, required)
        driver_file: PathBuf = PathBuf::new(),
        /// Initial law [default: gaussian]
        law: LawKind = LawKind::Gaussian,
        /// Gaussian initial mean [default: 0.0]
        mean: f64 = 0.0,
        /// Gaussian initial standard deviation [default: 1.0]
        sd: f64 = 1.0,
        /// Uniform initial lower end [default: -1.0]
        lo: f64 = -1.0,
        /// Uniform initial upper end [default: 1.0]
        hi: f64 = 1.0,
        /// Horizon T [default: 1.0]
        t_end: f64 = 1.0,
        /// Time steps [default: 400]
        n_steps: usize = 400,
        /// Grid nodes [default: 801]
        n_x: usize = 801,
        /// Spatial domain as lo,hi [default: mean +- sd_multiple terminal sd]
        x_range: List<f64> = List::default(),
        /// Automatic domain half-width in terminal standard deviations [default: 8.0]
        sd_multiple: f64 = 8.0,
        /// Time stepping [default: implicit]
        scheme: SchemeKind = SchemeKind::Implicit,
        /// Write every k-th time slice to density.csv (the last is always written) [default: 10]
        snapshot_every: usize = 10,
    }
}

command_config! {
    UatConfig / UatArgs {
        /// Target nu(t, x) = a + b sin(k x): constant a [default: 0.2]
        target_a: f64 = 0.2,
        /// Target amplitude b [default: 0.1]
        target_b: f64 = 0.1,
        /// Target frequency k [default: 1.0]
        target_k: f64 = 1.0,
        /// Time range lo,hi [default: 0.0,1.0]
        t_range: List<f64> = List(vec![0.0, 1.0]),
        /// State range lo,hi [default: -pi,pi]
        x_range: List<f64> = List(vec![-std::f64::consts::PI, std::f64::consts::PI]),
        /// Grid nodes in t [default: 11]
        n_t: usize = 11,
        /// Grid nodes in x [default: 41]
        n_x: usize = 41,
        /// Target sup-grid root error [default: 0.05]
        epsilon: f64 = 0.05,
        /// Iteration budget [default: 5000]
        iterations: usize = 5000,
        /// Initialisation seed [default: 0]
        seed: u64 = 0,
        /// Adam learning rate [default: 0.01]
        learning_rate: f64 = 0.01,
        /// Hidden layer widths, comma separated [default: 16,16]
        hidden: List<usize> = List(vec![16, 16]),
        /// Half-width of the z-band in the loss [default: 0.1]
        band: f64 = 0.1,
        /// Iterations between sup-error checks [default: 250]
        check_every: usize = 250,
    }
}

command_config! {
    SelectVolConfig / SelectVolArgs {
        /// Driver parameter file (JSON, required)
        driver_file: PathBuf = PathBuf::new(),
        /// Time of the root query [default: 0.0]
        t: f64 = 0.0,
        /// State of the root query [default: 0.0]
        x: f64 = 0.0,
        /// Scan window lower end (> 0) [default: 0.01]
        z_min: f64 = 0.01,
        /// Scan window upper end [default: 10.0]
        z_max: f64 = 10.0,
        /// Scan subintervals [default: 1000]
        n_subdiv: usize = 1000,
        /// Root residual tolerance [default: 1e-12]
        tol: f64 = 1e-12,
        /// Cache nodes in t (0 skips the cache export) [default: 0]
        cache_n_t: usize = 0,
        /// Cache nodes in x [default: 41]
        cache_n_x: usize = 41,
        /// Cache time range lo,hi [default: 0.0,1.0]
        cache_t_range: List<f64> = List(vec![0.0, 1.0]),
        /// Cache state range lo,hi [default: -2.0,2.0]
        cache_x_range: List<f64> = List(vec![-2.0, 2.0]),
    }
}

command_config! {
    PriceConfig / PriceArgs {
        /// Driver parameter file (JSON, required)
        driver_file: PathBuf = PathBuf::new(),
        /// Payoff [default: call]
        payoff: PayoffKind = PayoffKind::Call,
        /// Strike (call and put) [default: 100.0]
        strike: f64 = 100.0,
        /// Maturity [default: 1.0]
        maturity: f64 = 1.0,
        /// Spot S_0 [default: 100.0]
        s0: f64 = 100.0,
        /// Interest rate [default: 0.0]
        r: f64 = 0.0,
        /// Spot nodes [default: 400]
        n_s: usize = 400,
        /// Time steps [default: 400]
        n_t: usize = 400,
        /// Spot range lo,hi [default: min(S0, K)/8, 4 max(S0, K)]
        s_range: List<f64> = List::default(),
        /// Write surface.csv [default: true]
        write_surface: bool = true,
        /// Optional quotes CSV (type,K,T,price,weight) to price as a batch
        quotes_file: PathBuf = PathBuf::new(),
        /// Spot nodes per quote in the batch [default: 200]
        quote_n_s: usize = 200,
        /// Time steps per quote in the batch [default: 100]
        quote_n_t: usize = 100,
    }
}

command_config! {
    CalibrateConfig / CalibrateArgs {
        /// Initial driver parameter file (JSON, required)
        driver_file: PathBuf = PathBuf::new(),
        /// Quotes CSV (type,K,T,price,weight), required
        quotes_file: PathBuf = PathBuf::new(),
        /// Spot S_0 [default: 100.0]
        s0: f64 = 100.0,
        /// Interest rate [default: 0.0]
        r: f64 = 0.0,
        /// Optimiser iteration budget [default: 200]
        budget: usize = 200,
        /// Indices of the free parameters, comma separated [default: all]
        free: List<usize> = List::default(),
        /// Initial simplex edge or gradient step [default: 0.1]
        step: f64 = 0.1,
        /// Loss-spread stopping tolerance [default: 1e-16]
        ftol: f64 = 1e-16,
        /// Spot nodes per quote [default: 200]
        n_s: usize = 200,
        /// Time steps per quote [default: 100]
        n_t: usize = 100,
    }
}
