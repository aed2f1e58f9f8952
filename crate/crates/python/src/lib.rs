//! Python bindings for `nbm_core`.

use std::error::Error;
use std::fs::File;
use std::io::BufReader;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nbm_core::bsde_solver::{default_checkpoints, verify_nbm_martingale, BsdeConfig, Offset};
use nbm_core::implicit_volatility::{ScanConfig, VolatilityField};
use nbm_core::meanfield::{pde_domain, solve_mckean_vlasov_pde, w2_distance_1d, InitialLaw, PdeScheme, Snapshot};
use nbm_core::neural_driver::{
    driver_from_json, driver_to_json, load_driver, save_driver, GeneralDriver, Polynomial, SpecializedDriver,
};
use nbm_core::pricing::{
    calibrate as core_calibrate, price_quotes as core_price_quotes, proportional_driver,
    read_quotes as core_read_quotes, solve_pricing_pde, CalibrationConfig, GridSpec, MarketQuote, OptionType, Payoff,
    QuoteGrid,
};
use nbm_core::sde_engine::{simulate_from, simulate_girsanov, simulate_girsanov_by_reweighting, PathBundle, TimeGrid};

create_exception!(nbm, NbmError, PyRuntimeError, "Numerical or i/o failure in the core library.");

fn err<E: Error>(e: E) -> PyErr {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    NbmError::new_err(msg)
}

/// A specialised driver `g(t, m, z)`.
#[pyclass(module = "nbm", name = "Driver", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDriver {
    inner: SpecializedDriver,
}

#[pymethods]
impl PyDriver {
    /// `g = alpha z^2 / 2 - beta`, with constant volatility `sqrt(2 beta / alpha)`.
    #[staticmethod]
    fn quadratic(alpha: f64, beta: f64) -> PyResult<Self> {
        Ok(PyDriver { inner: SpecializedDriver::quadratic(alpha, beta).map_err(err)? })
    }

    /// Polynomial in z, coefficients in increasing degree.
    #[staticmethod]
    fn polynomial(coefficients: Vec<f64>) -> PyResult<Self> {
        Ok(PyDriver { inner: SpecializedDriver::polynomial(coefficients).map_err(err)? })
    }

    #[staticmethod]
    fn from_roots(roots: Vec<f64>) -> Self {
        PyDriver { inner: SpecializedDriver::PolynomialTest(Polynomial::from_roots(&roots)) }
    }

    /// Network driver whose asset volatility is the constant `sigma`.
    #[staticmethod]
    fn proportional(sigma: f64) -> PyResult<Self> {
        Ok(PyDriver { inner: proportional_driver(sigma).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyDriver { inner: driver_from_json(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDriver { inner: load_driver(path).map_err(err)? })
    }

    fn to_json(&self) -> String {
        driver_to_json(&self.inner)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_driver(&self.inner, path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    /// `g(t, m, z)`.
    fn __call__(&self, t: f64, m: f64, z: f64) -> PyResult<f64> {
        self.inner.general(t, m, m, z).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Driver(kind={})", self.inner.kind())
    }
}

/// Volatility `nu(t, x)` implied by a driver.
#[pyclass(module = "nbm", name = "VolatilityField", frozen)]
struct PyField {
    inner: VolatilityField,
}

#[pymethods]
impl PyField {
    /// With `select=True` the field scans `[z_min, z_max]` and picks the
    /// minimal-potential root instead of bracketing a single one.
    #[new]
    #[pyo3(signature = (driver, select=false, z_min=0.01, z_max=10.0, n_subdiv=1000))]
    fn new(driver: &PyDriver, select: bool, z_min: f64, z_max: f64, n_subdiv: usize) -> PyResult<Self> {
        let mut vf = VolatilityField::new(driver.inner.clone()).map_err(err)?;
        if select {
            vf = vf.with_selection(ScanConfig::new(z_min, z_max, n_subdiv).map_err(err)?);
        }
        Ok(PyField { inner: vf })
    }

    fn nu(&self, t: f64, x: f64) -> PyResult<f64> {
        self.inner.nu(t, x).map_err(err)
    }

    /// Every root on the scan window with its potential and slope.
    #[pyo3(signature = (t, x, z_min=0.01, z_max=10.0, n_subdiv=1000))]
    fn roots<'py>(
        &self,
        py: Python<'py>,
        t: f64,
        x: f64,
        z_min: f64,
        z_max: f64,
        n_subdiv: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let scan = ScanConfig::new(z_min, z_max, n_subdiv).map_err(err)?;
        let rs = self.inner.solve_all_roots(t, x, &scan).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("roots", rs.roots)?;
        d.set_item("potentials", rs.potentials)?;
        d.set_item("slopes", rs.slopes)?;
        d.set_item("selected_index", rs.selected_index)?;
        Ok(d)
    }

    /// The volatility when it does not depend on `(t, x)`.
    #[getter]
    fn constant_value(&self) -> Option<f64> {
        self.inner.constant_value()
    }
}

/// Simulated paths on a uniform time grid.
#[pyclass(module = "nbm", name = "Paths", frozen)]
struct PyPaths {
    inner: PathBundle,
}

#[pymethods]
impl PyPaths {
    #[getter]
    fn n_paths(&self) -> usize {
        self.inner.n_paths()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid().times()
    }

    #[getter]
    fn weights(&self) -> Option<Vec<f64>> {
        self.inner.weights().map(<[f64]>::to_vec)
    }

    fn path(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n_paths() {
            return Err(PyValueError::new_err(format!("path {i} out of range")));
        }
        Ok(self.inner.path(i).to_vec())
    }

    fn column(&self, k: usize) -> PyResult<Vec<f64>> {
        if k > self.inner.grid().n_steps() {
            return Err(PyValueError::new_err(format!("step {k} out of range")));
        }
        Ok(self.inner.column(k))
    }

    fn terminal(&self) -> Vec<f64> {
        self.inner.terminal()
    }

    /// `(mean, standard error)` of the terminal value, weighted if the
    /// paths carry weights.
    fn terminal_mean(&self) -> (f64, f64) {
        self.inner.terminal_mean()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(err)?;
        self.inner.write_csv(std::io::BufWriter::new(f)).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (field, t_end, n_steps, n_paths, seed, t0=0.0, m0=0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    field: &PyField,
    t_end: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    t0: f64,
    m0: f64,
) -> PyResult<PyPaths> {
    let grid = TimeGrid::new(t0, t_end, n_steps).map_err(err)?;
    let pb = py.detach(|| simulate_from(&field.inner, grid, n_paths, seed, m0)).map_err(err)?;
    Ok(PyPaths { inner: pb })
}

/// Paths under the shifted measure of a quadratic driver, simulated
/// directly or as weighted reference paths.
#[pyfunction]
#[pyo3(signature = (field, t_end, n_steps, n_paths, seed, reweight=false))]
fn simulate_shifted(
    py: Python<'_>,
    field: &PyField,
    t_end: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    reweight: bool,
) -> PyResult<PyPaths> {
    let grid = TimeGrid::new(0.0, t_end, n_steps).map_err(err)?;
    let pb = py
        .detach(|| {
            if reweight {
                simulate_girsanov_by_reweighting(&field.inner, grid, n_paths, seed)
            } else {
                simulate_girsanov(&field.inner, grid, n_paths, seed)
            }
        })
        .map_err(err)?;
    Ok(PyPaths { inner: pb })
}

/// Solves the BSDE with the driver (shifted by `offset`) and terminal `M_T`
/// and reports `|Y - M|` at the checkpoints.
#[pyfunction]
#[pyo3(signature = (driver, t_end, n_steps, n_paths, seed, offset=0.0, basis_degree=3, checkpoints=None))]
#[allow(clippy::too_many_arguments)]
fn verify_martingale<'py>(
    py: Python<'py>,
    driver: &PyDriver,
    t_end: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    offset: f64,
    basis_degree: usize,
    checkpoints: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = TimeGrid::new(0.0, t_end, n_steps).map_err(err)?;
    let vf = VolatilityField::new(driver.inner.clone()).map_err(err)?;
    let checkpoints = checkpoints.unwrap_or_else(|| default_checkpoints(&grid));
    let cfg = BsdeConfig { basis_degree, ..BsdeConfig::default() };
    let perturbed = Offset { inner: &driver.inner, offset };
    let rep =
        py.detach(|| verify_nbm_martingale(&vf, &perturbed, grid, n_paths, seed, &checkpoints, &cfg)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("checkpoints", rep.checkpoints)?;
    d.set_item("mean_abs_err", rep.mean_abs_err)?;
    d.set_item("max_abs_err", rep.max_abs_err)?;
    d.set_item("clip_count", rep.clip_count)?;
    d.set_item("condition_numbers", rep.condition_numbers)?;
    Ok(d)
}

fn payoff_of(kind: &str, strike: f64) -> PyResult<Payoff> {
    match kind {
        "call" => Ok(Payoff::Call { strike }),
        "put" => Ok(Payoff::Put { strike }),
        "cash" => Ok(Payoff::Cash),
        "asset" => Ok(Payoff::Asset),
        _ => Err(PyValueError::new_err(format!("unknown payoff {kind:?}; expected call, put, cash or asset"))),
    }
}

/// Price at `(0, s0)` of a European payoff on the pricing PDE.
#[pyfunction]
#[pyo3(signature = (field, payoff="call", strike=100.0, maturity=1.0, s0=100.0, r=0.0, n_s=400, n_t=400))]
#[allow(clippy::too_many_arguments)]
fn price(
    py: Python<'_>,
    field: &PyField,
    payoff: &str,
    strike: f64,
    maturity: f64,
    s0: f64,
    r: f64,
    n_s: usize,
    n_t: usize,
) -> PyResult<f64> {
    let payoff = payoff_of(payoff, strike)?;
    let spec = GridSpec::for_quote(s0, strike, maturity, n_s, n_t);
    py.detach(|| solve_pricing_pde(&field.inner, payoff, r, &spec)?.spot_value(s0)).map_err(err)
}

type QuoteTuple = (String, f64, f64, f64, f64);

fn to_quotes(rows: Vec<QuoteTuple>) -> PyResult<Vec<MarketQuote>> {
    rows.into_iter()
        .map(|(t, strike, maturity, price, weight)| {
            let option_type = match t.as_str() {
                "call" => OptionType::Call,
                "put" => OptionType::Put,
                _ => return Err(PyValueError::new_err(format!("unknown option type {t:?}"))),
            };
            Ok(MarketQuote { option_type, strike, maturity, price, weight })
        })
        .collect()
}

/// Quotes from a `type,K,T,price,weight` CSV as tuples in that order.
#[pyfunction]
fn read_quotes(path: &str) -> PyResult<Vec<QuoteTuple>> {
    let f = File::open(path).map_err(err)?;
    let qs = core_read_quotes(BufReader::new(f)).map_err(err)?;
    Ok(qs
        .into_iter()
        .map(|q| {
            let t = match q.option_type {
                OptionType::Call => "call",
                OptionType::Put => "put",
            };
            (t.to_string(), q.strike, q.maturity, q.price, q.weight)
        })
        .collect())
}

/// Model prices of `(type, K, T, price, weight)` quotes.
#[pyfunction]
#[pyo3(signature = (field, quotes, s0, r, n_s=200, n_t=100))]
fn price_quotes(
    py: Python<'_>,
    field: &PyField,
    quotes: Vec<QuoteTuple>,
    s0: f64,
    r: f64,
    n_s: usize,
    n_t: usize,
) -> PyResult<Vec<f64>> {
    let qs = to_quotes(quotes)?;
    py.detach(|| core_price_quotes(&field.inner, &qs, s0, r, QuoteGrid { n_s, n_t })).map_err(err)
}

/// Fits `init`'s parameters to the quotes. Returns a dict with the fitted
/// `driver`, `loss`, `residuals`, `iterations`, `budget_exhausted` and
/// `loss_history`.
#[pyfunction]
#[pyo3(signature = (quotes, s0, r, init, budget=200, free=None, step=0.1, n_s=200, n_t=100))]
#[allow(clippy::too_many_arguments)]
fn calibrate<'py>(
    py: Python<'py>,
    quotes: Vec<QuoteTuple>,
    s0: f64,
    r: f64,
    init: &PyDriver,
    budget: usize,
    free: Option<Vec<usize>>,
    step: f64,
    n_s: usize,
    n_t: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let qs = to_quotes(quotes)?;
    let cfg = CalibrationConfig { budget, free, step, grid: QuoteGrid { n_s, n_t }, ..CalibrationConfig::default() };
    let res = py.detach(|| core_calibrate(&qs, s0, r, &init.inner, &cfg)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("driver", PyDriver { inner: res.driver })?;
    d.set_item("loss", res.loss)?;
    d.set_item("residuals", res.residuals)?;
    d.set_item("iterations", res.iterations)?;
    d.set_item("budget_exhausted", res.budget_exhausted)?;
    d.set_item("loss_history", res.loss_history)?;
    Ok(d)
}

/// Density of the McKean-Vlasov limit from a Gaussian start. Returns a dict
/// with the grid `x`, the `times`, the `density` rows and `clip_mass`.
#[pyfunction]
#[pyo3(signature = (driver, mean, sd, t_end, n_steps=400, n_x=801, x_range=None, sd_multiple=8.0, explicit=false))]
#[allow(clippy::too_many_arguments)]
fn mkv_pde<'py>(
    py: Python<'py>,
    driver: &PyDriver,
    mean: f64,
    sd: f64,
    t_end: f64,
    n_steps: usize,
    n_x: usize,
    x_range: Option<(f64, f64)>,
    sd_multiple: f64,
    explicit: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let SpecializedDriver::MeanField(mf) = &driver.inner else {
        return Err(PyValueError::new_err(format!("expected a mean_field driver, got {}", driver.inner.kind())));
    };
    let mu0 = InitialLaw::Gaussian { mean, sd };
    let scheme = if explicit { PdeScheme::Explicit } else { PdeScheme::Implicit };
    let (flow, x) = py
        .detach(|| {
            let (lo, hi) = match x_range {
                Some(r) => r,
                None => pde_domain(mf, &mu0, t_end, sd_multiple)?,
            };
            let u0 = mu0.density(lo, hi, n_x)?;
            let x = u0.nodes();
            solve_mckean_vlasov_pde(mf, &u0, t_end, n_steps, scheme).map(|f| (f, x))
        })
        .map_err(err)?;
    let density: Vec<Vec<f64>> = flow
        .snapshots
        .iter()
        .filter_map(|s| match s {
            Snapshot::Density(u) => Some(u.values().to_vec()),
            Snapshot::Quantiles(_) => None,
        })
        .collect();
    let d = PyDict::new(py);
    d.set_item("x", x)?;
    d.set_item("times", flow.times)?;
    d.set_item("density", density)?;
    d.set_item("clip_mass", flow.clip_mass)?;
    Ok(d)
}

/// Quadratic Wasserstein distance between two equally weighted samples.
#[pyfunction]
fn w2_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    w2_distance_1d(&a, &b).map_err(err)
}

#[pymodule]
fn nbm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NbmError", m.py().get_type::<NbmError>())?;
    m.add_class::<PyDriver>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyPaths>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_shifted, m)?)?;
    m.add_function(wrap_pyfunction!(verify_martingale, m)?)?;
    m.add_function(wrap_pyfunction!(price, m)?)?;
    m.add_function(wrap_pyfunction!(read_quotes, m)?)?;
    m.add_function(wrap_pyfunction!(price_quotes, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(mkv_pde, m)?)?;
    m.add_function(wrap_pyfunction!(w2_distance, m)?)?;
    Ok(())
}
