//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines are always printed; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nbm_core::bsde_solver::{verify_nbm_martingale, BsdeConfig, Offset};
use nbm_core::implicit_volatility::{
    expand_bracket, safeguarded_newton, select_volatility, RootSet, ScanConfig, VolError, VolatilityField,
};
use nbm_core::meanfield::{
    gaussian_pdf, run_chaos_experiment, solve_mckean_vlasov_pde, ChaosConfig, DensityGrid, InitialLaw, PdeScheme,
    Snapshot,
};
use nbm_core::neural_driver::{
    fit_driver_to_target, save_driver, Activation, MeanFieldDriver, MlpParams, MonotoneNet, Polynomial,
    SpecializedDriver, TrainingConfig, TrainingGrid, DEFAULT_C_H,
};
use nbm_core::pricing::{
    calibrate, price_quotes, proportional_driver, solve_pricing_pde, write_quotes, CalibrationConfig, GridSpec,
    MarketQuote, OptionType, Payoff, QuoteGrid,
};
use nbm_core::sde_engine::{
    check_generator, simulate_girsanov, simulate_girsanov_by_reweighting, TestFunction, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn quadratic(alpha: f64, beta: f64) -> VolatilityField {
    VolatilityField::new(SpecializedDriver::quadratic(alpha, beta).unwrap()).unwrap()
}

fn linear_meanfield(w: f64) -> MeanFieldDriver {
    MeanFieldDriver::new(MonotoneNet::linear(1.0, DEFAULT_C_H).unwrap(), MlpParams::linear(&[0.0, w], 1.0)).unwrap()
}

fn c1_quadratic_volatility() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let alpha = rng.random_range(0.05..20.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let beta = alpha * rng.random_range(0.01..50.0);
        let nu = quadratic(alpha, beta).solve_root(0.5, 0.0).map_err(|e| e.to_string())?;
        let exact = (2.0 * beta / alpha).sqrt();
        worst = worst.max((nu - exact).abs() / exact.max(1.0));
    }
    ensure(worst <= 1e-10, || format!("worst error {worst:e}"))?;
    Ok(format!("worst error {worst:.1e}"))
}

fn c2_girsanov() -> Outcome {
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let mut parts = Vec::new();
    for (alpha, beta) in [(2.0, 1.0), (-2.0, -1.0)] {
        let vf = quadratic(alpha, beta);
        let target = alpha; // alpha nu^2 T with nu = 1, T = 1
        let (m, se) = simulate_girsanov(&vf, grid, 100_000, 1).map_err(|e| e.to_string())?.terminal_mean();
        let (mw, sew) =
            simulate_girsanov_by_reweighting(&vf, grid, 100_000, 2).map_err(|e| e.to_string())?.terminal_mean();
        ensure((m - target).abs() < 4.0 * se, || format!("alpha {alpha}: mean {m} se {se}, target {target}"))?;
        ensure(m.signum() == alpha.signum() && mw.signum() == alpha.signum(), || format!("alpha {alpha}: sign"))?;
        let band = 4.0 * (se * se + sew * sew).sqrt();
        ensure((m - mw).abs() < band, || format!("alpha {alpha}: direct {m} vs reweighted {mw}, band {band}"))?;
        parts.push(format!("alpha {alpha}: {m:.4} / {mw:.4}"));
    }
    Ok(parts.join(", "))
}

fn c3_martingale() -> Outcome {
    let d = SpecializedDriver::quadratic(2.0, 1.0).unwrap();
    let vf = quadratic(2.0, 1.0);
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let cps = [0.25, 0.5, 0.75];
    let cfg = BsdeConfig::default();
    let ok = verify_nbm_martingale(&vf, &d, grid, 100_000, 3, &cps, &cfg).map_err(|e| e.to_string())?;
    let bad = verify_nbm_martingale(&vf, &Offset { inner: &d, offset: 0.5 }, grid, 100_000, 3, &cps, &cfg)
        .map_err(|e| e.to_string())?;
    let valid_max = ok.mean_abs_err.iter().cloned().fold(0.0, f64::max);
    ensure(valid_max <= 0.02, || format!("valid driver error {:?}", ok.mean_abs_err))?;
    let perturbed = bad.mean_abs_err[0];
    ensure(perturbed >= 0.1, || format!("perturbed error at T/4 {perturbed}"))?;
    ensure(perturbed >= 5.0 * valid_max, || format!("separation {perturbed} vs {valid_max}"))?;
    Ok(format!("valid {valid_max:.4}, perturbed at T/4 {perturbed:.4}"))
}

struct SquareMinusTime;

impl TestFunction for SquareMinusTime {
    fn u(&self, t: f64, x: f64) -> f64 {
        x * x - t
    }
    fn u_t(&self, _t: f64, _x: f64) -> f64 {
        -1.0
    }
    fn u_x(&self, _t: f64, x: f64) -> f64 {
        2.0 * x
    }
    fn u_xx(&self, _t: f64, _x: f64) -> f64 {
        2.0
    }
}

fn c4_generator() -> Outcome {
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let rep =
        check_generator(&quadratic(2.0, 1.0), &SquareMinusTime, grid, 100_000, 4, &[]).map_err(|e| e.to_string())?;
    let worst = rep.rows.iter().map(|r| r.residual.abs() / r.se.max(1e-300)).fold(0.0, f64::max);
    ensure(rep.all_pass(), || format!("failing rows {:?}", rep.rows.iter().filter(|r| !r.pass).collect::<Vec<_>>()))?;
    Ok(format!("{} checkpoints, worst |residual| / se {worst:.2}", rep.rows.len()))
}

fn c5_uat() -> Outcome {
    let pi = std::f64::consts::PI;
    let target = |_t: f64, x: f64| 0.2 + 0.1 * x.sin();
    let grid = TrainingGrid::new((0.0, 1.0), (-pi, pi), 11, 41).unwrap();
    let fit = fit_driver_to_target(&target, &TrainingConfig::new(grid, 0.05, 5000, 0)).map_err(|e| e.to_string())?;
    ensure(fit.achieved_sup_error < 0.05 && fit.iterations_used <= 5000, || {
        format!("sup error {} after {} iterations", fit.achieved_sup_error, fit.iterations_used)
    })?;

    // the root of z - nu + p(z) with nondecreasing |p| <= delta is within delta of nu
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let delta = rng.random_range(1e-4..0.1);
        let mlp = MlpParams::random(&[3, 5, 1], Activation::Tanh, Some(2), 1.0, &mut rng);
        let (t, x) = (rng.random_range(0.0..1.0), rng.random_range(-pi..pi));
        let nu = target(t, x);
        let mut f = |z: f64| {
            let (v, d) = mlp.value_and_partial(&[t, x, z], 2);
            Ok((z - nu + delta * v.tanh(), 1.0 + delta * d / v.cosh().powi(2)))
        };
        let b = expand_bracket(&mut f, 0.5, 2.0, 60).map_err(|e| e.to_string())?.ok_or("no bracket")?;
        let root = safeguarded_newton(&mut f, b, 1e-12, 200).map_err(|e| e.to_string())?;
        ensure((root - nu).abs() <= delta * (1.0 + 1e-9), || format!("perturbation {i}: root {root}, target {nu}"))?;
    }
    Ok(format!("sup error {:.4} in {} iterations; 100/100 perturbations", fit.achieved_sup_error, fit.iterations_used))
}

fn poly(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * z + a)
}

fn antiderivative(c: &[f64], z: f64) -> f64 {
    c.iter().enumerate().map(|(k, a)| a * z.powi(k as i32 + 1) / (k + 1) as f64).sum()
}

/// Dense sign scan plus bisection on `(0, z_max]`.
fn brute_force_roots(c: &[f64], z_max: f64, n: usize) -> Vec<f64> {
    let h = z_max / n as f64;
    let mut out = Vec::new();
    for i in 0..n {
        let (mut a, mut b) = (i as f64 * h, (i + 1) as f64 * h);
        if poly(c, a) * poly(c, b) > 0.0 {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if poly(c, a) * poly(c, m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        out.push(0.5 * (a + b));
    }
    out
}

fn c6_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scan = ScanConfig::window(0.01, 5.0).unwrap();
    let (mut checked, mut matched) = (0, 0);
    while checked < 50 {
        let n_pos = rng.random_range(2..=3);
        let mut roots: Vec<f64> = (0..n_pos).map(|_| rng.random_range(0.2..4.0)).collect();
        if n_pos == 2 {
            roots.push(rng.random_range(-3.0..-0.2));
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let c: Vec<f64> = Polynomial::from_roots(&roots).coefficients().iter().map(|v| v * sign).collect();
        let mut pos: Vec<f64> = roots.iter().cloned().filter(|r| *r > 0.0).collect();
        pos.sort_by(f64::total_cmp);
        if pos.windows(2).any(|w| w[1] - w[0] < 0.05) {
            continue;
        }
        let mut g: Vec<f64> = pos.iter().map(|&r| antiderivative(&c, r)).collect();
        g.sort_by(f64::total_cmp);
        if g[1] - g[0] < 1e-6 {
            continue;
        }
        checked += 1;
        let best = brute_force_roots(&c, 5.0, 20_000)
            .into_iter()
            .min_by(|a, b| antiderivative(&c, *a).total_cmp(&antiderivative(&c, *b)))
            .ok_or("brute force found no root")?;
        let d = SpecializedDriver::polynomial(c).unwrap();
        let rs = RootSet::detect(&d, 0.0, 0.0, &scan, 1e-12).map_err(|e| e.to_string())?;
        if select_volatility(&rs).map(|nu| (nu - best).abs() < 1e-8).unwrap_or(false) {
            matched += 1;
        }
    }
    ensure(matched == 50, || format!("{matched}/50 matched"))?;
    let sym = SpecializedDriver::polynomial(Polynomial::from_roots(&[1.0, 2.0, 3.0]).coefficients().to_vec()).unwrap();
    let rs = RootSet::detect(&sym, 0.0, 0.0, &scan, 1e-12).map_err(|e| e.to_string())?;
    ensure(matches!(select_volatility(&rs), Err(VolError::SeparationViolation { .. })), || {
        "symmetric cubic was not flagged".into()
    })?;
    Ok("50/50 matched; symmetric cubic raises SeparationViolation".into())
}

fn c7_chaos() -> Outcome {
    let s = run_chaos_experiment(
        &linear_meanfield(0.1),
        &InitialLaw::Gaussian { mean: 0.0, sd: 1.0 },
        &ChaosConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure((-1.4..=-0.6).contains(&s.slope), || format!("slope {} (E_N {:?})", s.slope, s.mean_e_n))?;
    Ok(format!("slope {:.3} over N {:?}", s.slope, s.n_list))
}

fn c8_heat_kernel() -> Outcome {
    let s0 = 0.25f64;
    let u0 = DensityGrid::gaussian(0.0, s0, -8.0, 8.0, 400).map_err(|e| e.to_string())?;
    let flow = solve_mckean_vlasov_pde(&linear_meanfield(0.0), &u0, 1.0, 400, PdeScheme::Implicit)
        .map_err(|e| e.to_string())?;
    let Snapshot::Density(u) = flow.terminal() else { return Err("no density".into()) };
    let sd = (s0 * s0 + 1.0).sqrt();
    let l1 = u.l1_distance_to(|x| gaussian_pdf(x, 0.0, sd));
    let mass_err = (u.mass() - 1.0).abs();
    ensure(l1 <= 1e-2, || format!("L1 {l1}"))?;
    ensure(mass_err <= 1e-6, || format!("mass error {mass_err}"))?;
    Ok(format!("L1 {l1:.2e}, mass error {mass_err:.1e}"))
}

fn bs_call(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let sd = sigma * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / sd;
    s * n.cdf(d1) - k * (-r * t).exp() * n.cdf(d1 - sd)
}

fn c9_pricing() -> Outcome {
    let (s0, k, r, t) = (100.0, 100.0, 0.05f64, 1.0);
    let vf = VolatilityField::new(proportional_driver(0.2).unwrap()).unwrap();
    let price = |payoff: Payoff, n: usize| -> Result<f64, String> {
        let spec = GridSpec::for_quote(s0, k, t, n, n);
        solve_pricing_pde(&vf, payoff, r, &spec).and_then(|g| g.spot_value(s0)).map_err(|e| e.to_string())
    };
    let exact = bs_call(s0, k, r, 0.2, t);
    let c = price(Payoff::Call { strike: k }, 400)?;
    let rel = (c - exact).abs() / exact;
    ensure(rel < 1e-3, || format!("relative error {rel}"))?;
    let p = price(Payoff::Put { strike: k }, 400)?;
    let parity = (c - p - (s0 - k * (-r * t).exp())).abs();
    ensure(parity <= 2.0 * 1e-3 * exact, || format!("parity error {parity}"))?;
    let e: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&n| price(Payoff::Call { strike: k }, n).map(|v| (v - exact).abs()))
        .collect::<Result<_, _>>()?;
    let ratios = [e[0] / e[1], e[1] / e[2]];
    ensure(ratios.iter().all(|q| (3.0..=5.0).contains(q)), || format!("Richardson ratios {ratios:?}"))?;
    Ok(format!("rel error {rel:.1e}, parity {parity:.1e}, ratios {:.2} {:.2}", ratios[0], ratios[1]))
}

fn call(k: f64, t: f64) -> MarketQuote {
    MarketQuote { option_type: OptionType::Call, strike: k, maturity: t, price: 1.0, weight: 1.0 }
}

fn synthetic_quotes() -> Vec<MarketQuote> {
    let truth = quadratic(1.0, 200.0);
    let mut quotes: Vec<MarketQuote> =
        [0.5, 1.0].iter().flat_map(|&t| [90.0, 100.0, 110.0].map(|k| call(k, t))).collect();
    let prices = price_quotes(&truth, &quotes, 100.0, 0.02, QuoteGrid::default()).unwrap();
    quotes.iter_mut().zip(prices).for_each(|(q, p)| q.price = p);
    quotes
}

fn c10_calibration() -> Outcome {
    let quotes = synthetic_quotes();
    let init = SpecializedDriver::quadratic(1.3, 150.0).unwrap();
    let res = calibrate(&quotes, 100.0, 0.02, &init, &CalibrationConfig::default()).map_err(|e| e.to_string())?;
    let SpecializedDriver::QuadraticConstant(q) = &res.driver else { return Err("driver kind changed".into()) };
    // prices depend on (alpha, beta) only through nu
    let err = (q.volatility() - 20.0).abs() / 20.0;
    ensure(err < 0.01, || format!("nu {} vs 20", q.volatility()))?;
    ensure(res.loss < 1e-6, || format!("loss {}", res.loss))?;
    ensure(res.iterations <= 200, || format!("{} iterations", res.iterations))?;
    Ok(format!("nu error {err:.1e}, loss {:.1e}, {} iterations", res.loss, res.iterations))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nbm")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`nbm {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn read_dir(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        files.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn c11_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let save = |d: SpecializedDriver, name: &str| save_driver(&d, dir.join(name)).map_err(|e| e.to_string());
    save(SpecializedDriver::quadratic(2.0, 1.0).unwrap(), "quadratic.json")?;
    save(SpecializedDriver::quadratic(1.3, 150.0).unwrap(), "init.json")?;
    save(SpecializedDriver::MeanField(linear_meanfield(0.1)), "meanfield.json")?;
    save(
        SpecializedDriver::polynomial(Polynomial::from_roots(&[0.5, 1.5, 3.0]).coefficients().to_vec()).unwrap(),
        "cubic.json",
    )?;
    save(proportional_driver(0.2).unwrap(), "flat.json")?;
    let quotes = synthetic_quotes();
    write_quotes(fs::File::create(dir.join("quotes.csv")).map_err(|e| e.to_string())?, &quotes)
        .map_err(|e| e.to_string())?;
    fs::write(
        dir.join("simulate.json"),
        format!(
            r#"{{"command": "simulate", "driver_file": {:?}, "n_paths": 2000, "n_steps": 50, "seed": 7}}"#,
            p("quadratic.json")
        ),
    )
    .map_err(|e| e.to_string())?;

    let (q, mf, cubic, flat, init, quotes_csv) =
        (p("quadratic.json"), p("meanfield.json"), p("cubic.json"), p("flat.json"), p("init.json"), p("quotes.csv"));
    let cfg = p("simulate.json");
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--config", &cfg]),
        (
            "girsanov",
            vec!["girsanov", "--driver-file", &q, "--n-paths", "5000", "--seed", "3", "--write-paths", "true"],
        ),
        ("verify-martingale", vec!["verify-martingale", "--driver-file", &q, "--n-paths", "2000", "--n-steps", "50"]),
        (
            "meanfield",
            vec!["meanfield", "--driver-file", &mf, "--n-list", "16,64,256", "--n-replicas", "3", "--n-steps", "20"],
        ),
        ("mkv-pde", vec!["mkv-pde", "--driver-file", &mf, "--n-x", "201", "--n-steps", "50"]),
        ("uat", vec!["uat", "--n-t", "3", "--n-x", "9", "--iterations", "200", "--hidden", "8", "--check-every", "50"]),
        ("select-vol", vec!["select-vol", "--driver-file", &cubic, "--cache-n-t", "3", "--cache-n-x", "9"]),
        ("price", vec!["price", "--driver-file", &flat, "--n-s", "100", "--n-t", "50", "--quotes-file", &quotes_csv]),
        (
            "calibrate",
            vec!["calibrate", "--driver-file", &init, "--quotes-file", &quotes_csv, "--r", "0.02", "--budget", "20"],
        ),
    ];
    let mut n_files = 0;
    for (name, args) in &runs {
        let mut outs = Vec::new();
        for rep in 0..2 {
            let out = p(&format!("{name}-{rep}"));
            let mut a = args.clone();
            a.extend(["--out", out.as_str()]);
            run_cli(&a)?;
            outs.push(read_dir(Path::new(&out))?);
        }
        ensure(outs[0].len() >= 2, || format!("{name}: only {} artifacts", outs[0].len()))?;
        ensure(outs[0] == outs[1], || format!("{name}: artifacts differ between runs"))?;
        n_files += outs[0].len();
    }
    Ok(format!("{} commands, {n_files} artifacts byte-identical", runs.len()))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("quadratic-driver volatility", Duration::from_secs(1), c1_quadratic_volatility),
        ("Girsanov drift", Duration::from_secs(30), c2_girsanov),
        ("martingale verification", Duration::from_secs(300), c3_martingale),
        ("generator check", Duration::from_secs(30), c4_generator),
        ("universal approximation", Duration::from_secs(120), c5_uat),
        ("selection principle", Duration::from_secs(10), c6_selection),
        ("propagation of chaos", Duration::from_secs(600), c7_chaos),
        ("McKean-Vlasov PDE oracle", Duration::from_secs(10), c8_heat_kernel),
        ("pricing", Duration::from_secs(30), c9_pricing),
        ("calibration round trip", Duration::from_secs(300), c10_calibration),
        ("CLI reproducibility", Duration::from_secs(600), c11_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > *budget => Err(format!("{d}; took {elapsed:.1?}, budget {budget:?}")),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name}: {detail} ({elapsed:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {why} ({elapsed:.2?})", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
