use nbm_core::bsde_solver::{default_checkpoints, verify_nbm_martingale, BsdeConfig, Offset};
use nbm_core::implicit_volatility::VolatilityField;
use nbm_core::neural_driver::SpecializedDriver;
use nbm_core::sde_engine::{
    check_generator, estimate_ito_decomposition, simulate_girsanov, simulate_girsanov_by_reweighting, simulate_nbm,
    BinSpec, TestFunction, TimeGrid,
};
use statrs::distribution::{ContinuousCDF, Normal};

fn quadratic(alpha: f64, beta: f64) -> VolatilityField {
    VolatilityField::new(SpecializedDriver::quadratic(alpha, beta).unwrap()).unwrap()
}

/// Kolmogorov-Smirnov statistic of `xs` against N(0, sd^2).
fn ks_statistic(xs: &[f64], sd: f64) -> f64 {
    let n = Normal::new(0.0, sd).unwrap();
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let len = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = n.cdf(x);
            (f - i as f64 / len).abs().max(((i + 1) as f64 / len - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn terminal_law_is_gaussian() {
    // nu = sqrt(2 * 1 / 2) = 1, so M_T ~ N(0, T)
    let grid = TimeGrid::new(0.0, 2.0, 50).unwrap();
    let pb = simulate_nbm(&quadratic(2.0, 1.0), grid, 20_000, 11).unwrap();
    let d = ks_statistic(&pb.terminal(), 2f64.sqrt());
    // 1% critical value 1.63 / sqrt(n)
    assert!(d < 1.63 / (20_000f64).sqrt(), "KS statistic {d}");
    let m = pb.moments_at(50);
    assert!((m.var - 2.0).abs() < 4.0 * 2.0 * (2.0 / 20_000f64).sqrt());
}

#[test]
fn ito_bins_recover_zero_drift_and_unit_diffusion() {
    let grid = TimeGrid::new(0.0, 1.0, 40).unwrap();
    let pb = simulate_nbm(&quadratic(0.5, 0.25), grid, 40_000, 5).unwrap();
    let spec = BinSpec { slab_steps: 10, n_state_bins: 5, min_count: 5_000 };
    let ito = estimate_ito_decomposition(&pb, &spec).unwrap();
    let mut n = 0;
    for b in ito.populated() {
        assert!(b.drift.abs() < 5.0 * b.drift_se + 1e-12, "drift {} se {}", b.drift, b.drift_se);
        assert!((b.diffusion - 1.0).abs() < 5.0 * b.diffusion_se + 1e-12);
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn girsanov_drift_and_sign() {
    // the likelihood ratio has variance e^{gamma^2 T} - 1 = e^4 - 1, so the
    // reweighted estimate needs the larger sample
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    for (alpha, beta) in [(2.0, 1.0), (-2.0, -1.0)] {
        let vf = quadratic(alpha, beta);
        let target = alpha * 1.0; // alpha nu^2 T with nu = 1
        let q = simulate_girsanov(&vf, grid, 100_000, 3).unwrap();
        let (m, se) = q.terminal_mean();
        assert!((m - target).abs() < 4.0 * se, "alpha {alpha}: mean {m} se {se}");
        let w = simulate_girsanov_by_reweighting(&vf, grid, 100_000, 4).unwrap();
        let (mw, sew) = w.terminal_mean();
        assert!((mw - m).abs() < 4.0 * (se * se + sew * sew).sqrt(), "{alpha}: {m} {se} {mw} {sew}");
        assert!(mw.signum() == alpha.signum());
    }
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

#[test]
fn generator_residual_vanishes() {
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let rep = check_generator(&quadratic(2.0, 1.0), &SquareMinusTime, grid, 20_000, 9, &[0, 5, 10, 19]).unwrap();
    assert!(rep.all_pass(), "{:?}", rep.rows);
}

#[test]
fn martingale_identity_separates_valid_and_perturbed_drivers() {
    let d = SpecializedDriver::quadratic(2.0, 1.0).unwrap();
    let vf = VolatilityField::new(d.clone()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let cps = default_checkpoints(&grid);
    let cfg = BsdeConfig::default();
    let ok = verify_nbm_martingale(&vf, &d, grid, 10_000, 1, &cps, &cfg).unwrap();
    let bad = verify_nbm_martingale(&vf, &Offset { inner: &d, offset: 0.5 }, grid, 10_000, 1, &cps, &cfg).unwrap();
    assert!(ok.mean_abs_err.iter().all(|&e| e < 0.03), "{:?}", ok.mean_abs_err);
    // a constant offset c shifts Y_s by c (T - s)
    for (s, e) in cps.iter().zip(&bad.mean_abs_err) {
        assert!((e - 0.5 * (1.0 - s)).abs() < 0.03, "s {s}: {e}");
    }
}

#[test]
fn path_csv_is_byte_identical_across_runs() {
    let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
    let write = || {
        let pb = simulate_nbm(&quadratic(2.0, 1.0), grid, 64, 99).unwrap();
        let mut buf = Vec::new();
        pb.write_csv(&mut buf).unwrap();
        buf
    };
    let a = write();
    assert_eq!(a, write());
    assert!(a.starts_with(b"path_id,t,M\n"));
}
