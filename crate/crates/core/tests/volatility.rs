use nbm_core::implicit_volatility::{
    compute_potential, select_volatility, RootSet, ScanConfig, VolError, VolatilityField,
};
use nbm_core::neural_driver::{Activation, MlpParams, MonotoneNet, Polynomial, SpecializedDriver, DEFAULT_C_H};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact antiderivative of a polynomial with ascending coefficients.
fn poly_antiderivative(c: &[f64], z: f64) -> f64 {
    c.iter().enumerate().map(|(k, a)| a * z.powi(k as i32 + 1) / (k + 1) as f64).sum()
}

fn poly(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * z + a)
}

/// Dense sign scan plus bisection, independent of the library's root finder.
fn brute_force_roots(c: &[f64], z_max: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let h = z_max / n as f64;
    for i in 0..n {
        let (mut a, mut b) = (i as f64 * h, (i + 1) as f64 * h);
        let (fa, fb) = (poly(c, a), poly(c, b));
        if fa == 0.0 {
            out.push(a);
            continue;
        }
        if fa * fb > 0.0 {
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quadratic_root_matches_closed_form(alpha in 0.05f64..20.0, ratio in 0.01f64..50.0, neg in any::<bool>()) {
        let (a, b) = if neg { (-alpha, -alpha * ratio) } else { (alpha, alpha * ratio) };
        let vf = VolatilityField::new(SpecializedDriver::quadratic(a, b).unwrap()).unwrap();
        let nu = vf.solve_root(0.3, -1.0).unwrap();
        let expect = (2.0 * b / a).sqrt();
        prop_assert!((nu - expect).abs() <= 1e-10 * expect.max(1.0));
    }

    #[test]
    fn network_roots_have_small_residuals(seed in 0u64..500, t in 0.0f64..1.0, x in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = MlpParams::random(&[3, 8, 1], Activation::Tanh, Some(2), 1.0, &mut rng);
        // shift so that h(t, x, 0) < 0 < h(t, x, z) for large z
        let h = MonotoneNet::new(Some(mlp), 0.0, DEFAULT_C_H).unwrap();
        let offset = h.value(t, x, 0.0) + 0.5;
        let shifted = MlpParams::new(
            vec![3, 8, 1],
            h.mlp().unwrap().raw_weights().to_vec(),
            {
                let mut b = h.mlp().unwrap().biases().to_vec();
                b[1][0] -= offset;
                b
            },
            Activation::Tanh,
            h.mlp().unwrap().positivity_mask().to_vec(),
        ).unwrap();
        let d = SpecializedDriver::MonotoneNetwork(MonotoneNet::new(Some(shifted), 0.0, DEFAULT_C_H).unwrap());
        let vf = VolatilityField::new(d.clone()).unwrap();
        let nu = vf.solve_root(t, x).unwrap();
        prop_assert!(nu > 0.0);
        prop_assert!(d.value(t, x, nu).unwrap().abs() < 1e-9);
    }

    #[test]
    fn potential_of_polynomials_is_exact(r1 in 0.1f64..2.0, gap in 0.1f64..2.0, z in 0.0f64..5.0) {
        let p = Polynomial::from_roots(&[r1, r1 + gap]);
        let c = p.coefficients().to_vec();
        let d = SpecializedDriver::polynomial(c.clone()).unwrap();
        let g = compute_potential(&d, 0.0, 0.0, z).unwrap();
        prop_assert!((g - poly_antiderivative(&c, z)).abs() < 1e-9 * (1.0 + z.powi(3)));
    }
}

#[test]
fn selection_matches_brute_force_on_random_cubics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 50 {
        let n_pos = rng.random_range(2..=3);
        let mut roots: Vec<f64> = (0..n_pos).map(|_| rng.random_range(0.2..4.0)).collect();
        if n_pos == 2 {
            roots.push(rng.random_range(-3.0..-0.2));
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut c = Polynomial::from_roots(&roots).coefficients().to_vec();
        c.iter_mut().for_each(|v| *v *= sign);
        let mut pos: Vec<f64> = roots.iter().cloned().filter(|r| *r > 0.0).collect();
        pos.sort_by(f64::total_cmp);
        // regular, well separated roots with distinct potentials
        if pos.windows(2).any(|w| w[1] - w[0] < 0.05) {
            continue;
        }
        let mut g: Vec<f64> = pos.iter().map(|&r| poly_antiderivative(&c, r)).collect();
        g.sort_by(f64::total_cmp);
        if g[1] - g[0] < 1e-6 {
            continue;
        }

        let brute = brute_force_roots(&c, 5.0, 20_000);
        let best = brute
            .iter()
            .cloned()
            .min_by(|a, b| poly_antiderivative(&c, *a).total_cmp(&poly_antiderivative(&c, *b)))
            .unwrap();

        let d = SpecializedDriver::polynomial(c.clone()).unwrap();
        let scan = ScanConfig::window(0.01, 5.0).unwrap();
        let rs = RootSet::detect(&d, 0.0, 0.0, &scan, 1e-12).unwrap();
        let nu = select_volatility(&rs).unwrap();
        assert!((nu - best).abs() < 1e-8, "roots {roots:?} sign {sign}: selected {nu}, brute force {best}");
        let vf = VolatilityField::new(d).unwrap().with_selection(scan);
        assert_eq!(vf.nu(0.0, 0.0).unwrap(), nu);
        checked += 1;
    }
}

#[test]
fn symmetric_cubic_is_a_tie() {
    let c = Polynomial::from_roots(&[1.0, 2.0, 3.0]).coefficients().to_vec();
    // G(1) = G(3) = -9/4 by the closed form
    assert!((poly_antiderivative(&c, 1.0) - poly_antiderivative(&c, 3.0)).abs() < 1e-12);
    let d = SpecializedDriver::polynomial(c).unwrap();
    let rs = RootSet::detect(&d, 0.0, 0.0, &ScanConfig::window(0.01, 5.0).unwrap(), 1e-12).unwrap();
    assert!(matches!(select_volatility(&rs), Err(VolError::SeparationViolation { .. })));
}

#[test]
fn cached_field_matches_direct_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mlp = MlpParams::random(&[3, 6, 1], Activation::Tanh, Some(2), 0.3, &mut rng);
    let mut b = mlp.biases().to_vec();
    b[1][0] -= 1.0;
    let mlp = MlpParams::new(
        mlp.layer_sizes().to_vec(),
        mlp.raw_weights().to_vec(),
        b,
        Activation::Tanh,
        mlp.positivity_mask().to_vec(),
    )
    .unwrap();
    let d = SpecializedDriver::MonotoneNetwork(MonotoneNet::new(Some(mlp), 0.0, DEFAULT_C_H).unwrap());
    let direct = VolatilityField::new(d).unwrap();
    let t_nodes: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let x_nodes: Vec<f64> = (0..=40).map(|i| -2.0 + i as f64 / 10.0).collect();
    let cached = direct.clone().build_cache(&t_nodes, &x_nodes).unwrap();
    let bound = cached.cache().unwrap().interp_error_bound();
    for (t, x) in [(0.05, -1.93), (0.51, 0.07), (0.99, 1.42)] {
        let err = (cached.nu(t, x).unwrap() - direct.nu(t, x).unwrap()).abs();
        assert!(err <= 2.0 * bound + 1e-12, "error {err} vs bound {bound}");
    }
}
