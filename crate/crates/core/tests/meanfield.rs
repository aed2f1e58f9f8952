use nbm_core::meanfield::{
    gaussian_pdf, lipschitz_probe, particle_increments, run_chaos_experiment, solve_mckean_vlasov_pde,
    step_interacting, w2_distance_1d, ChaosConfig, DensityGrid, InitialLaw, ParticleEnsemble, PdeScheme, ReferenceFlow,
    Snapshot,
};
use nbm_core::neural_driver::{Activation, MeanFieldDriver, MlpParams, MonotoneNet, DEFAULT_C_H};
use nbm_core::rng::stream_rng;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `nu = 1 + w E[Y]` for `h1 = z`, `phi(x, y) = 1 + w y`.
fn linear_driver(w: f64) -> MeanFieldDriver {
    let h = MonotoneNet::linear(1.0, DEFAULT_C_H).unwrap();
    MeanFieldDriver::new(h, MlpParams::linear(&[0.0, w], 1.0)).unwrap()
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..40)
}

proptest! {
    #[test]
    fn w2_is_a_metric(a in sample(), b in sample(), c in sample()) {
        let ab = w2_distance_1d(&a, &b).unwrap();
        let ba = w2_distance_1d(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(w2_distance_1d(&a, &a).unwrap(), 0.0);
        let ac = w2_distance_1d(&a, &c).unwrap();
        let cb = w2_distance_1d(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn pde_conserves_mass_and_sign(mean in -1.0f64..1.0, sd in 0.2f64..1.0, w in -0.3f64..0.3) {
        let u0 = DensityGrid::gaussian(mean, sd, -8.0, 8.0, 161).unwrap();
        let flow = solve_mckean_vlasov_pde(&linear_driver(w), &u0, 0.5, 20, PdeScheme::Implicit).unwrap();
        for s in &flow.snapshots {
            let Snapshot::Density(u) = s else { unreachable!() };
            prop_assert!((u.mass() - 1.0).abs() < 1e-10);
            prop_assert!(u.values().iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn heat_kernel_on_400_points() {
    let s0 = 0.25f64;
    let u0 = DensityGrid::gaussian(0.0, s0, -8.0, 8.0, 400).unwrap();
    let h = MonotoneNet::linear(1.0, DEFAULT_C_H).unwrap();
    let d = MeanFieldDriver::new(h, MlpParams::linear(&[0.0, 0.0], 1.0)).unwrap();
    let flow = solve_mckean_vlasov_pde(&d, &u0, 1.0, 200, PdeScheme::Implicit).unwrap();
    let Snapshot::Density(u) = flow.terminal() else { unreachable!() };
    let sd = (s0 * s0 + 1.0).sqrt();
    assert!(u.l1_distance_to(|x| gaussian_pdf(x, 0.0, sd)) < 1e-2);
    assert!((u.mass() - 1.0).abs() < 1e-6);
}

#[test]
fn pde_agrees_with_particles() {
    // nonlinear in the measure; phi ignores x so each step costs O(N)
    let phi = MlpParams::new(
        vec![2, 3, 1],
        vec![vec![0.0, 1.5, 0.0, -0.7, 0.0, 0.4], vec![0.2, 0.15, -0.1]],
        vec![vec![0.3, -0.2, 0.5], vec![1.0]],
        Activation::Tanh,
        vec![vec![false; 6], vec![false; 3]],
    )
    .unwrap();
    let d = MeanFieldDriver::new(MonotoneNet::linear(1.0, DEFAULT_C_H).unwrap(), phi).unwrap();
    let mu0 = InitialLaw::Gaussian { mean: 0.0, sd: 0.5 };
    let u0 = mu0.density(-7.0, 7.0, 561).unwrap();
    let n_steps = 50;
    let flow = solve_mckean_vlasov_pde(&d, &u0, 1.0, n_steps, PdeScheme::Implicit).unwrap();

    let n = 10_000;
    let x0 = mu0.sample(n, &mut stream_rng(5, u64::MAX));
    let mut ens = ParticleEnsemble::new(x0, 5).unwrap();
    let dt = 1.0 / n_steps as f64;
    for k in 0..n_steps {
        let dw = particle_increments(5, k, n, dt);
        ens = step_interacting(&ens, &d, dt, &dw, &flow.snapshots[k]).unwrap();
    }
    let q = flow.terminal().quantiles(n);
    let w2 = nbm_core::meanfield::w2_sorted(&ens.sorted_states(), &q);
    // sampling band: W2 between two independent N-samples of the limit law
    let band = {
        let law = InitialLaw::Gaussian {
            mean: 0.0,
            sd: flow.terminal().quantiles(1000).iter().map(|x| x * x).sum::<f64>().sqrt() / 1000f64.sqrt(),
        };
        let a = law.sample(n, &mut stream_rng(6, 0));
        let b = law.sample(n, &mut stream_rng(7, 0));
        w2_distance_1d(&a, &b).unwrap()
    };
    assert!(w2 < 3.0 * band, "W2 {w2} vs sampling band {band}");
    let w2_ideal = nbm_core::meanfield::w2_sorted(&ens.sorted_ideal_states(), &q);
    assert!(w2_ideal < 3.0 * band);
}

#[test]
fn chaos_rate_and_monotonicity() {
    let cfg = ChaosConfig {
        n_steps: 50,
        n_list: vec![32, 128, 512, 2048],
        n_replicas: 10,
        seed: 3,
        reference: ReferenceFlow::Pde { n_x: 401, sd_multiple: 8.0, refine: 2 },
        ..ChaosConfig::default()
    };
    let s = run_chaos_experiment(&linear_driver(0.1), &InitialLaw::Gaussian { mean: 0.0, sd: 1.0 }, &cfg).unwrap();
    assert!((-1.4..=-0.6).contains(&s.slope), "slope {}", s.slope);
    assert!(s.inversions <= 1);
    assert!((-1.4..=-0.6).contains(&s.w2_ideal_slope), "W2 slope {}", s.w2_ideal_slope);
    let mut csv = Vec::new();
    s.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("N,replica,E_N,W2_emp_vs_limit\n"));
    assert_eq!(text.lines().count(), 1 + 40);
}

#[test]
fn lipschitz_bound_holds_for_random_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let phi = MlpParams::random(&[2, 5, 1], Activation::Tanh, None, 0.5, &mut rng);
    let mut b = phi.biases().to_vec();
    b[1][0] += 2.0;
    let phi = MlpParams::new(
        phi.layer_sizes().to_vec(),
        phi.raw_weights().to_vec(),
        b,
        Activation::Tanh,
        phi.positivity_mask().to_vec(),
    )
    .unwrap();
    let d = MeanFieldDriver::new(MonotoneNet::linear(1.5, DEFAULT_C_H).unwrap(), phi).unwrap();
    let p = lipschitz_probe(&d, 100, 50, 4).unwrap();
    assert_eq!(p.violations, 0, "{p:?}");
    assert!(p.max_ratio <= p.bound);
}
