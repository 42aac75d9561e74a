use proptest::prelude::*;

use mvsdde::diagnostics::{gn_eval, gn_threshold, moment_bound, radial_check};
use mvsdde::fixedpoint::{
    apply_h, initial_flow, picard_iterate, picard_iterate_with, PicardConfig,
};
use mvsdde::measure::{discounted_sup, flow_distance_lambda, transport_cost, wasserstein_psi_v};
use mvsdde::model::{Delay, LyapunovSpec, PsiSpec};
use mvsdde::models::{
    build_multi_delay, delayed_ou, multi_delay, opinion_model, DelaySpec, OpinionParams,
};
use mvsdde::particle::{
    simulate_particles, simulate_particles_flow, simulate_particles_with_noise,
};
use mvsdde::{DelayedState, EmpiricalMeasure, NoiseBank, TimeGrid};

fn measure_strategy(n: usize, d: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec(prop::collection::vec(-4.0..4.0f64, 2 * d), n).prop_map(move |rows| {
        EmpiricalMeasure::new(
            rows.iter()
                .map(|t| DelayedState::from_tuple(d, t).unwrap())
                .collect(),
        )
        .unwrap()
    })
}

fn pair_strategy() -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure)> {
    (1..8usize, 1..3usize).prop_flat_map(|(n, d)| (measure_strategy(n, d), measure_strategy(n, d)))
}

fn profiles() -> [(PsiSpec, LyapunovSpec); 4] {
    [
        (PsiSpec::identity(), LyapunovSpec::zero()),
        (PsiSpec::identity(), LyapunovSpec::quadratic()),
        (PsiSpec::linear_quadratic(), LyapunovSpec::zero()),
        (PsiSpec::linear_quadratic(), LyapunovSpec::quadratic()),
    ]
}

proptest! {
    #[test]
    fn transport_is_a_symmetric_minimum((mu, nu) in pair_strategy()) {
        for (psi, v) in profiles() {
            let w = wasserstein_psi_v(&mu, &nu, &psi, &v).unwrap();
            let back = wasserstein_psi_v(&nu, &mu, &psi, &v).unwrap();
            prop_assert!(w >= 0.0);
            prop_assert!((w - back).abs() <= 1e-12 * w.max(1.0));
            prop_assert_eq!(wasserstein_psi_v(&mu, &mu, &psi, &v).unwrap(), 0.0);
            let diagonal = mu
                .atoms()
                .iter()
                .zip(nu.atoms())
                .map(|(x, y)| transport_cost(x, y, &psi, &v))
                .sum::<f64>()
                / mu.len() as f64;
            prop_assert!(w <= diagonal * (1.0 + 1e-12));
        }
    }

    #[test]
    fn transport_ignores_atom_order((mu, nu) in pair_strategy(), shift in 0..8usize) {
        let mut atoms = nu.atoms().to_vec();
        let len = atoms.len();
        atoms.rotate_left(shift % len);
        let rotated = EmpiricalMeasure::new(atoms).unwrap();
        let psi = PsiSpec::linear_quadratic();
        let v = LyapunovSpec::quadratic();
        let a = wasserstein_psi_v(&mu, &nu, &psi, &v).unwrap();
        let b = wasserstein_psi_v(&mu, &rotated, &psi, &v).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn discounting_never_increases_the_distance(
        profile in prop::collection::vec(0.0..10.0f64, 9),
        l1 in 0.0..20.0f64,
        dl in 0.0..20.0f64,
    ) {
        let grid = TimeGrid::new(0.5, 2.0, 2).unwrap();
        let a = discounted_sup(&profile, &grid, l1);
        let b = discounted_sup(&profile, &grid, l1 + dl);
        prop_assert!(b <= a);
        prop_assert_eq!(discounted_sup(&profile, &grid, 0.0), profile.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn gn_is_even_and_one_lipschitz(n in 1..8u32, r in -20.0..20.0f64) {
        let (g, dg, d2g) = gn_eval(n, r);
        let (gm, dgm, _) = gn_eval(n, -r);
        prop_assert!((g - gm).abs() <= 1e-12);
        prop_assert!((dg + dgm).abs() <= 1e-12);
        prop_assert!(dg.abs() <= 1.0 + 1e-12);
        prop_assert!(d2g >= 0.0);
        prop_assert!((g - r.abs()).abs() <= gn_threshold(n - 1) + 1e-12);
    }
}

#[test]
fn single_constant_delay_reduces_to_the_base_model() {
    let grid = TimeGrid::new(0.5, 2.0, 10).unwrap();
    let base = delayed_ou(1.0, 0.7, 0.4, 0.5, 1.0).unwrap();
    let rebuilt = build_multi_delay(base.clone(), vec![Delay::Constant(0.5)], 2.0).unwrap();
    let bank = NoiseBank::generate(4, 16, &grid, 1);
    let a = simulate_particles_with_noise(&base, &bank, &grid).unwrap();
    let b = simulate_particles_with_noise(&rebuilt, &bank, &grid).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.values(), q.values());
    }

    // the same delay through the interpolating path
    let varying = build_multi_delay(base, vec![Delay::varying(|_| 0.5)], 2.0).unwrap();
    let c = simulate_particles_with_noise(&varying, &bank, &grid).unwrap();
    for (p, q) in a.iter().zip(&c) {
        for (x, y) in p.values().iter().zip(q.values()) {
            assert!((x - y).abs() <= 1e-12, "{x} {y}");
        }
    }
}

#[test]
fn averaging_model_first_step() {
    let grid = TimeGrid::new(1.0, 1.0, 100).unwrap();
    let delays = [
        DelaySpec::Constant { value: 0.5 },
        DelaySpec::Constant { value: 1.0 },
    ];
    let model = multi_delay(1.0, 0.0, 1.0, &delays, 1.0, 1.0).unwrap();
    let paths = simulate_particles(&model, 0, 1, &grid).unwrap();
    let h = grid.h();
    assert!((paths[0].at_step(1)[0] - (1.0 - h)).abs() <= 1e-15);
}

#[test]
fn delayed_ou_without_delay_term_matches_ou_moments() {
    let (a, sigma, horizon) = (1.0, 1.0, 5.0);
    let grid = TimeGrid::new(0.5, horizon, 50).unwrap();
    let model = delayed_ou(a, 0.0, sigma, 0.5, 1.0).unwrap();
    let n = 4000;
    let paths = simulate_particles(&model, 12, n, &grid).unwrap();
    let xs: Vec<f64> = paths.iter().map(|p| p.terminal()[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let exact_mean = (-a * horizon).exp();
    let exact_var = sigma * sigma / (2.0 * a) * (1.0 - (-2.0 * a * horizon).exp());
    let se_mean = (exact_var / n as f64).sqrt();
    let se_var = exact_var * (2.0 / (n - 1) as f64).sqrt();
    assert!(
        (mean - exact_mean).abs() <= 4.0 * se_mean,
        "{mean} vs {exact_mean}"
    );
    assert!(
        (var - exact_var).abs() <= 4.0 * se_var,
        "{var} vs {exact_var}"
    );
}

#[test]
fn picard_with_shared_noise_reaches_the_particle_system() {
    let model = opinion_model(&OpinionParams::default()).unwrap();
    let grid = TimeGrid::new(0.25, 0.5, 4).unwrap();
    let bank = NoiseBank::generate(21, 32, &grid, 1);
    let config = PicardConfig {
        lambda: Some(0.0),
        tol: 1e-14,
        max_iter: 30,
    };
    let report = picard_iterate_with(&model, &bank, &grid, &config).unwrap();
    assert!(report.converged);
    let (_, particles) = simulate_particles_flow(&model, &bank, &grid).unwrap();
    let d = flow_distance_lambda(
        &report.final_flow,
        &particles,
        0.0,
        &PsiSpec::identity(),
        &LyapunovSpec::zero(),
    )
    .unwrap();
    assert!(d <= 1e-12, "{d}");
}

#[test]
fn picard_distances_contract_on_the_opinion_model() {
    let model = opinion_model(&OpinionParams::default()).unwrap();
    let grid = TimeGrid::new(0.25, 1.0, 8).unwrap();
    let report = picard_iterate(&model, 3, 64, &grid, &PicardConfig::default()).unwrap();
    assert!(report.converged);
    for w in report.distances.windows(2) {
        assert!(w[1] < w[0], "{:?}", report.distances);
    }
    assert!(report.ratios.iter().flatten().all(|r| *r < 1.0));
}

#[test]
fn shipped_models_respect_moment_and_radial_checks() {
    let grid = TimeGrid::new(0.5, 1.0, 16).unwrap();
    let delays = [
        DelaySpec::Constant { value: 0.25 },
        DelaySpec::Sine {
            base: 0.35,
            amplitude: 0.1,
            frequency: 3.0,
        },
    ];
    let models = [
        delayed_ou(1.0, 0.5, 0.5, 0.5, 1.0).unwrap(),
        multi_delay(1.0, 0.3, 0.5, &delays, 1.0, 1.0).unwrap(),
        opinion_model(&OpinionParams {
            tau: 0.5,
            ..OpinionParams::default()
        })
        .unwrap(),
    ];
    for model in &models {
        let paths = simulate_particles(model, 8, 400, &grid).unwrap();
        let m = moment_bound(model, &paths).unwrap();
        assert!(
            m.observed + 1.645 * m.standard_error <= m.bound,
            "{}",
            model.name()
        );

        let mu = initial_flow(model, 200, &grid).unwrap();
        let nu = apply_h(model, &mu, 9, 200, &grid).unwrap();
        let r = radial_check(model, &mu, &nu, 10, 200, &grid).unwrap();
        assert!(r.holds, "{} worst score {}", model.name(), r.worst_score);
    }
}
