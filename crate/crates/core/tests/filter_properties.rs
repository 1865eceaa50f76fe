use std::sync::OnceLock;

use splitting_filter::diagnostics::density_moments;
use splitting_filter::filter::{estimate_normalizer, density_on_grid, Likelihood, NormalizerMethod, NormalizerScaling, Posterior};
use splitting_filter::nn::{NetworkArchitecture, NeuralDensity};
use splitting_filter::training::{train_network, TrainingConfig};
use splitting_filter::{
    make_benes_model, make_linear_model, BenesModelParams, Density, Domain, FilterModel, GaussianDensity, LinearModelParams, Purpose,
    Streams,
};

fn case1() -> FilterModel {
    make_linear_model(LinearModelParams::scalar(-1.0, 0.0, 0.1, 90.0, 0.0)).unwrap()
}

/// Case-1 step-1 prior trained at the reduced budget.
fn trained_prior() -> &'static NeuralDensity {
    static CELL: OnceLock<NeuralDensity> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = TrainingConfig::default();
        let config = TrainingConfig {
            epochs: 1500,
            schedule: config.schedule.rescaled(1500.0 / 6002.0).unwrap(),
            ..config
        };
        let psi = GaussianDensity::new(vec![0.0], 0.01);
        let domain = Domain::interval(-0.5, 0.5).unwrap();
        train_network(&case1(), &domain, (0.0, 0.01), &psi, &NetworkArchitecture::default(), &config, &Streams::new(7), 1, None)
            .unwrap()
            .0
    })
}

fn likelihood(z: f64) -> Likelihood {
    Likelihood::new(case1(), vec![z], 0.01).unwrap()
}

fn normalize(prior: &NeuralDensity, lik: &Likelihood, method: NormalizerMethod) -> Posterior {
    let key = Streams::new(7).key(Purpose::Normalizer, 1, 0);
    let est = estimate_normalizer(prior, lik, method, NormalizerScaling::Density, key).unwrap();
    Posterior {
        prior: prior.clone(),
        likelihood: lik.clone(),
        normalizer: est.constant,
        acceptance_rate: est.acceptance_rate,
    }
}

#[test]
fn monte_carlo_normalizer_agrees_with_fine_quadrature() {
    let prior = trained_prior();
    let lik = likelihood(0.9);
    let mc = normalize(prior, &lik, NormalizerMethod::MonteCarlo { samples: 100_000 }).normalizer;
    let quad = normalize(prior, &lik, NormalizerMethod::Quadrature { points: 100_001 }).normalizer;
    let rel = (mc - quad).abs() / quad;
    assert!(rel < 0.01, "Monte-Carlo {mc}, quadrature {quad}, relative difference {rel}");
}

#[test]
fn posteriors_integrate_to_one() {
    let prior = trained_prior();
    let nodes = prior.domain.grid_1d(2001).unwrap();
    for z in [0.0, 0.9, -2.7, 4.5] {
        for method in [NormalizerMethod::MonteCarlo { samples: 100_000 }, NormalizerMethod::Quadrature { points: 2001 }] {
            let post = normalize(prior, &likelihood(z), method);
            let (mass, _, _) = density_moments(&nodes, &density_on_grid(&post, &nodes)).unwrap();
            assert!((0.97..=1.03).contains(&mass), "z = {z}, {method:?}: mass {mass}");
        }
    }
}

#[test]
fn posterior_shape_is_invariant_to_prior_scale() {
    let prior = trained_prior();
    let lik = likelihood(0.9);
    let method = NormalizerMethod::Quadrature { points: 2001 };
    let base = normalize(prior, &lik, method);
    for c in [0.25, 3.7, 1e3] {
        let mut scaled = prior.clone();
        scaled.net.scale_output(c);
        let post = normalize(&scaled, &lik, method);
        assert!((post.normalizer / base.normalizer - c).abs() < 1e-10 * c);
        for x in prior.domain.grid_1d(401).unwrap() {
            let (a, b) = (post.evaluate(&[x]), base.evaluate(&[x]));
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "x = {x}: {a} vs {b}");
        }
    }
}

#[test]
fn posterior_is_nonnegative_where_the_prior_is() {
    let prior = trained_prior();
    let post = normalize(prior, &likelihood(0.9), NormalizerMethod::default());
    for x in prior.domain.grid_1d(2001).unwrap() {
        let p = prior.evaluate(&[x]);
        let q = post.evaluate(&[x]);
        assert!(likelihood(0.9).evaluate(&[x]) > 0.0);
        if p >= 0.0 {
            assert!(q >= 0.0);
        }
        assert_eq!(q == 0.0, p == 0.0);
    }
    assert_eq!(post.evaluate(&[0.6]), 0.0);
}

#[test]
fn non_affine_sensor_falls_back_to_quadrature() {
    let model = make_benes_model(BenesModelParams { alpha: 1.0, beta: 0.0, sigma: 1.0, h1: 0.0, h2: 0.5 }).unwrap();
    let lik = Likelihood::new(model, vec![1.0], 0.1).unwrap();
    let prior = trained_prior();
    let key = Streams::new(1).key(Purpose::Normalizer, 1, 0);
    let est = estimate_normalizer(prior, &lik, NormalizerMethod::default(), NormalizerScaling::Density, key).unwrap();
    assert_eq!(est.method, NormalizerMethod::Quadrature { points: 2001 });
    assert_eq!(est.acceptance_rate, 1.0);
}
