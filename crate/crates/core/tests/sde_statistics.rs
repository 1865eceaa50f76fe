use ndarray::Array2;
use splitting_filter::sde::{ou_transition, sample_auxiliary_batch, sample_ou_explicit, simulate_signal_observation, TimeGrid};
use splitting_filter::{make_linear_model, Domain, LinearModelParams, Purpose, Streams};

fn case1() -> LinearModelParams {
    LinearModelParams::scalar(-1.0, 0.0, 0.1, 90.0, 0.0)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

fn euler_terminals(params: &LinearModelParams, start: f64, t: f64, substeps: usize, n: usize, seed: u64) -> Vec<f64> {
    let model = make_linear_model(params.clone()).unwrap();
    // A degenerate domain pins every start to `start`.
    let domain = Domain::interval(start - 1e-12, start + 1e-12).unwrap();
    let key = Streams::new(seed).key(Purpose::Test, 0, 0);
    let batch = sample_auxiliary_batch(&model, &domain, (0.0, t), substeps, n, key).unwrap();
    batch.terminals().column(0).to_vec()
}

fn explicit_terminals(params: &LinearModelParams, start: f64, t: f64, n: usize, seed: u64) -> Vec<f64> {
    let starts = Array2::from_elem((n, 1), start);
    let key = Streams::new(seed).key(Purpose::Test, 1, 0);
    sample_ou_explicit(params, starts.view(), t, key).unwrap().column(0).to_vec()
}

#[test]
fn euler_moments_from_origin_match_discrete_law() {
    let n = 100_000;
    let x = euler_terminals(&case1(), 0.0, 0.01, 10, n, 3);
    let (m, v) = mean_var(&x);
    // Euler recursion X <- (1 + tau) X + 0.1 sqrt(tau) Z over ten steps.
    let tau: f64 = 0.001;
    let exact_v: f64 = (0..10).map(|j| 0.01 * tau * (1.0 + tau).powi(2 * j)).sum();
    assert!((exact_v - 1e-4).abs() < 1e-6);
    let se_m = (exact_v / n as f64).sqrt();
    let se_v = exact_v * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!(m.abs() < 3.0 * se_m, "mean {m}, se {se_m}");
    assert!((v - exact_v).abs() < 3.0 * se_v, "var {v}, expected {exact_v}, se {se_v}");
}

#[test]
fn explicit_sampler_matches_closed_form_variance() {
    let n = 100_000;
    let x = explicit_terminals(&case1(), 0.0, 0.01, n, 5);
    let (m, v) = mean_var(&x);
    let exact_v = 0.01 * (0.02f64.exp() - 1.0) / 2.0;
    assert!(m.abs() < 3.0 * (exact_v / n as f64).sqrt());
    assert!((v - exact_v).abs() < 3.0 * exact_v * (2.0 / n as f64).sqrt());
}

#[test]
fn explicit_and_euler_agree_in_distribution() {
    // Case-two coefficients exercise the eta shift of the explicit sampler.
    let params = LinearModelParams::scalar(1.0, -1.0, 0.1, 90.0, 0.0);
    let mut em = euler_terminals(&params, 0.1, 0.01, 100, 10_000, 11);
    let mut ex = explicit_terminals(&params, 0.1, 0.01, 10_000, 12);
    let p = ks_two_sample(&mut em, &mut ex);
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn ks_detects_a_shifted_law() {
    let params = LinearModelParams::scalar(1.0, -1.0, 0.1, 90.0, 0.0);
    let mut em = euler_terminals(&params, 0.1, 0.01, 100, 10_000, 11);
    let mut ex = explicit_terminals(&params, 0.105, 0.01, 10_000, 12);
    assert!(ks_two_sample(&mut em, &mut ex) < 1e-6);
}

#[test]
fn euler_converges_to_exact_law_as_substeps_grow() {
    let params = LinearModelParams::scalar(1.0, -1.0, 0.3, 1.0, 0.0);
    let t = 0.5;
    let start = 0.2;
    let (phi, shift, cov) = ou_transition(&params, t);
    let exact_m = phi[[0, 0]] * start + shift[0];
    let exact_v = cov[[0, 0]];
    let n = 100_000;
    for (j, substeps) in [10usize, 100].into_iter().enumerate() {
        let x = euler_terminals(&params, start, t, substeps, n, 20 + j as u64);
        let (m, v) = mean_var(&x);
        // Monte-Carlo band plus the first-order Euler bias.
        let bias = 2.0 * t / substeps as f64;
        let tol_m = 3.0 * (exact_v / n as f64).sqrt() + bias * (exact_m - 1.0).abs();
        let tol_v = 3.0 * exact_v * (2.0 / n as f64).sqrt() + bias * exact_v;
        assert!((m - exact_m).abs() < tol_m, "J={substeps}: mean {m} vs {exact_m}");
        assert!((v - exact_v).abs() < tol_v, "J={substeps}: var {v} vs {exact_v}");
    }
}

#[test]
fn case_one_weights_are_exp_dt_for_every_path() {
    let model = make_linear_model(case1()).unwrap();
    let domain = Domain::interval(-0.5, 0.5).unwrap();
    let key = Streams::new(1).key(Purpose::Test, 0, 0);
    let batch = sample_auxiliary_batch(&model, &domain, (0.3, 0.31), 10, 500, key).unwrap();
    for (i, w) in batch.weights().iter().enumerate() {
        assert!((w - 0.01f64.exp()).abs() < 1e-14);
        let x0 = batch.starts[[i, 0]];
        assert!((-0.5..=0.5).contains(&x0));
        assert_eq!(batch.trajectories[[i, 0, 0]], x0);
    }
}

#[test]
fn identical_keys_give_identical_batches() {
    let model = make_linear_model(case1()).unwrap();
    let domain = Domain::interval(-0.5, 0.5).unwrap();
    let draw = || {
        let key = Streams::new(42).key(Purpose::TrainingPaths, 3, 17);
        sample_auxiliary_batch(&model, &domain, (0.0, 0.01), 10, 64, key).unwrap()
    };
    assert_eq!(draw(), draw());
}

#[test]
fn case_one_signal_usually_stays_in_the_domain() {
    let model = make_linear_model(case1()).unwrap();
    let grid = TimeGrid::uniform(0.0, 0.01, 60, 10).unwrap();
    let inside = (0..1000u64)
        .filter(|&seed| {
            let (signal, _) = simulate_signal_observation(&model, &grid, &[0.0], &[0.0], &Streams::new(seed)).unwrap();
            signal.values.iter().all(|x| x.abs() <= 0.5)
        })
        .count();
    assert!(inside >= 950, "{inside} of 1000 paths stayed inside");
}
