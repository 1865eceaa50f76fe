use ndarray::{Array1, Array2};
use proptest::prelude::*;
use splitting_filter::{make_benes_model, make_linear_model, BenesModelParams, FilterModel, LinearModelParams};

const H: f64 = 1e-5;

fn drift(model: &FilterModel, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.dim_signal()];
    model.drift(x, &mut out);
    out
}

fn shifted(x: &[f64], j: usize, by: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[j] += by;
    y
}

/// Central-difference `vecdiv(a)_i = sum_j d a_ij / d x_j`.
fn fd_vecdiv(model: &FilterModel, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let ap = model.diffusion(&shifted(x, j, H));
                    let am = model.diffusion(&shifted(x, j, -H));
                    (ap[[i, j]] - am[[i, j]]) / (2.0 * H)
                })
                .sum()
        })
        .collect()
}

/// `b = 2 vecdiv(a) - f` and `r = div(vecdiv(a) - f)` built from f and sigma alone.
fn generic_b_r(model: &FilterModel, x: &[f64]) -> (Vec<f64>, f64) {
    let d = x.len();
    let g = |y: &[f64]| -> Vec<f64> {
        fd_vecdiv(model, y)
            .iter()
            .zip(drift(model, y))
            .map(|(v, f)| v - f)
            .collect()
    };
    let b = fd_vecdiv(model, x)
        .iter()
        .zip(drift(model, x))
        .map(|(v, f)| 2.0 * v - f)
        .collect();
    let r = (0..d)
        .map(|j| (g(&shifted(x, j, H))[j] - g(&shifted(x, j, -H))[j]) / (2.0 * H))
        .sum();
    (b, r)
}

fn fd_divergence(model: &FilterModel, x: &[f64]) -> f64 {
    (0..x.len())
        .map(|j| (drift(model, &shifted(x, j, H))[j] - drift(model, &shifted(x, j, -H))[j]) / (2.0 * H))
        .sum()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

fn check_against_generic(model: &FilterModel, x: &[f64]) -> Result<(), TestCaseError> {
    let (b_fd, r_fd) = generic_b_r(model, x);
    let mut b = vec![0.0; x.len()];
    model.aux_drift(x, &mut b);
    for (u, v) in b.iter().zip(&b_fd) {
        prop_assert!(close(*u, *v), "b = {u}, finite differences give {v}");
    }
    let r = model.potential(x);
    prop_assert!(close(r, r_fd), "r = {r}, finite differences give {r_fd}");
    let div = fd_divergence(model, x);
    prop_assert!(close(-r, div), "-r = {}, div f = {div}", -r);
    Ok(())
}

fn linear_2d(m: [f64; 4], eta: [f64; 2], s: [f64; 4]) -> LinearModelParams {
    LinearModelParams {
        m: Array2::from_shape_vec((2, 2), m.to_vec()).unwrap(),
        eta: Array1::from_vec(eta.to_vec()),
        sigma: Array2::from_shape_vec((2, 2), s.to_vec()).unwrap(),
        h: Array2::eye(2),
        gamma: Array1::zeros(2),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_scalar_matches_generic_construction(
        m in -3.0..3.0f64, eta in -2.0..2.0f64, sigma in 0.01..2.0f64,
        xs in prop::collection::vec(-2.0..2.0f64, 10),
    ) {
        let model = make_linear_model(LinearModelParams::scalar(m, eta, sigma, 1.0, 0.0)).unwrap();
        for x in xs {
            check_against_generic(&model, &[x])?;
        }
    }

    #[test]
    fn linear_planar_matches_generic_construction(
        m in prop::array::uniform4(-2.0..2.0f64),
        eta in prop::array::uniform2(-1.0..1.0f64),
        s in prop::array::uniform4(-1.0..1.0f64),
        x in prop::array::uniform2(-2.0..2.0f64),
    ) {
        let params = linear_2d(m, eta, s);
        let model = make_linear_model(params.clone()).unwrap();
        check_against_generic(&model, &x)?;
        prop_assert!(close(model.potential(&x), -(m[0] + m[3])));
    }

    #[test]
    fn benes_matches_generic_construction(
        alpha in -4.0..4.0f64, beta in -1.0..1.0f64, sigma in 0.2..2.0f64,
        xs in prop::collection::vec(-3.0..3.0f64, 10),
    ) {
        let model = make_benes_model(BenesModelParams { alpha, beta, sigma, h1: 1.0, h2: 0.0 }).unwrap();
        for x in xs {
            check_against_generic(&model, &[x])?;
            let u = beta + alpha * x / sigma;
            let f = drift(&model, &[x])[0];
            prop_assert!(close(f, alpha * sigma * u.tanh()));
            prop_assert!(close(model.potential(&[x]), -alpha * alpha / u.cosh().powi(2)));
        }
    }

    #[test]
    fn diffusion_is_symmetric_psd(
        s in prop::array::uniform4(-2.0..2.0f64),
        x in prop::array::uniform2(-2.0..2.0f64),
        v in prop::array::uniform2(-1.0..1.0f64),
    ) {
        let model = make_linear_model(linear_2d([0.0; 4], [0.0; 2], s)).unwrap();
        let a = model.diffusion(&x);
        prop_assert!((a[[0, 1]] - a[[1, 0]]).abs() < 1e-15);
        let quad = v[0] * (a[[0, 0]] * v[0] + a[[0, 1]] * v[1]) + v[1] * (a[[1, 0]] * v[0] + a[[1, 1]] * v[1]);
        prop_assert!(quad >= -1e-14);
    }
}

#[test]
fn benes_potential_decays_in_the_tails() {
    let model = make_benes_model(BenesModelParams { alpha: 3.0, beta: 0.0, sigma: 0.5, h1: 3.0, h2: 0.0 }).unwrap();
    assert_eq!(model.potential(&[0.0]), -9.0);
    assert!(model.potential(&[5.0]).abs() < 1e-20);
    assert!(model.potential(&[-5.0]).abs() < 1e-20);
}
