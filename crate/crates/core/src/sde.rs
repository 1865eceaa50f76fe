//! Euler-Maruyama simulation of the signal/observation pair and of the
//! auxiliary diffusion `dX = b(X) dt + sigma(X) dW` used by the prediction
//! step, plus the exact Gaussian sampler for the linear case.

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_psd, expm};
use crate::model::{FilterModel, LinearModelParams};
use crate::rng::{Purpose, StreamKey, Streams};

/// Observation times `t_0 < ... < t_N` with `J` Euler substeps per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    substeps: usize,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, substeps: usize) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Config("time grid needs at least two points".into()));
        }
        if substeps == 0 {
            return Err(Error::Config("substeps per interval must be positive".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("time grid must be strictly increasing".into()));
        }
        Ok(Self { times, substeps })
    }

    /// `t_n = t0 + n dt` for `n = 0..=steps`.
    pub fn uniform(t0: f64, dt: f64, steps: usize, substeps: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        Self::new(
            (0..=steps).map(|n| t0 + dt * n as f64).collect(),
            substeps,
        )
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// `(t_{n-1}, t_n)` for `n >= 1`.
    pub fn interval(&self, n: usize) -> (f64, f64) {
        (self.times[n - 1], self.times[n])
    }

    pub fn with_substeps(&self, substeps: usize) -> Result<Self> {
        Self::new(self.times.clone(), substeps)
    }
}

/// Signal values at the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    pub times: Vec<f64>,
    /// `(N + 1) x d`
    pub values: Array2<f64>,
}

/// Observation process sampled at the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    pub times: Vec<f64>,
    /// `(N + 1) x m`; row 0 is `y0`.
    pub values: Array2<f64>,
    pub seed: u64,
}

impl ObservationPath {
    /// Scaled increment `z_n = (Y_{t_n} - Y_{t_{n-1}}) / (t_n - t_{n-1})`.
    pub fn scaled_increment(&self, n: usize) -> Array1<f64> {
        let dt = self.times[n] - self.times[n - 1];
        (&self.values.row(n) - &self.values.row(n - 1)) / dt
    }
}

pub fn simulate_signal_observation(
    model: &FilterModel,
    grid: &TimeGrid,
    x0: &[f64],
    y0: &[f64],
    streams: &Streams,
) -> Result<(SignalPath, ObservationPath)> {
    let (d, m, p) = (model.dim_signal(), model.dim_obs(), model.dim_noise());
    if x0.len() != d || y0.len() != m {
        return Err(Error::Config(format!(
            "initial state has dimension {} (expected {d}) and initial observation {} (expected {m})",
            x0.len(),
            y0.len()
        )));
    }
    let n_steps = grid.steps();
    let mut xs = Array2::zeros((n_steps + 1, d));
    let mut ys = Array2::zeros((n_steps + 1, m));
    xs.row_mut(0).assign(&Array1::from(x0.to_vec()));
    ys.row_mut(0).assign(&Array1::from(y0.to_vec()));

    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut f = vec![0.0; d];
    let mut sig = vec![0.0; d * p];
    let mut h = vec![0.0; m];
    let mut dv = vec![0.0; p];
    for n in 1..=n_steps {
        let (t_prev, t_next) = grid.interval(n);
        let ds = (t_next - t_prev) / grid.substeps() as f64;
        let sq = ds.sqrt();
        let mut v_rng = streams.rng(Purpose::SignalNoise, n as u64, 0, 0);
        let mut w_rng = streams.rng(Purpose::ObservationNoise, n as u64, 0, 0);
        for _ in 0..grid.substeps() {
            model.drift(&x, &mut f);
            model.dispersion(&x, &mut sig);
            model.sensor(&x, &mut h);
            for (yi, hi) in y.iter_mut().zip(&h) {
                let dw: f64 = w_rng.sample(StandardNormal);
                *yi += hi * ds + sq * dw;
            }
            for v in dv.iter_mut() {
                *v = sq * v_rng.sample::<f64, _>(StandardNormal);
            }
            for i in 0..d {
                let noise: f64 = (0..p).map(|k| sig[i * p + k] * dv[k]).sum();
                x[i] += f[i] * ds + noise;
            }
        }
        xs.row_mut(n).assign(&Array1::from(x.clone()));
        ys.row_mut(n).assign(&Array1::from(y.clone()));
    }
    Ok((
        SignalPath {
            times: grid.times().to_vec(),
            values: xs,
        },
        ObservationPath {
            times: grid.times().to_vec(),
            values: ys,
            seed: streams.root(),
        },
    ))
}

/// A batch of auxiliary-diffusion paths with uniform starting points.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    /// `N_b x d` starting points, uniform on the domain.
    pub starts: Array2<f64>,
    /// `N_b x (J + 1) x d`; slice `[i, 0, ..]` equals `starts[i, ..]`.
    pub trajectories: Array3<f64>,
    /// Left-endpoint sums `sum_j k(X_{tau_j}) (tau_{j+1} - tau_j)` with `k = -r`.
    /// The Feynman-Kac weight of path `i` is `exp(-potential_integrals[i])`.
    pub potential_integrals: Array1<f64>,
}

impl PathBatch {
    pub fn len(&self) -> usize {
        self.starts.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `N_b x d` terminal points `X_T`.
    pub fn terminals(&self) -> Array2<f64> {
        let last = self.trajectories.dim().1 - 1;
        self.trajectories.slice(s![.., last, ..]).to_owned()
    }

    pub fn weights(&self) -> Array1<f64> {
        self.potential_integrals.mapv(|v| (-v).exp())
    }
}

/// Simulates one auxiliary path from `start` over `duration` in `substeps`
/// Euler steps, writing the visited points into `path` (`(J + 1) * d`
/// entries) when given. Returns the left-endpoint integral of `k = -r`.
pub(crate) fn auxiliary_path<R: Rng + ?Sized>(
    model: &FilterModel,
    start: &[f64],
    duration: f64,
    substeps: usize,
    rng: &mut R,
    mut path: Option<&mut [f64]>,
    terminal: &mut [f64],
) -> f64 {
    let d = model.dim_signal();
    let dt = duration / substeps as f64;
    let sq = dt.sqrt();
    let mut integral = 0.0;
    if let Some(p) = path.as_deref_mut() {
        p[..d].copy_from_slice(start);
    }
    if d == 1 && model.dim_noise() == 1 {
        let mut sig = [0.0];
        model.dispersion(start, &mut sig);
        let sig = sig[0];
        let mut x = start[0];
        for j in 0..substeps {
            integral += model.kill_rate_1d(x) * dt;
            let dw: f64 = rng.sample(StandardNormal);
            x += model.aux_drift_1d(x) * dt + sig * sq * dw;
            if let Some(p) = path.as_deref_mut() {
                p[j + 1] = x;
            }
        }
        terminal[0] = x;
        return integral;
    }
    let p_dim = model.dim_noise();
    let mut x = start.to_vec();
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * p_dim];
    let mut dw = vec![0.0; p_dim];
    for j in 0..substeps {
        integral += model.kill_rate(&x) * dt;
        model.aux_drift(&x, &mut b);
        model.dispersion(&x, &mut sig);
        for w in dw.iter_mut() {
            *w = sq * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..d {
            let noise: f64 = (0..p_dim).map(|k| sig[i * p_dim + k] * dw[k]).sum();
            x[i] += b[i] * dt + noise;
        }
        if let Some(p) = path.as_deref_mut() {
            p[(j + 1) * d..(j + 2) * d].copy_from_slice(&x);
        }
    }
    terminal.copy_from_slice(&x);
    integral
}

/// Draws `batch_size` auxiliary paths over `[t_start, t_end]`. Path `i`
/// (start and Brownian increments) uses generator `key.rng(i)`.
pub fn sample_auxiliary_batch(
    model: &FilterModel,
    domain: &Domain,
    (t_start, t_end): (f64, f64),
    substeps: usize,
    batch_size: usize,
    key: StreamKey,
) -> Result<PathBatch> {
    if !(t_end > t_start) {
        return Err(Error::InvalidInput(format!(
            "auxiliary interval must satisfy t_end > t_start, got [{t_start}, {t_end}]"
        )));
    }
    if substeps == 0 || batch_size == 0 {
        return Err(Error::InvalidInput(
            "substeps and batch size must be positive".into(),
        ));
    }
    let d = model.dim_signal();
    if domain.dim() != d {
        return Err(Error::InvalidInput(format!(
            "domain dimension {} does not match model dimension {d}",
            domain.dim()
        )));
    }
    let width = (substeps + 1) * d;
    let rows: Vec<(Vec<f64>, f64)> = (0..batch_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.rng(i as u64);
            let mut start = vec![0.0; d];
            domain.sample_uniform(&mut rng, &mut start);
            let mut path = vec![0.0; width];
            let mut terminal = vec![0.0; d];
            let integral = auxiliary_path(
                model,
                &start,
                t_end - t_start,
                substeps,
                &mut rng,
                Some(&mut path),
                &mut terminal,
            );
            (path, integral)
        })
        .collect();
    let mut trajectories = Array3::zeros((batch_size, substeps + 1, d));
    let mut integrals = Array1::zeros(batch_size);
    for (i, (path, integral)) in rows.into_iter().enumerate() {
        trajectories
            .slice_mut(s![i, .., ..])
            .assign(&ArrayView2::from_shape((substeps + 1, d), &path).expect("path shape"));
        integrals[i] = integral;
    }
    let starts = trajectories.slice(s![.., 0, ..]).to_owned();
    Ok(PathBatch {
        starts,
        trajectories,
        potential_integrals: integrals,
    })
}

/// Exact Gaussian transition of the linear auxiliary diffusion
/// `dX = -(M X + eta) dt + Sigma dW` over time `t`: `(transition, shift, covariance)`
/// such that `X_t ~ N(transition X_0 + shift, covariance)`.
pub fn ou_transition(params: &LinearModelParams, t: f64) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let d = params.dim_signal();
    let drift = -&params.m;

    // Shift: exp([[A, -eta], [0, 0]] t) has top-right block int_0^t e^{Au} du (-eta).
    let mut aug = Array2::zeros((d + 1, d + 1));
    aug.slice_mut(s![..d, ..d]).assign(&(&drift * t));
    aug.slice_mut(s![..d, d]).assign(&(-&params.eta * t));
    let e = expm(&aug);
    let shift = e.slice(s![..d, d]).to_owned();
    let transition = e.slice(s![..d, ..d]).to_owned();

    // Covariance (Van Loan): exp([[-A, Q], [0, A^T]] t) = [[., G], [0, Phi^T]], cov = Phi G.
    let q = params.sigma.dot(&params.sigma.t());
    let mut vl = Array2::zeros((2 * d, 2 * d));
    vl.slice_mut(s![..d, ..d]).assign(&(-&drift * t));
    vl.slice_mut(s![..d, d..]).assign(&(&q * t));
    vl.slice_mut(s![d.., d..]).assign(&(&drift.t() * t));
    let ev = expm(&vl);
    let phi = ev.slice(s![d.., d..]).t().to_owned();
    let mut cov = phi.dot(&ev.slice(s![..d, d..]));
    // Symmetrize rounding noise.
    let sym = 0.5 * (&cov + &cov.t());
    cov.assign(&sym);
    (transition, shift, cov)
}

/// Samples `X_t` given `X_0 = starts[i]` exactly in distribution for the
/// linear model. Row `i` uses generator `key.rng(i)`.
pub fn sample_ou_explicit(
    params: &LinearModelParams,
    starts: ArrayView2<f64>,
    t: f64,
    key: StreamKey,
) -> Result<Array2<f64>> {
    let d = params.dim_signal();
    if starts.ncols() != d {
        return Err(Error::InvalidInput(format!(
            "start points have dimension {}, model has {d}",
            starts.ncols()
        )));
    }
    let (transition, shift, cov) = ou_transition(params, t);
    let chol = cholesky_psd(&cov)?;
    let mut out = starts.dot(&transition.t()) + &shift;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut rng = key.rng(i as u64);
        let z: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        row += &chol.dot(&z);
    }
    Ok(out)
}
