//! Independent oracles: the Kalman-Bucy filter for linear models, a
//! pointwise Feynman-Kac Monte-Carlo solver for the prediction PDE, and a
//! finite-difference splitting-up filter on a uniform grid.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::density::Density;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::filter::trapezoid;
use crate::linalg::cholesky_psd;
use crate::model::{FilterModel, LinearModelParams};
use crate::rng::StreamKey;
use crate::sde::{auxiliary_path, ObservationPath, TimeGrid};

/// Gaussian filter state `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl KalmanState {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Self {
        Self { mean, covariance }
    }

    pub fn scalar(mean: f64, variance: f64) -> Self {
        Self::new(Array1::from(vec![mean]), Array2::from_elem((1, 1), variance))
    }
}

/// Propagates the continuous-discrete Kalman-Bucy equations over one
/// observation interval of length `dt` in `substeps` Euler steps,
///
/// ```text
/// dP = (M P + P M' + Sigma Sigma' - P H' H P) ds
/// dm = (M m + eta) ds + P H' (dY_s - (H m + gamma) ds)
/// ```
///
/// with the interval increment `dy` spread evenly over the substeps.
/// `t_end` only labels errors.
pub fn kalman_bucy_step(
    state: &KalmanState,
    params: &LinearModelParams,
    dy: &[f64],
    dt: f64,
    substeps: usize,
    t_end: f64,
) -> Result<KalmanState> {
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::InvalidInput("Kalman step needs dt > 0 and substeps > 0".into()));
    }
    if dy.len() != params.h.nrows() || state.mean.len() != params.m.nrows() {
        return Err(Error::InvalidInput("Kalman step: dimension mismatch".into()));
    }
    let ds = dt / substeps as f64;
    let dy_sub = Array1::from(dy.to_vec()) / substeps as f64;
    let ss = params.sigma.dot(&params.sigma.t());
    let mut m = state.mean.clone();
    let mut p = state.covariance.clone();
    for j in 0..substeps {
        let gain = p.dot(&params.h.t());
        let innovation = &dy_sub - &((params.h.dot(&m) + &params.gamma) * ds);
        let dm = (params.m.dot(&m) + &params.eta) * ds + gain.dot(&innovation);
        let dp = (params.m.dot(&p) + p.dot(&params.m.t()) + &ss - gain.dot(&gain.t())) * ds;
        m += &dm;
        p += &dp;
        p = (&p + &p.t()) * 0.5;
        let positive = cholesky_psd(&p)
            .map(|l| l.diag().iter().all(|v| *v > 0.0))
            .unwrap_or(false);
        if !positive {
            let time = t_end - dt + (j + 1) as f64 * ds;
            return Err(Error::CovarianceNotPositive { time });
        }
    }
    Ok(KalmanState::new(m, p))
}

/// Kalman-Bucy states at every observation time, starting from `initial`.
pub fn kalman_bucy_filter(
    params: &LinearModelParams,
    initial: KalmanState,
    observations: &ObservationPath,
    substeps: usize,
) -> Result<Vec<KalmanState>> {
    let mut states = vec![initial];
    for n in 1..observations.times.len() {
        let dt = observations.times[n] - observations.times[n - 1];
        let dy = (&observations.values.row(n) - &observations.values.row(n - 1)).to_vec();
        let next = kalman_bucy_step(
            states.last().expect("non-empty"),
            params,
            &dy,
            dt,
            substeps,
            observations.times[n],
        )?;
        states.push(next);
    }
    Ok(states)
}

/// First `n` points of the one-dimensional Sobol sequence, starting at 0.
pub fn sobol_1d(n: usize) -> Vec<f64> {
    // Direction numbers v_k = 2^-k; Gray-code ordering.
    const BITS: u32 = 52;
    let mut out = Vec::with_capacity(n);
    let mut x: u64 = 0;
    for i in 0..n {
        out.push(x as f64 / (1u64 << BITS) as f64);
        let c = (!(i as u64)).trailing_zeros();
        if c < BITS {
            x ^= 1u64 << (BITS - 1 - c);
        }
    }
    out
}

/// How evaluation points of the pointwise reference are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointLayout {
    #[default]
    Uniform,
    Sobol,
}

/// `n x 1` evaluation points on a one-dimensional domain.
pub fn reference_points(domain: &Domain, n: usize, layout: PointLayout) -> Result<Array2<f64>> {
    if domain.dim() != 1 {
        return Err(Error::InvalidInput(
            "reference points are generated for one-dimensional domains".into(),
        ));
    }
    let nodes = match layout {
        PointLayout::Uniform => domain.grid_1d(n)?,
        PointLayout::Sobol => {
            let (lo, hi) = (domain.lower()[0], domain.upper()[0]);
            sobol_1d(n).into_iter().map(|u| lo + (hi - lo) * u).collect()
        }
    };
    Ok(Array2::from_shape_vec((n, 1), nodes).expect("column of points"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkEstimate {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Plain Monte-Carlo estimate of `E[psi(X_t) exp(-int_0^t k(X_s) ds) | X_0 = x]`
/// at every row `x` of `points`. Point `i` uses `key.rng(i)`.
pub fn fk_pointwise_reference(
    model: &FilterModel,
    psi: &dyn Density,
    points: ArrayView2<f64>,
    duration: f64,
    substeps: usize,
    paths_per_point: usize,
    key: StreamKey,
) -> Result<FkEstimate> {
    if paths_per_point < 100 {
        return Err(Error::InvalidInput(format!(
            "pointwise reference needs at least 100 paths per point, got {paths_per_point}"
        )));
    }
    if !(duration > 0.0) || substeps == 0 {
        return Err(Error::InvalidInput(
            "pointwise reference needs a positive duration and substeps".into(),
        ));
    }
    let d = model.dim_signal();
    if points.ncols() != d {
        return Err(Error::InvalidInput(format!(
            "points have {} columns, model dimension is {d}",
            points.ncols()
        )));
    }
    let rows: Vec<(f64, f64)> = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let start = points.row(i).to_vec();
            let mut rng = key.rng(i as u64);
            let mut terminals = Array2::zeros((paths_per_point, d));
            let mut weights = Vec::with_capacity(paths_per_point);
            let mut terminal = vec![0.0; d];
            for k in 0..paths_per_point {
                let integral =
                    auxiliary_path(model, &start, duration, substeps, &mut rng, None, &mut terminal);
                terminals.row_mut(k).assign(&Array1::from(terminal.clone()));
                weights.push((-integral).exp());
            }
            let samples: Vec<f64> = psi
                .evaluate_batch(terminals.view())
                .into_iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .collect();
    Ok(FkEstimate {
        values: rows.iter().map(|r| r.0).collect(),
        std_errors: rows.iter().map(|r| r.1).collect(),
    })
}

/// Piecewise-linear density on a uniform grid of an interval, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    lower: f64,
    upper: f64,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(domain: &Domain, values: Vec<f64>) -> Result<Self> {
        if domain.dim() != 1 || values.len() < 2 {
            return Err(Error::InvalidInput(
                "grid densities live on intervals with at least two nodes".into(),
            ));
        }
        Ok(Self {
            lower: domain.lower()[0],
            upper: domain.upper()[0],
            values,
        })
    }

    /// Samples `density` on `points` uniform nodes of `domain`.
    pub fn sample(domain: &Domain, density: &dyn Density, points: usize) -> Result<Self> {
        let nodes = domain.grid_1d(points)?;
        let pts = Array2::from_shape_vec((points, 1), nodes).expect("column of nodes");
        Self::new(domain, density.evaluate_batch(pts.view()))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.values.len() - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        let n = self.values.len();
        (0..n)
            .map(|i| if i + 1 == n { self.upper } else { self.lower + i as f64 * h })
            .collect()
    }

    pub fn domain(&self) -> Domain {
        Domain::interval(self.lower, self.upper).expect("validated bounds")
    }

    /// Trapezoid mass.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.spacing())
    }
}

impl Density for GridDensity {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        let x = x[0];
        if !(x >= self.lower && x <= self.upper) {
            return 0.0;
        }
        let u = (x - self.lower) / self.spacing();
        let i = (u.floor() as usize).min(self.values.len() - 2);
        let w = u - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

/// Explicit finite-difference solver for the prediction equation
/// `q_t = a q_xx + b q_x + r q` with zero boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPredictor {
    spacing: f64,
    /// Per-node stencil `(west, centre, east)` coefficients of the spatial operator.
    stencil: Vec<(f64, f64, f64)>,
    /// Largest stable substep.
    max_dt: f64,
}

impl GridPredictor {
    /// Central differences where the cell Peclet number `|b| h / (2a)` is at
    /// most one, first-order upwinding elsewhere.
    pub fn new(model: &FilterModel, nodes: &[f64]) -> Result<Self> {
        if model.dim_signal() != 1 {
            return Err(Error::InvalidInput("the grid solver is one-dimensional".into()));
        }
        let h = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
        let mut stencil = Vec::with_capacity(nodes.len());
        let mut rate: f64 = 0.0;
        for &x in nodes {
            let a = model.diffusion(&[x])[[0, 0]];
            let b = model.aux_drift_1d(x);
            let r = -model.kill_rate_1d(x);
            let diff = a / (h * h);
            let (west, east, adv_rate) = if b.abs() * h <= 2.0 * a {
                (diff - b / (2.0 * h), diff + b / (2.0 * h), 0.0)
            } else if b > 0.0 {
                (diff, diff + b / h, b / h)
            } else {
                (diff - b / h, diff, -b / h)
            };
            let centre = -(west + east) + r;
            stencil.push((west, centre, east));
            rate = rate.max(2.0 * diff + adv_rate + r.abs());
        }
        let max_dt = if rate > 0.0 { 0.9 / rate } else { f64::INFINITY };
        Ok(Self {
            spacing: h,
            stencil,
            max_dt,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Smallest substep count that keeps the scheme stable over `duration`.
    pub fn stable_substeps(&self, duration: f64) -> usize {
        if self.max_dt.is_infinite() {
            1
        } else {
            ((duration / self.max_dt).ceil() as usize).max(1)
        }
    }

    /// Advances `values` by `duration` in `substeps` explicit Euler steps.
    pub fn advance(&self, values: &mut [f64], duration: f64, substeps: usize) -> Result<()> {
        let needed = self.stable_substeps(duration);
        if substeps < needed {
            return Err(Error::Cfl(format!(
                "{substeps} substeps over {duration} are unstable at spacing {}; use at least {needed}",
                self.spacing
            )));
        }
        let dt = duration / substeps as f64;
        let n = values.len();
        let mut next = vec![0.0; n];
        for _ in 0..substeps {
            for i in 1..n - 1 {
                let (w, c, e) = self.stencil[i];
                next[i] = values[i] + dt * (w * values[i - 1] + c * values[i] + e * values[i + 1]);
            }
            next[0] = 0.0;
            next[n - 1] = 0.0;
            values.copy_from_slice(&next);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFilterConfig {
    pub points: usize,
    /// Explicit substeps per observation interval; `None` picks the stable minimum.
    pub substeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFilterRun {
    /// Predicted densities for steps `1..=N`.
    pub priors: Vec<GridDensity>,
    /// Posteriors for steps `1..=N`.
    pub posteriors: Vec<GridDensity>,
    pub substeps: usize,
}

/// Multiplies by the likelihood of the scaled increment `z` and renormalizes.
fn correct(
    model: &FilterModel,
    nodes: &[f64],
    values: &mut [f64],
    z: &[f64],
    dt: f64,
    spacing: f64,
) -> Result<()> {
    let mut h = vec![0.0; z.len()];
    for (v, &x) in values.iter_mut().zip(nodes) {
        model.sensor(&[x], &mut h);
        let sq: f64 = z.iter().zip(&h).map(|(z, h)| (z - h) * (z - h)).sum();
        *v *= (-0.5 * dt * sq).exp();
    }
    let mass = trapezoid(values, spacing);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::DegeneratePosterior(format!(
            "grid posterior mass {mass} is not positive"
        )));
    }
    values.iter_mut().for_each(|v| *v /= mass);
    Ok(())
}

/// Classical splitting-up filter: finite-difference prediction on a uniform
/// grid with zero boundary values, pointwise likelihood correction and
/// trapezoid renormalization.
pub fn grid_splitting_filter(
    model: &FilterModel,
    domain: &Domain,
    grid: &TimeGrid,
    initial: &dyn Density,
    observations: &ObservationPath,
    config: &GridFilterConfig,
) -> Result<GridFilterRun> {
    let nodes = domain.grid_1d(config.points)?;
    let predictor = GridPredictor::new(model, &nodes)?;
    let longest = (1..=grid.steps())
        .map(|n| grid.interval(n).1 - grid.interval(n).0)
        .fold(0.0, f64::max);
    let substeps = config
        .substeps
        .unwrap_or_else(|| predictor.stable_substeps(longest));
    let mut values = GridDensity::sample(domain, initial, config.points)?.values;
    let mut priors = Vec::with_capacity(grid.steps());
    let mut posteriors = Vec::with_capacity(grid.steps());
    for n in 1..=grid.steps() {
        let (t0, t1) = grid.interval(n);
        predictor
            .advance(&mut values, t1 - t0, substeps)
            .map_err(|e| e.at_step(n))?;
        priors.push(GridDensity::new(domain, values.clone())?);
        let z = observations.scaled_increment(n).to_vec();
        correct(model, &nodes, &mut values, &z, t1 - t0, predictor.spacing())
            .map_err(|e| e.at_step(n))?;
        posteriors.push(GridDensity::new(domain, values.clone())?);
    }
    Ok(GridFilterRun {
        priors,
        posteriors,
        substeps,
    })
}

/// Splitting-up filter whose prediction is the pointwise Feynman-Kac
/// estimate on `points` uniform nodes, interpolated linearly.
/// Step `n` uses stream `key_for_step(n)`.
#[allow(clippy::too_many_arguments)]
pub fn fk_splitting_filter(
    model: &FilterModel,
    domain: &Domain,
    grid: &TimeGrid,
    initial: &dyn Density,
    observations: &ObservationPath,
    points: usize,
    paths_per_point: usize,
    substeps: usize,
    key_for_step: impl Fn(usize) -> StreamKey,
) -> Result<GridFilterRun> {
    let nodes = domain.grid_1d(points)?;
    let pts = Array2::from_shape_vec((points, 1), nodes.clone()).expect("column of nodes");
    let spacing = nodes[1] - nodes[0];
    let mut current: Box<dyn Density> = Box::new(GridDensity::sample(domain, initial, points)?);
    let mut priors = Vec::with_capacity(grid.steps());
    let mut posteriors = Vec::with_capacity(grid.steps());
    for n in 1..=grid.steps() {
        let (t0, t1) = grid.interval(n);
        let est = fk_pointwise_reference(
            model,
            current.as_ref(),
            pts.view(),
            t1 - t0,
            substeps,
            paths_per_point,
            key_for_step(n),
        )
        .map_err(|e| e.at_step(n))?;
        let mut values = est.values;
        priors.push(GridDensity::new(domain, values.clone())?);
        let z = observations.scaled_increment(n).to_vec();
        correct(model, &nodes, &mut values, &z, t1 - t0, spacing).map_err(|e| e.at_step(n))?;
        let posterior = GridDensity::new(domain, values)?;
        posteriors.push(posterior.clone());
        current = Box::new(posterior);
    }
    Ok(GridFilterRun {
        priors,
        posteriors,
        substeps,
    })
}
