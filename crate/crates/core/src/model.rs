//! Filtering problems: signal coefficients, sensor, and the derived
//! auxiliary drift and zero-order potential.
//!
//! A signal `dX = f(X) dt + sigma(X) dV` observed through
//! `dY = h(X) dt + dW` has a Fokker-Planck operator that can be rewritten as
//! the generator of an auxiliary diffusion plus a zero-order term:
//!
//! ```text
//! A* q = Tr(a Hess q) + <b, grad q> + r q
//! b    = 2 vecdiv(a) - f
//! r    = div(vecdiv(a) - f)
//! a    = sigma sigma^T / 2
//! ```
//!
//! Both built-in families have constant dispersion, so `vecdiv(a) = 0`,
//! `b = -f` and `r = -div f`. These are evaluated in closed form.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Coefficients of the linear (Kalman) filter:
/// `f(x) = M x + eta`, `sigma(x) = Sigma`, `h(x) = H x + gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelParams {
    pub m: Array2<f64>,
    pub eta: Array1<f64>,
    pub sigma: Array2<f64>,
    pub h: Array2<f64>,
    pub gamma: Array1<f64>,
}

impl LinearModelParams {
    /// One-dimensional signal and observation.
    pub fn scalar(m: f64, eta: f64, sigma: f64, h: f64, gamma: f64) -> Self {
        Self {
            m: Array2::from_elem((1, 1), m),
            eta: Array1::from_elem(1, eta),
            sigma: Array2::from_elem((1, 1), sigma),
            h: Array2::from_elem((1, 1), h),
            gamma: Array1::from_elem(1, gamma),
        }
    }

    pub fn dim_signal(&self) -> usize {
        self.m.nrows()
    }

    fn validate(&self) -> Result<()> {
        let d = self.m.nrows();
        let mismatch = |what: &str, got: String| {
            Err(Error::Config(format!(
                "linear model: {what} has shape {got}, incompatible with d = {d}"
            )))
        };
        if d == 0 || self.m.ncols() != d {
            return mismatch("M", format!("{:?}", self.m.dim()));
        }
        if self.eta.len() != d {
            return mismatch("eta", format!("{}", self.eta.len()));
        }
        if self.sigma.nrows() != d || self.sigma.ncols() == 0 {
            return mismatch("Sigma", format!("{:?}", self.sigma.dim()));
        }
        if self.h.ncols() != d || self.h.nrows() == 0 {
            return mismatch("H", format!("{:?}", self.h.dim()));
        }
        if self.gamma.len() != self.h.nrows() {
            return mismatch("gamma", format!("{}", self.gamma.len()));
        }
        let all = self
            .m
            .iter()
            .chain(&self.eta)
            .chain(&self.sigma)
            .chain(&self.h)
            .chain(&self.gamma);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("linear model: non-finite coefficient".into()));
        }
        Ok(())
    }
}

/// One-dimensional Benes filter:
/// `f(x) = alpha sigma tanh(beta + alpha x / sigma)`, `h(x) = h1 x + h2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenesModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub h1: f64,
    pub h2: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
enum Family {
    Linear(LinearModelParams),
    Benes(BenesModelParams),
}

/// Immutable description of one filtering problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    family: Family,
    dim_signal: usize,
    dim_obs: usize,
    dim_noise: usize,
}

pub fn make_linear_model(params: LinearModelParams) -> Result<FilterModel> {
    params.validate()?;
    Ok(FilterModel {
        dim_signal: params.m.nrows(),
        dim_obs: params.h.nrows(),
        dim_noise: params.sigma.ncols(),
        family: Family::Linear(params),
    })
}

pub fn make_benes_model(params: BenesModelParams) -> Result<FilterModel> {
    let BenesModelParams {
        alpha,
        beta,
        sigma,
        h1,
        h2,
    } = params;
    if sigma == 0.0 {
        return Err(Error::Config("Benes model: sigma must be non-zero".into()));
    }
    if ![alpha, beta, sigma, h1, h2].iter().all(|v| v.is_finite()) {
        return Err(Error::Config("Benes model: non-finite coefficient".into()));
    }
    Ok(FilterModel {
        family: Family::Benes(params),
        dim_signal: 1,
        dim_obs: 1,
        dim_noise: 1,
    })
}

fn sech2(u: f64) -> f64 {
    let c = u.cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}

impl FilterModel {
    pub fn dim_signal(&self) -> usize {
        self.dim_signal
    }

    pub fn dim_obs(&self) -> usize {
        self.dim_obs
    }

    /// Number of driving Brownian motions (columns of sigma).
    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn linear_params(&self) -> Option<&LinearModelParams> {
        match &self.family {
            Family::Linear(p) => Some(p),
            Family::Benes(_) => None,
        }
    }

    pub fn benes_params(&self) -> Option<&BenesModelParams> {
        match &self.family {
            Family::Benes(p) => Some(p),
            Family::Linear(_) => None,
        }
    }

    /// Signal drift `f(x)`.
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Linear(p) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = p.eta[i] + (0..self.dim_signal).map(|j| p.m[[i, j]] * x[j]).sum::<f64>();
                }
            }
            Family::Benes(p) => {
                out[0] = p.alpha * p.sigma * (p.beta + p.alpha * x[0] / p.sigma).tanh();
            }
        }
    }

    /// Dispersion `sigma(x)`, `d x p`, written row-major into `out`.
    pub fn dispersion(&self, _x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Linear(p) => {
                for (o, s) in out.iter_mut().zip(p.sigma.iter()) {
                    *o = *s;
                }
            }
            Family::Benes(p) => out[0] = p.sigma,
        }
    }

    /// Constant dispersion matrix, when the model has one (both built-in families do).
    pub fn constant_dispersion(&self) -> Option<Array2<f64>> {
        match &self.family {
            Family::Linear(p) => Some(p.sigma.clone()),
            Family::Benes(p) => Some(Array2::from_elem((1, 1), p.sigma)),
        }
    }

    /// Diffusion matrix `a(x) = sigma(x) sigma(x)^T / 2`.
    pub fn diffusion(&self, x: &[f64]) -> Array2<f64> {
        let mut s = vec![0.0; self.dim_signal * self.dim_noise];
        self.dispersion(x, &mut s);
        let s = Array2::from_shape_vec((self.dim_signal, self.dim_noise), s)
            .expect("dispersion shape");
        0.5 * s.dot(&s.t())
    }

    /// Sensor `h(x)`.
    pub fn sensor(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Linear(p) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = p.gamma[i]
                        + (0..self.dim_signal).map(|j| p.h[[i, j]] * x[j]).sum::<f64>();
                }
            }
            Family::Benes(p) => out[0] = p.h1 * x[0] + p.h2,
        }
    }

    /// `(h1, h2)` when `d = m = 1` and the sensor is `h(x) = h1 x + h2`.
    pub fn affine_sensor_1d(&self) -> Option<(f64, f64)> {
        if self.dim_signal != 1 || self.dim_obs != 1 {
            return None;
        }
        match &self.family {
            Family::Linear(p) => Some((p.h[[0, 0]], p.gamma[0])),
            Family::Benes(p) => Some((p.h1, p.h2)),
        }
    }

    /// Auxiliary drift `b(x) = 2 vecdiv(a)(x) - f(x)`.
    pub fn aux_drift(&self, x: &[f64], out: &mut [f64]) {
        // Constant dispersion in both families: vecdiv(a) = 0.
        self.drift(x, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }

    /// Zero-order potential `r(x) = div(vecdiv(a) - f)(x)`.
    pub fn potential(&self, x: &[f64]) -> f64 {
        match &self.family {
            Family::Linear(p) => -(0..self.dim_signal).map(|i| p.m[[i, i]]).sum::<f64>(),
            Family::Benes(p) => -p.alpha * p.alpha * sech2(p.beta + p.alpha * x[0] / p.sigma),
        }
    }

    /// Killing rate `k = -r` used in the Feynman-Kac weight `exp(-int k)`.
    pub fn kill_rate(&self, x: &[f64]) -> f64 {
        -self.potential(x)
    }

    /// `b(x)` for `d = 1`.
    #[inline]
    pub fn aux_drift_1d(&self, x: f64) -> f64 {
        match &self.family {
            Family::Linear(p) => -(p.m[[0, 0]] * x + p.eta[0]),
            Family::Benes(p) => -p.alpha * p.sigma * (p.beta + p.alpha * x / p.sigma).tanh(),
        }
    }

    /// `k(x) = -r(x)` for `d = 1`.
    #[inline]
    pub fn kill_rate_1d(&self, x: f64) -> f64 {
        match &self.family {
            Family::Linear(p) => p.m[[0, 0]],
            Family::Benes(p) => p.alpha * p.alpha * sech2(p.beta + p.alpha * x / p.sigma),
        }
    }
}
