//! The sequential splitting iteration: train a prior network on each
//! observation interval, reweight it by the likelihood of the observation
//! increment and normalize.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::density::{Density, GaussianDensity};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::model::FilterModel;
use crate::nn::{NetworkArchitecture, NeuralDensity};
use crate::rng::{Purpose, StreamKey, Streams};
use crate::sde::{ObservationPath, TimeGrid};
use crate::training::{train_network, TrainingConfig, TrainingReference, TrainingReport};

/// `xi_n(z) = exp(-dt/2 |z_n - h(z)|^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Likelihood {
    model: FilterModel,
    z: Vec<f64>,
    dt: f64,
}

impl Likelihood {
    pub fn new(model: FilterModel, z: Vec<f64>, dt: f64) -> Result<Self> {
        if z.len() != model.dim_obs() {
            return Err(Error::InvalidInput(format!(
                "observation increment has dimension {}, sensor has {}",
                z.len(),
                model.dim_obs()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "likelihood needs dt > 0 and a finite increment".into(),
            ));
        }
        Ok(Self { model, z, dt })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.z.len()];
        self.model.sensor(x, &mut h);
        let sq: f64 = self.z.iter().zip(&h).map(|(z, h)| (z - h) * (z - h)).sum();
        (-0.5 * self.dt * sq).exp()
    }

    /// `integral of xi_n` over the real line, `sqrt(2 pi / (dt h1^2))`, for
    /// a one-dimensional affine sensor with `h1 != 0`.
    pub fn prefactor(&self) -> Option<f64> {
        match self.model.affine_sensor_1d() {
            Some((h1, _)) if h1 != 0.0 => {
                Some((2.0 * std::f64::consts::PI / (self.dt * h1 * h1)).sqrt())
            }
            _ => None,
        }
    }
}

/// Normal distribution proportional to the likelihood in `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSampler {
    pub mean: f64,
    pub std: f64,
}

impl GaussianSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mean + self.std * rng.sample::<f64, _>(StandardNormal)
    }
}

/// `N((z_n - h2) / h1, 1 / (dt h1^2))`.
pub fn likelihood_sampler(lik: &Likelihood) -> Result<GaussianSampler> {
    match lik.model.affine_sensor_1d() {
        Some((h1, h2)) if h1 != 0.0 => Ok(GaussianSampler {
            mean: (lik.z[0] - h2) / h1,
            std: 1.0 / (lik.dt * h1 * h1).sqrt(),
        }),
        Some(_) => Err(Error::UnsupportedSensor(
            "sensor gain h1 = 0 carries no information to sample from".into(),
        )),
        None => Err(Error::UnsupportedSensor(
            "likelihood sampling needs a one-dimensional affine sensor".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizerMethod {
    /// Sample from the likelihood and average the prior.
    MonteCarlo { samples: usize },
    /// Trapezoid rule for `xi_n * prior` on a uniform grid of the domain.
    Quadrature { points: usize },
}

impl Default for NormalizerMethod {
    fn default() -> Self {
        NormalizerMethod::MonteCarlo { samples: 100_000 }
    }
}

/// Whether the likelihood prefactor is part of `C_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizerScaling {
    /// `C_n = integral of xi_n * prior`; the posterior is a probability density.
    #[default]
    Density,
    /// `C_n = mean prior(Z_j)` without the prefactor.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizerEstimate {
    pub constant: f64,
    /// Fraction of likelihood samples inside the domain; 1 for quadrature.
    pub acceptance_rate: f64,
    pub method: NormalizerMethod,
}

const CHUNK: usize = 8192;

/// Estimates `C_n`. Chunk `c` of the Monte-Carlo samples uses `key.rng(c)`.
///
/// Non-affine sensors fall back to quadrature on 2001 points.
pub fn estimate_normalizer(
    prior: &NeuralDensity,
    lik: &Likelihood,
    method: NormalizerMethod,
    scaling: NormalizerScaling,
    key: StreamKey,
) -> Result<NormalizerEstimate> {
    let method = match (method, likelihood_sampler(lik)) {
        (NormalizerMethod::MonteCarlo { .. }, Err(e)) => {
            log::warn!("{e}; normalizing by quadrature instead");
            NormalizerMethod::Quadrature { points: 2001 }
        }
        (m, _) => m,
    };
    let estimate = match method {
        NormalizerMethod::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::InvalidInput("normalizer needs at least one sample".into()));
            }
            let sampler = likelihood_sampler(lik)?;
            let chunks = samples.div_ceil(CHUNK);
            let partial: Vec<(f64, usize)> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let n = CHUNK.min(samples - c * CHUNK);
                    let mut rng = key.rng(c as u64);
                    let z: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
                    let accepted = z.iter().filter(|v| prior.domain.contains(&[**v])).count();
                    let view = ArrayView2::from_shape((n, 1), &z).expect("column of samples");
                    (prior.evaluate_batch(view).iter().sum::<f64>(), accepted)
                })
                .collect();
            let sum: f64 = partial.iter().map(|p| p.0).sum();
            let accepted: usize = partial.iter().map(|p| p.1).sum();
            let mean = sum / samples as f64;
            let constant = match scaling {
                NormalizerScaling::Density => mean * lik.prefactor().expect("affine sensor"),
                NormalizerScaling::Literal => mean,
            };
            NormalizerEstimate {
                constant,
                acceptance_rate: accepted as f64 / samples as f64,
                method,
            }
        }
        NormalizerMethod::Quadrature { points } => {
            if prior.domain.dim() != 1 {
                return Err(Error::UnsupportedSensor(
                    "quadrature normalization is implemented for one-dimensional domains".into(),
                ));
            }
            let nodes = prior.domain.grid_1d(points)?;
            let values = unnormalized_values(prior, lik, &nodes);
            let integral = trapezoid(&values, nodes[1] - nodes[0]);
            let constant = match (scaling, lik.prefactor()) {
                (NormalizerScaling::Literal, Some(p)) => integral / p,
                _ => integral,
            };
            NormalizerEstimate {
                constant,
                acceptance_rate: 1.0,
                method,
            }
        }
    };
    if !(estimate.constant > 0.0 && estimate.constant.is_finite()) {
        return Err(Error::DegeneratePosterior(format!(
            "normalization constant {} is not positive",
            estimate.constant
        )));
    }
    Ok(estimate)
}

fn unnormalized_values(prior: &NeuralDensity, lik: &Likelihood, nodes: &[f64]) -> Vec<f64> {
    let view = ArrayView2::from_shape((nodes.len(), 1), nodes).expect("column of nodes");
    prior
        .evaluate_batch(view)
        .into_iter()
        .zip(nodes)
        .map(|(p, x)| p * lik.evaluate(&[*x]))
        .collect()
}

pub(crate) fn trapezoid(values: &[f64], spacing: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    spacing * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// `p_n(z) = xi_n(z) prior(z) / C_n` on the domain, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub prior: NeuralDensity,
    pub likelihood: Likelihood,
    pub normalizer: f64,
    pub acceptance_rate: f64,
}

impl Posterior {
    pub fn domain(&self) -> &Domain {
        &self.prior.domain
    }
}

impl Density for Posterior {
    fn dim(&self) -> usize {
        self.prior.domain.dim()
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        if !self.prior.domain.contains(x) {
            return 0.0;
        }
        self.likelihood.evaluate(x) * self.prior.evaluate(x) / self.normalizer
    }

    fn evaluate_batch(&self, points: ArrayView2<f64>) -> Vec<f64> {
        let prior = self.prior.evaluate_batch(points);
        prior
            .into_iter()
            .zip(points.rows())
            .map(|(p, row)| {
                if p == 0.0 {
                    return 0.0;
                }
                let x = row.to_vec();
                self.likelihood.evaluate(&x) * p / self.normalizer
            })
            .collect()
    }
}

/// What to do when a step's acceptance rate is below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    #[default]
    Abort,
    /// Flag the step and keep going. A non-positive `C_n` still aborts.
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub model: FilterModel,
    pub domain: Domain,
    pub grid: TimeGrid,
    pub initial: GaussianDensity,
    pub arch: NetworkArchitecture,
    pub training: TrainingConfig,
    pub normalizer: NormalizerMethod,
    pub scaling: NormalizerScaling,
    pub min_acceptance: f64,
    pub on_degenerate: DegeneratePolicy,
    pub seed: u64,
}

/// Everything produced by one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub step: usize,
    pub time: f64,
    pub posterior: Posterior,
    pub normalizer: NormalizerEstimate,
    pub training: TrainingReport,
    /// Acceptance rate fell below the configured threshold.
    pub below_min_acceptance: bool,
}

/// Iterator-style driver; each call to [`SplittingFilter::step`] advances one
/// observation interval.
pub struct SplittingFilter<'a> {
    config: &'a FilterConfig,
    observations: &'a ObservationPath,
    streams: Streams,
    previous: Option<Posterior>,
    next: usize,
}

impl<'a> SplittingFilter<'a> {
    pub fn new(config: &'a FilterConfig, observations: &'a ObservationPath) -> Result<Self> {
        if observations.times.len() != config.grid.times().len() {
            return Err(Error::InvalidInput(format!(
                "observation path has {} times, grid has {}",
                observations.times.len(),
                config.grid.times().len()
            )));
        }
        if config.domain.dim() != config.model.dim_signal()
            || config.initial.dim() != config.model.dim_signal()
        {
            return Err(Error::Config(
                "domain, initial density and model must share the signal dimension".into(),
            ));
        }
        Ok(Self {
            config,
            observations,
            streams: Streams::new(config.seed),
            previous: None,
            next: 1,
        })
    }

    /// Index of the step the next call will compute.
    pub fn next_step(&self) -> usize {
        self.next
    }

    pub fn is_finished(&self) -> bool {
        self.next > self.config.grid.steps()
    }

    /// Initial condition of the next prediction step.
    pub fn current_density(&self) -> &dyn Density {
        match &self.previous {
            Some(p) => p,
            None => &self.config.initial,
        }
    }

    /// Runs the next step. `reference` enables the L2 checkpoints of training.
    pub fn step(&mut self, reference: Option<&TrainingReference>) -> Result<FilterStep> {
        let n = self.next;
        if self.is_finished() {
            return Err(Error::InvalidInput("filter already finished".into()));
        }
        let out = self.compute(n, reference).map_err(|e| e.at_step(n))?;
        self.previous = Some(out.posterior.clone());
        self.next += 1;
        Ok(out)
    }

    fn compute(&self, n: usize, reference: Option<&TrainingReference>) -> Result<FilterStep> {
        let cfg = self.config;
        let interval = cfg.grid.interval(n);
        let (prior, report) = train_network(
            &cfg.model,
            &cfg.domain,
            interval,
            self.current_density(),
            &cfg.arch,
            &cfg.training,
            &self.streams,
            n as u64,
            reference,
        )?;
        let z = self.observations.scaled_increment(n).to_vec();
        let lik = Likelihood::new(cfg.model.clone(), z, interval.1 - interval.0)?;
        let estimate = estimate_normalizer(
            &prior,
            &lik,
            cfg.normalizer,
            cfg.scaling,
            self.streams.key(Purpose::Normalizer, n as u64, 0),
        )?;
        let below = estimate.acceptance_rate < cfg.min_acceptance;
        if below && cfg.on_degenerate == DegeneratePolicy::Abort {
            return Err(Error::DegeneratePosterior(format!(
                "acceptance rate {:.4} below {}",
                estimate.acceptance_rate, cfg.min_acceptance
            )));
        }
        Ok(FilterStep {
            step: n,
            time: interval.1,
            posterior: Posterior {
                prior,
                likelihood: lik,
                normalizer: estimate.constant,
                acceptance_rate: estimate.acceptance_rate,
            },
            normalizer: estimate,
            training: report,
            below_min_acceptance: below,
        })
    }
}

/// Runs every step of `config.grid` against `observations`.
pub fn run_filter(config: &FilterConfig, observations: &ObservationPath) -> Result<Vec<FilterStep>> {
    let mut filter = SplittingFilter::new(config, observations)?;
    let mut steps = Vec::with_capacity(config.grid.steps());
    while !filter.is_finished() {
        steps.push(filter.step(None)?);
    }
    Ok(steps)
}

/// Values of `density` on the uniform `points`-node grid of a 1-D domain.
pub fn density_on_grid(density: &dyn Density, nodes: &[f64]) -> Vec<f64> {
    let pts = Array2::from_shape_vec((nodes.len(), 1), nodes.to_vec()).expect("column of nodes");
    density.evaluate_batch(pts.view())
}
