//! Flat TOML experiment configuration and the built-in presets.
//!
//! Every key is optional in the file. Values not given come from the preset
//! named by `preset`, or, when only `model` is given, from the preset of that
//! family with its model coefficients required explicitly. Unknown keys are
//! rejected.

use serde::{Deserialize, Serialize};

use crate::density::GaussianDensity;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::filter::{DegeneratePolicy, FilterConfig, NormalizerMethod, NormalizerScaling};
use crate::model::{make_benes_model, make_linear_model, BenesModelParams, FilterModel, LinearModelParams};
use crate::nn::NetworkArchitecture;
use crate::optim::LrSchedule;
use crate::sde::TimeGrid;
use crate::training::{PenaltySign, TrainingConfig};

pub const PRESETS: [&str; 3] = ["linear-case1", "linear-case2", "benes"];

/// Epoch budget the default learning-rate cutoffs are stated for.
pub const FULL_EPOCHS: u64 = 6002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Benes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySignKey {
    Negative,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKey {
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateKey {
    Abort,
    Continue,
}

/// A complete experiment description. Scalar model coefficients: the
/// signal and the observation are one-dimensional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelKind,
    // Linear coefficients.
    pub m: f64,
    pub eta: f64,
    pub sigma: f64,
    pub h: f64,
    pub gamma: f64,
    // Benes coefficients; `sigma` is shared.
    pub alpha: f64,
    pub beta: f64,
    pub h1: f64,
    pub h2: f64,
    pub x0: f64,
    pub y0: f64,
    pub domain_lower: f64,
    pub domain_upper: f64,
    pub steps: usize,
    pub dt: f64,
    /// Euler substeps per interval for the auxiliary paths.
    pub substeps: usize,
    /// Euler substeps per interval for the simulated signal and the Kalman oracle.
    pub obs_substeps: usize,
    pub initial_mean: f64,
    pub initial_std: f64,
    pub hidden_widths: Vec<usize>,
    pub final_batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub penalty_weight: f64,
    pub penalty_sign: PenaltySignKey,
    pub lr_cutoffs: Vec<u64>,
    pub lr_rates: Vec<f64>,
    pub normalizer: NormalizerKey,
    pub normalizer_samples: usize,
    pub normalizer_points: usize,
    /// Include `sqrt(2 pi / (dt h1^2))` in `C_n`.
    pub normalizer_prefactor: bool,
    pub min_acceptance: f64,
    pub on_degenerate: DegenerateKey,
    /// Uniform grid for snapshots and diagnostics.
    pub grid_points: usize,
    /// Points of the pointwise Feynman-Kac reference; 0 disables it.
    pub reference_points: usize,
    pub reference_paths: usize,
    pub checkpoint_every: u64,
    pub oracle_grid_points: usize,
    /// Explicit substeps of the grid oracle; 0 picks the stable minimum.
    pub oracle_substeps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    name: Option<String>,
    model: Option<ModelKind>,
    m: Option<f64>,
    eta: Option<f64>,
    sigma: Option<f64>,
    h: Option<f64>,
    gamma: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    h1: Option<f64>,
    h2: Option<f64>,
    x0: Option<f64>,
    y0: Option<f64>,
    domain_lower: Option<f64>,
    domain_upper: Option<f64>,
    steps: Option<usize>,
    dt: Option<f64>,
    substeps: Option<usize>,
    obs_substeps: Option<usize>,
    initial_mean: Option<f64>,
    initial_std: Option<f64>,
    hidden_widths: Option<Vec<usize>>,
    final_batch_norm: Option<bool>,
    bn_momentum: Option<f64>,
    bn_epsilon: Option<f64>,
    epochs: Option<u64>,
    batch_size: Option<usize>,
    penalty_weight: Option<f64>,
    penalty_sign: Option<PenaltySignKey>,
    lr_cutoffs: Option<Vec<u64>>,
    lr_rates: Option<Vec<f64>>,
    normalizer: Option<NormalizerKey>,
    normalizer_samples: Option<usize>,
    normalizer_points: Option<usize>,
    normalizer_prefactor: Option<bool>,
    min_acceptance: Option<f64>,
    on_degenerate: Option<DegenerateKey>,
    grid_points: Option<usize>,
    reference_points: Option<usize>,
    reference_paths: Option<usize>,
    checkpoint_every: Option<u64>,
    oracle_grid_points: Option<usize>,
    oracle_substeps: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
}

fn shared_defaults(name: &str, model: ModelKind) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        model,
        m: 0.0,
        eta: 0.0,
        sigma: 0.0,
        h: 0.0,
        gamma: 0.0,
        alpha: 0.0,
        beta: 0.0,
        h1: 0.0,
        h2: 0.0,
        x0: 0.0,
        y0: 0.0,
        domain_lower: 0.0,
        domain_upper: 0.0,
        steps: 0,
        dt: 0.0,
        substeps: 10,
        obs_substeps: 10,
        initial_mean: 0.0,
        initial_std: 0.01,
        hidden_widths: vec![51, 51],
        final_batch_norm: true,
        bn_momentum: 0.99,
        bn_epsilon: 1e-5,
        epochs: FULL_EPOCHS,
        batch_size: 600,
        penalty_weight: 1.0,
        penalty_sign: PenaltySignKey::Negative,
        lr_cutoffs: vec![0, 2000, 4000],
        lr_rates: vec![1e-2, 1e-3, 1e-4],
        normalizer: NormalizerKey::MonteCarlo,
        normalizer_samples: 100_000,
        normalizer_points: 2001,
        normalizer_prefactor: true,
        min_acceptance: 0.5,
        on_degenerate: DegenerateKey::Abort,
        grid_points: 2001,
        reference_points: 201,
        reference_paths: 1000,
        checkpoint_every: 200,
        oracle_grid_points: 2001,
        oracle_substeps: 0,
        seed: 7,
        workers: 0,
    }
}

impl ExperimentConfig {
    /// One of [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "linear-case1" => Self {
                m: -1.0,
                sigma: 0.1,
                h: 90.0,
                domain_lower: -0.5,
                domain_upper: 0.5,
                steps: 60,
                dt: 0.01,
                ..shared_defaults(name, ModelKind::Linear)
            },
            "linear-case2" => Self {
                m: 1.0,
                eta: -1.0,
                sigma: 0.1,
                h: 90.0,
                domain_lower: -0.8,
                domain_upper: 0.4,
                steps: 60,
                dt: 0.01,
                ..shared_defaults(name, ModelKind::Linear)
            },
            "benes" => Self {
                alpha: 3.0,
                sigma: 0.5,
                h1: 3.0,
                domain_lower: -4.0,
                domain_upper: 4.0,
                steps: 12,
                dt: 0.1,
                oracle_grid_points: 4001,
                seed: BENES_SEED,
                ..shared_defaults(name, ModelKind::Benes)
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file. Errors name the offending key and its line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{e}").trim_end().to_string()))?;
        let mut required = Vec::new();
        let mut cfg = match (&raw.preset, raw.model) {
            (Some(p), _) => {
                let base = Self::preset(p).map_err(|e| at_key(text, "preset", e))?;
                if let Some(kind) = raw.model {
                    if kind != base.model {
                        return Err(at_key(
                            text,
                            "model",
                            Error::Config(format!("model does not match preset `{p}`")),
                        ));
                    }
                }
                base
            }
            (None, Some(ModelKind::Linear)) => {
                required.extend(["m", "eta", "sigma", "h", "gamma"]);
                Self::preset("linear-case1")?
            }
            (None, Some(ModelKind::Benes)) => {
                required.extend(["alpha", "beta", "sigma", "h1", "h2"]);
                Self::preset("benes")?
            }
            (None, None) => {
                return Err(Error::Config(
                    "config must set `preset` or `model`".into(),
                ))
            }
        };
        for key in required {
            if !has_key(text, key) {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        if raw.preset.is_none() {
            cfg.name = "custom".into();
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = raw.$field { cfg.$field = v; })*
            };
        }
        take!(
            name, model, m, eta, sigma, h, gamma, alpha, beta, h1, h2, x0, y0, domain_lower,
            domain_upper, steps, dt, substeps, obs_substeps, initial_mean, initial_std,
            hidden_widths, final_batch_norm, bn_momentum, bn_epsilon, epochs, batch_size,
            penalty_weight, penalty_sign, lr_cutoffs, lr_rates, normalizer, normalizer_samples,
            normalizer_points, normalizer_prefactor, min_acceptance, on_degenerate, grid_points,
            reference_points, reference_paths, checkpoint_every, oracle_grid_points,
            oracle_substeps, seed, workers
        );
        cfg.validate_keys().map_err(|(key, e)| at_key(text, key, e))?;
        Ok(cfg)
    }

    /// Complete config as TOML; parsing it back gives an equal config.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the epoch budget and rescales the learning-rate cutoffs with it.
    pub fn with_epochs(mut self, epochs: u64) -> Result<Self> {
        let schedule = self.schedule()?.rescaled(epochs as f64 / self.epochs as f64)?;
        self.lr_cutoffs = schedule.cutoffs().to_vec();
        self.epochs = epochs;
        self.validate()?;
        Ok(self)
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        self.steps = steps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_keys().map_err(|(_, e)| e)
    }

    fn validate_keys(&self) -> std::result::Result<(), (&'static str, Error)> {
        let bad = |key: &'static str, msg: &str| Err((key, Error::Config(format!("`{key}`: {msg}"))));
        let finite = [
            ("m", self.m),
            ("eta", self.eta),
            ("sigma", self.sigma),
            ("h", self.h),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("h1", self.h1),
            ("h2", self.h2),
            ("x0", self.x0),
            ("y0", self.y0),
            ("initial_mean", self.initial_mean),
        ];
        for (key, v) in finite {
            if !v.is_finite() {
                return bad(key, "must be finite");
            }
        }
        if !(self.domain_lower < self.domain_upper) {
            return bad("domain_upper", "must exceed domain_lower");
        }
        if self.steps == 0 {
            return bad("steps", "must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", "must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps", "must be positive");
        }
        if self.obs_substeps == 0 {
            return bad("obs_substeps", "must be positive");
        }
        if !(self.initial_std > 0.0) {
            return bad("initial_std", "must be positive");
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return bad("hidden_widths", "needs at least one layer, all widths positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad("bn_momentum", "must lie in (0, 1)");
        }
        if !(self.bn_epsilon > 0.0) {
            return bad("bn_epsilon", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if !(self.penalty_weight >= 0.0) {
            return bad("penalty_weight", "must be non-negative");
        }
        if let Err(e) = self.schedule() {
            return Err(("lr_cutoffs", e));
        }
        if self.normalizer_samples == 0 {
            return bad("normalizer_samples", "must be positive");
        }
        if self.normalizer_points < 2 {
            return bad("normalizer_points", "must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.min_acceptance) {
            return bad("min_acceptance", "must lie in [0, 1]");
        }
        if self.grid_points < 2 {
            return bad("grid_points", "must be at least 2");
        }
        if self.reference_points == 1 {
            return bad("reference_points", "must be 0 or at least 2");
        }
        if self.reference_points > 0 && self.reference_paths < 100 {
            return bad("reference_paths", "must be at least 100");
        }
        if self.oracle_grid_points < 3 {
            return bad("oracle_grid_points", "must be at least 3");
        }
        if let Err(e) = self.model() {
            let key = match self.model {
                ModelKind::Linear => "m",
                ModelKind::Benes => "sigma",
            };
            return Err((key, e));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr_cutoffs.clone(), self.lr_rates.clone())
    }

    pub fn linear_params(&self) -> Option<LinearModelParams> {
        (self.model == ModelKind::Linear)
            .then(|| LinearModelParams::scalar(self.m, self.eta, self.sigma, self.h, self.gamma))
    }

    pub fn model(&self) -> Result<FilterModel> {
        match self.model {
            ModelKind::Linear => make_linear_model(self.linear_params().expect("linear")),
            ModelKind::Benes => make_benes_model(BenesModelParams {
                alpha: self.alpha,
                beta: self.beta,
                sigma: self.sigma,
                h1: self.h1,
                h2: self.h2,
            }),
        }
    }

    pub fn domain(&self) -> Domain {
        Domain::interval(self.domain_lower, self.domain_upper).expect("validated domain")
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::uniform(0.0, self.dt, self.steps, self.obs_substeps).expect("validated grid")
    }

    pub fn initial_density(&self) -> GaussianDensity {
        GaussianDensity::new(vec![self.initial_mean], self.initial_std)
    }

    pub fn architecture(&self) -> NetworkArchitecture {
        NetworkArchitecture {
            final_batch_norm: self.final_batch_norm,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
            ..NetworkArchitecture::with_widths(1, &self.hidden_widths, 1)
        }
    }

    pub fn training(&self) -> Result<TrainingConfig> {
        Ok(TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            substeps: self.substeps,
            penalty_weight: self.penalty_weight,
            penalty_sign: match self.penalty_sign {
                PenaltySignKey::Negative => PenaltySign::Negative,
                PenaltySignKey::Positive => PenaltySign::Positive,
            },
            schedule: self.schedule()?,
            checkpoint_every: self.checkpoint_every,
        })
    }

    pub fn filter_config(&self) -> Result<FilterConfig> {
        self.validate()?;
        Ok(FilterConfig {
            model: self.model()?,
            domain: self.domain(),
            grid: self.time_grid(),
            initial: self.initial_density(),
            arch: self.architecture(),
            training: self.training()?,
            normalizer: match self.normalizer {
                NormalizerKey::MonteCarlo => NormalizerMethod::MonteCarlo {
                    samples: self.normalizer_samples,
                },
                NormalizerKey::Quadrature => NormalizerMethod::Quadrature {
                    points: self.normalizer_points,
                },
            },
            scaling: if self.normalizer_prefactor {
                NormalizerScaling::Density
            } else {
                NormalizerScaling::Literal
            },
            min_acceptance: self.min_acceptance,
            on_degenerate: match self.on_degenerate {
                DegenerateKey::Abort => DegeneratePolicy::Abort,
                DegenerateKey::Continue => DegeneratePolicy::Continue,
            },
            seed: self.seed,
        })
    }
}

/// Root seed of the Benes preset; its observation path shows a bimodal
/// posterior at `t = 0.9` and keeps the likelihood inside the domain.
pub const BENES_SEED: u64 = 71;

fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
}

fn has_key(text: &str, key: &str) -> bool {
    key_line(text, key).is_some()
}

fn at_key(text: &str, key: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    match key_line(text, key) {
        Some(line) => Error::Config(format!("line {}: {msg}", line + 1)),
        None => Error::Config(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let text = cfg.to_toml_string();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn table_values() {
        let c1 = ExperimentConfig::preset("linear-case1").unwrap();
        assert_eq!((c1.m, c1.eta, c1.sigma, c1.h, c1.gamma), (-1.0, 0.0, 0.1, 90.0, 0.0));
        assert_eq!((c1.steps, c1.dt, c1.domain_lower, c1.domain_upper), (60, 0.01, -0.5, 0.5));
        let c2 = ExperimentConfig::preset("linear-case2").unwrap();
        assert_eq!((c2.m, c2.eta, c2.domain_lower, c2.domain_upper), (1.0, -1.0, -0.8, 0.4));
        let b = ExperimentConfig::preset("benes").unwrap();
        assert_eq!((b.alpha, b.beta, b.sigma, b.h1, b.h2), (3.0, 0.0, 0.5, 3.0, 0.0));
        assert_eq!((b.steps, b.dt, b.domain_lower, b.domain_upper), (12, 0.1, -4.0, 4.0));
        for c in [c1, c2, b] {
            assert_eq!((c.epochs, c.batch_size, c.initial_std), (6002, 600, 0.01));
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = ExperimentConfig::from_toml_str("preset = \"benes\"\n\ndt_seconds = 0.1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("dt_seconds"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn invalid_value_names_line() {
        let err = ExperimentConfig::from_toml_str("preset = \"linear-case1\"\nsteps = 3\ndt = -1.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3") && err.contains("`dt`"), "{err}");
    }

    #[test]
    fn custom_model_requires_coefficients() {
        let err = ExperimentConfig::from_toml_str("model = \"benes\"\nalpha = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("missing required key"));
        let ok = ExperimentConfig::from_toml_str(
            "model = \"linear\"\nm = 0.0\neta = 0.0\nsigma = 1.0\nh = 1.0\ngamma = 0.0\n",
        )
        .unwrap();
        assert_eq!(ok.name, "custom");
        assert_eq!(ok.sigma, 1.0);
    }

    #[test]
    fn epoch_budget_rescales_schedule() {
        let c = ExperimentConfig::preset("linear-case1").unwrap().with_epochs(1500).unwrap();
        assert_eq!(c.lr_cutoffs, vec![0, 500, 1000]);
        assert_eq!(c.epochs, 1500);
    }
}
