//! Pointwise densities that can serve as the initial condition of a
//! prediction step.

use ndarray::ArrayView2;

use crate::nn::NeuralDensity;

pub trait Density: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> f64;

    /// Evaluates every row of `points` (`n x d`).
    fn evaluate_batch(&self, points: ArrayView2<f64>) -> Vec<f64> {
        points
            .rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.evaluate(s),
                None => self.evaluate(&r.to_vec()),
            })
            .collect()
    }
}

/// Isotropic Gaussian density `N(mean, std^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, std: f64) -> Self {
        Self { mean, std }
    }
}

impl Density for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let sq: f64 = x
            .iter()
            .zip(&self.mean)
            .map(|(a, m)| (a - m) * (a - m))
            .sum();
        let var = self.std * self.std;
        (-0.5 * sq / var).exp() / (2.0 * std::f64::consts::PI * var).powf(0.5 * d)
    }
}

impl Density for NeuralDensity {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        NeuralDensity::evaluate(self, x)
    }

    fn evaluate_batch(&self, points: ArrayView2<f64>) -> Vec<f64> {
        NeuralDensity::evaluate_batch(self, points)
    }
}
