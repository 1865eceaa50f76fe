use rand::Rng;

use crate::error::{Error, Result};

/// Axis-aligned hypercube `[lower_1, upper_1] x ... x [lower_d, upper_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "domain bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "domain axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Closed-set membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, lo), hi) in out.iter_mut().zip(&self.lower).zip(&self.upper) {
            *o = lo + (hi - lo) * rng.random::<f64>();
        }
    }

    /// `n` uniformly spaced nodes on a one-dimensional domain, endpoints included.
    pub fn grid_1d(&self, n: usize) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::InvalidInput(format!(
                "grid_1d needs a one-dimensional domain, got d = {}",
                self.dim()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidInput("a grid needs at least 2 nodes".into()));
        }
        let (lo, hi) = (self.lower[0], self.upper[0]);
        let h = (hi - lo) / (n - 1) as f64;
        Ok((0..n)
            .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
            .collect())
    }
}
