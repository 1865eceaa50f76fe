//! ADAM with bias correction and a piecewise-constant learning-rate schedule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `blocks`, with `beta1 = 0.9`,
    /// `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(block_sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = block_sizes.into_iter().collect();
        Self {
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One ADAM update of `params` in place. `names` labels blocks in errors.
///
/// Gradients are checked before anything is modified, so a failed step
/// leaves both the state and the parameters untouched.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    lr: f64,
    names: &[String],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::InvalidInput(format!(
            "ADAM: {} parameter blocks, {} gradient blocks, {} moment blocks",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = || names.get(k).cloned().unwrap_or_else(|| format!("block {k}"));
        if p.len() != g.len() || p.len() != state.first_moment[k].len() {
            return Err(Error::InvalidInput(format!("ADAM: shape mismatch in {}", name())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { block: name() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `kappa(n) = sum_i kappa_i 1[K_i <= n < K_{i+1}]`, `K_0 = 0`, `K_{M+1} = inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    cutoffs: Vec<u64>,
    rates: Vec<f64>,
}

impl LrSchedule {
    pub fn new(cutoffs: Vec<u64>, rates: Vec<f64>) -> Result<Self> {
        if cutoffs.is_empty() || cutoffs.len() != rates.len() {
            return Err(Error::Config(format!(
                "learning-rate schedule needs equally many cutoffs and rates (got {} and {})",
                cutoffs.len(),
                rates.len()
            )));
        }
        if cutoffs[0] != 0 {
            return Err(Error::Config("first learning-rate cutoff must be 0".into()));
        }
        if cutoffs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("learning-rate cutoffs must be strictly increasing".into()));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(Self { cutoffs, rates })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![0], vec![rate])
    }

    pub fn cutoffs(&self) -> &[u64] {
        &self.cutoffs
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Rate for epoch `n` (1-based).
    pub fn lr_at(&self, n: u64) -> f64 {
        let idx = self.cutoffs.partition_point(|&k| k <= n);
        self.rates[idx.saturating_sub(1)]
    }

    /// Same rates with every cutoff multiplied by `factor` (rounded; kept
    /// strictly increasing).
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let mut cutoffs: Vec<u64> = Vec::with_capacity(self.cutoffs.len());
        for &k in &self.cutoffs {
            let mut scaled = (k as f64 * factor).round() as u64;
            if let Some(&prev) = cutoffs.last() {
                scaled = scaled.max(prev + 1);
            }
            cutoffs.push(scaled);
        }
        Self::new(cutoffs, self.rates.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("b{i}")).collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new([2]);
        adam_step(&mut s, &mut [&mut p[..]], &[vec![0.0, 0.0]], 0.1, &names(1)).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [0.5];
        let mut s = AdamState::new([1]);
        adam_step(&mut s, &mut [&mut p[..]], &[vec![1.0]], 0.01, &names(1)).unwrap();
        // m_hat = 1, v_hat = 1: update = lr / (1 + 1e-8).
        assert_relative_eq!(p[0], 0.5 - 0.01 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = [0.0];
        let mut q = [0.0];
        let mut s = AdamState::new([1, 1]);
        let err = adam_step(
            &mut s,
            &mut [&mut p[..], &mut q[..]],
            &[vec![0.0], vec![f64::NAN]],
            0.1,
            &names(2),
        )
        .unwrap_err();
        match err {
            Error::NonFiniteGradient { block } => assert_eq!(block, "b1"),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(s.step, 0);
    }

    #[test]
    fn minimizes_parabola() {
        let mut x = [1.0];
        let mut s = AdamState::new([1]);
        for _ in 0..200 {
            let g = vec![2.0 * x[0]];
            adam_step(&mut s, &mut [&mut x[..]], &[g], 0.1, &names(1)).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut x: Vec<f64> = vec![0.3, -0.7];
            let mut s = AdamState::new([2]);
            let mut traj = Vec::new();
            for i in 0..50 {
                let g = vec![x[0].sin() + i as f64 * 1e-3, 3.0 * x[1]];
                adam_step(&mut s, &mut [&mut x[..]], &[g], 0.05, &names(1)).unwrap();
                traj.push(x.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_lookup() {
        let s = LrSchedule::new(vec![0, 2000, 4000], vec![1e-2, 1e-3, 1e-4]).unwrap();
        assert_eq!(s.lr_at(1), 1e-2);
        assert_eq!(s.lr_at(1999), 1e-2);
        assert_eq!(s.lr_at(2000), 1e-3);
        assert_eq!(s.lr_at(4000), 1e-4);
        assert_eq!(s.lr_at(6001), 1e-4);
        let c = LrSchedule::constant(3e-3).unwrap();
        assert!((1..10_000).step_by(997).all(|n| c.lr_at(n) == 3e-3));
    }

    #[test]
    fn schedule_validation_and_rescale() {
        assert!(LrSchedule::new(vec![1, 5], vec![1.0, 0.1]).is_err());
        assert!(LrSchedule::new(vec![0, 5, 5], vec![1.0, 0.1, 0.01]).is_err());
        assert!(LrSchedule::new(vec![0, 5], vec![1.0]).is_err());
        assert!(LrSchedule::new(vec![0], vec![-1.0]).is_err());
        let s = LrSchedule::new(vec![0, 2000, 4000], vec![1e-2, 1e-3, 1e-4]).unwrap();
        let r = s.rescaled(1500.0 / 6002.0).unwrap();
        assert_eq!(r.cutoffs(), &[0, 500, 1000]);
    }
}
