//! Regression of the prior density onto Feynman-Kac targets.
//!
//! For a batch of auxiliary paths started uniformly on the domain, the
//! target of path `i` is `psi(X_T^i) exp(-sum_j k(X_{tau_j}^i) dtau)`, where
//! `psi` is the previous posterior. The network is fit to these targets by
//! least squares; the conditional-mean minimizer is the solution of the
//! prediction PDE at time `T`.

use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};

use crate::density::Density;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::model::FilterModel;
use crate::nn::{Gradients, NetworkArchitecture, NetworkParams, NeuralDensity};
use crate::optim::{adam_step, AdamState, LrSchedule};
use crate::rng::{Purpose, Streams};
use crate::sde::{sample_auxiliary_batch, PathBatch};

/// Which sign the positivity penalty acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltySign {
    /// `lambda / N_b * sum max(0, -NN(xi))`: penalizes negative outputs.
    #[default]
    Negative,
    /// `lambda * sum max(0, NN(xi))` without the `1 / N_b` factor.
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: u64,
    pub batch_size: usize,
    /// Euler substeps per observation interval for the auxiliary paths.
    pub substeps: usize,
    pub penalty_weight: f64,
    pub penalty_sign: PenaltySign,
    pub schedule: LrSchedule,
    /// Epoch cadence of the L2-vs-reference checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 6002,
            batch_size: 600,
            substeps: 10,
            penalty_weight: 1.0,
            penalty_sign: PenaltySign::Negative,
            schedule: LrSchedule::new(vec![0, 2000, 4000], vec![1e-2, 1e-3, 1e-4])
                .expect("valid default schedule"),
            checkpoint_every: 200,
        }
    }
}

/// One regression sample derived from an auxiliary path.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSample {
    pub start: Vec<f64>,
    pub terminal: Vec<f64>,
    /// `exp(-sum_j k(X_{tau_j}) dtau)`
    pub weight: f64,
    /// `psi(X_T) * weight`
    pub target: f64,
}

pub fn loss_samples(batch: &PathBatch, psi: &dyn Density) -> Result<Vec<LossSample>> {
    let terminals = batch.terminals();
    let targets = regression_targets(batch, psi)?;
    Ok((0..batch.len())
        .map(|i| LossSample {
            start: batch.starts.row(i).to_vec(),
            terminal: terminals.row(i).to_vec(),
            weight: (-batch.potential_integrals[i]).exp(),
            target: targets[i],
        })
        .collect())
}

/// `psi(X_T^i) exp(-int k)` for every path in the batch.
pub fn regression_targets(batch: &PathBatch, psi: &dyn Density) -> Result<Array1<f64>> {
    let terminals = batch.terminals();
    let values = psi.evaluate_batch(terminals.view());
    let mut targets = Array1::zeros(batch.len());
    for (i, (v, integral)) in values.iter().zip(batch.potential_integrals.iter()).enumerate() {
        let t = v * (-integral).exp();
        if !t.is_finite() {
            return Err(Error::NonFiniteTarget { index: i });
        }
        targets[i] = t;
    }
    Ok(targets)
}

/// Penalized least-squares loss on fixed `(inputs, targets)` and its gradient.
pub fn loss_and_gradients(
    net: &mut NetworkParams,
    inputs: ArrayView2<f64>,
    targets: &Array1<f64>,
    penalty_weight: f64,
    penalty_sign: PenaltySign,
) -> Result<(f64, Gradients)> {
    let (out, cache) = net.forward_train(inputs)?;
    let n = targets.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(out.raw_dim());
    for (i, &t) in targets.iter().enumerate() {
        let o = out[[i, 0]];
        let r = o - t;
        value += r * r / n;
        let mut g = 2.0 * r / n;
        match penalty_sign {
            PenaltySign::Negative if o < 0.0 => {
                value += penalty_weight * (-o) / n;
                g -= penalty_weight / n;
            }
            PenaltySign::Positive if o > 0.0 => {
                value += penalty_weight * o;
                g += penalty_weight;
            }
            _ => {}
        }
        grad[[i, 0]] = g;
    }
    let grads = net.backward(&cache, grad.view());
    Ok((value, grads))
}

/// Batch loss of `net` on auxiliary paths with initial condition `psi`.
pub fn batch_loss(
    net: &mut NetworkParams,
    batch: &PathBatch,
    psi: &dyn Density,
    penalty_weight: f64,
    penalty_sign: PenaltySign,
) -> Result<(f64, Gradients)> {
    let targets = regression_targets(batch, psi)?;
    loss_and_gradients(net, batch.starts.view(), &targets, penalty_weight, penalty_sign)
}

/// Pointwise values the trained network is compared against during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReference {
    /// `n x d` evaluation points.
    pub points: Array2<f64>,
    pub values: Vec<f64>,
    /// Quadrature weight per point for the L2 norm.
    pub cell_volume: f64,
}

impl TrainingReference {
    pub fn l2_error(&self, density: &NeuralDensity) -> f64 {
        let approx = density.evaluate_batch(self.points.view());
        let sq: f64 = approx
            .iter()
            .zip(&self.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (sq * self.cell_volume).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.cell_volume).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    /// `(epoch, L2 error vs reference)`
    pub l2_checkpoints: Vec<(u64, f64)>,
    pub wall_clock: Duration,
    pub seed: u64,
}

impl TrainingReport {
    pub fn final_l2(&self) -> Option<f64> {
        self.l2_checkpoints.last().map(|(_, v)| *v)
    }

    /// CSV with columns `epoch,loss,lr,l2_ref`; `l2_ref` is empty between checkpoints.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "lr", "l2_ref"])?;
        let mut checkpoints = self.l2_checkpoints.iter().peekable();
        for (i, (loss, lr)) in self.losses.iter().zip(&self.learning_rates).enumerate() {
            let epoch = i as u64 + 1;
            let l2 = match checkpoints.peek() {
                Some((e, v)) if *e == epoch => {
                    checkpoints.next();
                    format!("{v:e}")
                }
                _ => String::new(),
            };
            out.write_record([epoch.to_string(), format!("{loss:e}"), format!("{lr:e}"), l2])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains a freshly initialized network on `domain` to approximate the
/// solution of the prediction PDE over `interval` started from `psi`.
///
/// Step `step` of a run draws its initialization and all paths from
/// substreams of `streams` keyed by the step index, so the result depends
/// only on `(streams, step)` and the inputs.
#[allow(clippy::too_many_arguments)]
pub fn train_network(
    model: &FilterModel,
    domain: &Domain,
    interval: (f64, f64),
    psi: &dyn Density,
    arch: &NetworkArchitecture,
    config: &TrainingConfig,
    streams: &Streams,
    step: u64,
    reference: Option<&TrainingReference>,
) -> Result<(NeuralDensity, TrainingReport)> {
    if config.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    let started = Instant::now();
    let mut net = NetworkParams::initialize(arch, &mut streams.rng(Purpose::NetworkInit, step, 0, 0))?;
    let names = net.block_names();
    let mut adam = AdamState::new(net.blocks_mut().iter().map(|b| b.len()));
    let mut losses = Vec::with_capacity(config.epochs as usize);
    let mut rates = Vec::with_capacity(config.epochs as usize);
    let mut checkpoints = Vec::new();

    for epoch in 1..=config.epochs {
        let key = streams.key(Purpose::TrainingPaths, step, epoch);
        let batch = sample_auxiliary_batch(
            model,
            domain,
            interval,
            config.substeps,
            config.batch_size,
            key,
        )?;
        let (loss, grads) = batch_loss(
            &mut net,
            &batch,
            psi,
            config.penalty_weight,
            config.penalty_sign,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch as usize });
        }
        let lr = config.schedule.lr_at(epoch);
        adam_step(&mut adam, &mut net.blocks_mut(), &grads.blocks, lr, &names)?;
        losses.push(loss);
        rates.push(lr);
        if let Some(reference) = reference {
            if config.checkpoint_every > 0
                && (epoch % config.checkpoint_every == 0 || epoch == config.epochs)
            {
                let snapshot = NeuralDensity::new(net.clone(), domain.clone())?;
                checkpoints.push((epoch, reference.l2_error(&snapshot)));
            }
        }
    }
    let density = NeuralDensity::new(net, domain.clone())?;
    Ok((
        density,
        TrainingReport {
            losses,
            learning_rates: rates,
            l2_checkpoints: checkpoints,
            wall_clock: started.elapsed(),
            seed: streams.root(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GaussianDensity;
    use crate::model::{make_linear_model, LinearModelParams};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Zero;
    impl Density for Zero {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, _: &[f64]) -> f64 {
            0.0
        }
    }

    fn small_net(seed: u64) -> NetworkParams {
        NetworkParams::initialize(
            &NetworkArchitecture::with_widths(1, &[8], 1),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn zero_psi_loss_is_mean_square_output() {
        let mut net = small_net(1);
        let x = array![[-0.3], [0.0], [0.2], [0.45]];
        let (out, _) = net.clone().forward_train(x.view()).unwrap();
        let (value, _) =
            loss_and_gradients(&mut net, x.view(), &Array1::zeros(4), 0.0, PenaltySign::Negative)
                .unwrap();
        let expected = out.iter().map(|o| o * o).sum::<f64>() / 4.0;
        assert!((value - expected).abs() < 1e-14);

        let mut zero = small_net(1);
        zero.output.weights.fill(0.0);
        let (value, _) =
            loss_and_gradients(&mut zero, x.view(), &Array1::zeros(4), 0.0, PenaltySign::Negative)
                .unwrap();
        assert!(value.abs() < 1e-20);
        let _ = Zero.evaluate(&[0.0]);
    }

    #[test]
    fn penalty_signs() {
        let mut net = small_net(2);
        let x = array![[-0.3], [0.0], [0.2], [0.45]];
        let (out, _) = net.clone().forward_train(x.view()).unwrap();
        let targets = out.column(0).to_owned();
        let (neg, _) =
            loss_and_gradients(&mut net, x.view(), &targets, 2.0, PenaltySign::Negative).unwrap();
        let expected_neg: f64 = out.iter().map(|o| 2.0 * (-o).max(0.0) / 4.0).sum();
        assert!((neg - expected_neg).abs() < 1e-14);
        let (lit, _) =
            loss_and_gradients(&mut net, x.view(), &targets, 2.0, PenaltySign::Positive)
                .unwrap();
        let expected_lit: f64 = out.iter().map(|o| 2.0 * o.max(0.0)).sum();
        assert!((lit - expected_lit).abs() < 1e-14);
    }

    #[test]
    fn frozen_batch_is_reproducible() {
        let model =
            make_linear_model(LinearModelParams::scalar(-1.0, 0.0, 0.1, 90.0, 0.0)).unwrap();
        let domain = Domain::interval(-0.5, 0.5).unwrap();
        let key = Streams::new(3).key(Purpose::Test, 0, 0);
        let batch = sample_auxiliary_batch(&model, &domain, (0.0, 0.01), 10, 64, key).unwrap();
        let psi = GaussianDensity::new(vec![0.0], 0.05);
        let mut a = small_net(4);
        let mut b = a.clone();
        let ra = batch_loss(&mut a, &batch, &psi, 1.0, PenaltySign::Negative).unwrap();
        let rb = batch_loss(&mut b, &batch, &psi, 1.0, PenaltySign::Negative).unwrap();
        assert_eq!(ra, rb);
        let again = batch_loss(&mut a, &batch, &psi, 1.0, PenaltySign::Negative).unwrap();
        assert_eq!(ra, again);
    }

    #[test]
    fn non_finite_target_is_reported() {
        struct Blowup;
        impl Density for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn evaluate(&self, x: &[f64]) -> f64 {
                if x[0] > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            }
        }
        let model = make_linear_model(LinearModelParams::scalar(0.0, 0.0, 0.0, 1.0, 0.0)).unwrap();
        let domain = Domain::interval(-1.0, 1.0).unwrap();
        let key = Streams::new(1).key(Purpose::Test, 0, 0);
        let batch = sample_auxiliary_batch(&model, &domain, (0.0, 0.1), 2, 32, key).unwrap();
        let first_positive = (0..32).find(|&i| batch.starts[[i, 0]] > 0.0).unwrap();
        match regression_targets(&batch, &Blowup) {
            Err(Error::NonFiniteTarget { index }) => assert_eq!(index, first_positive),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_csv_has_checkpoint_column() {
        let report = TrainingReport {
            losses: vec![1.0, 0.5, 0.25],
            learning_rates: vec![1e-2; 3],
            l2_checkpoints: vec![(2, 0.1)],
            wall_clock: Duration::from_millis(5),
            seed: 1,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,loss,lr,l2_ref");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(','));
        assert!(lines[2].ends_with("1e-1"));
    }
}
