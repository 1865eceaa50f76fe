#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitting_filter::nn::{NetworkArchitecture, NetworkParams};

/// `L = sum_i c_i o_i + 0.5 sum_i o_i^2` for a fixed weight vector `c`.
pub fn test_loss(out: &Array2<f64>, c: &[f64]) -> (f64, Array2<f64>) {
    let value = out.iter().zip(c).map(|(o, c)| c * o + 0.5 * o * o).sum();
    let grad = Array2::from_shape_fn(out.dim(), |(i, j)| c[i * out.ncols() + j] + out[[i, j]]);
    (value, grad)
}

/// A network with every trainable scalar randomized, so batch-norm scales
/// and shifts are away from their identity initialization.
pub fn random_network(arch: &NetworkArchitecture, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkParams::initialize(arch, &mut rng).unwrap();
    for block in net.blocks_mut() {
        for v in block.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    net
}

pub fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

/// Largest relative difference between backpropagated and central
/// finite-difference gradients, `|g - fd| / max(|g|, |fd|, step * max(1, |L|))`.
/// The floor keeps the round-off of the difference quotient, about
/// `eps |L| / step`, far below 1e-4 where batch normalization makes a
/// gradient exactly zero.
pub fn max_gradient_error(arch: &NetworkArchitecture, batch: usize, step: f64, seed: u64) -> f64 {
    let net = random_network(arch, seed);
    let x = random_batch(batch, arch.input_dim, seed + 1);
    let c: Vec<f64> = random_batch(batch, arch.output_dim, seed + 2).iter().copied().collect();
    let loss_at = |n: &NetworkParams| {
        let mut n = n.clone();
        let (out, _) = n.forward_train(x.view()).unwrap();
        test_loss(&out, &c).0
    };
    let mut probe = net.clone();
    let (out, cache) = probe.forward_train(x.view()).unwrap();
    let (_, g_out) = test_loss(&out, &c);
    let grads = net.backward(&cache, g_out.view());
    let floor = step * loss_at(&net).abs().max(1.0);
    let mut worst = 0.0f64;
    let sizes: Vec<usize> = net.clone().blocks_mut().iter().map(|b| b.len()).collect();
    for (b, size) in sizes.into_iter().enumerate() {
        for k in 0..size {
            let mut plus = net.clone();
            plus.blocks_mut()[b][k] += step;
            let mut minus = net.clone();
            minus.blocks_mut()[b][k] -= step;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let g = grads.blocks[b][k];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(floor));
        }
    }
    worst
}
