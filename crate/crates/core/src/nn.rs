//! Fully connected network with batch normalization.
//!
//! Layout, for hidden widths `l_1, ..., l_k`:
//!
//! ```text
//! input -> BN -> [Dense(l_1) -> BN -> tanh] -> ... -> [Dense(l_k) -> BN -> tanh]
//!       -> Dense(output) -> BN (optional) -> output
//! ```
//!
//! Batch normalization uses batch statistics in training mode and running
//! averages in inference mode. Running averages follow
//! `running = momentum * running + (1 - momentum) * batch`, with the unbiased
//! batch variance.
//!
//! # Checkpoint format
//!
//! Little-endian throughout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `b"SPFNN\0v1"` |
//! | 4     | `u32` input dim |
//! | 4     | `u32` output dim |
//! | 4     | `u32` number of hidden layers `k` |
//! | 4k    | `u32` hidden widths |
//! | 1     | `u8` final batch-norm flag |
//! | 8 + 8 | `f64` momentum, `f64` epsilon |
//! | ...   | `f64` parameters |
//!
//! Parameters are written layer by layer in forward order. A batch-norm
//! layer writes `gamma, beta, running_mean, running_var`; a dense layer
//! writes its `in x out` weight matrix row-major, then its bias.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::domain::Domain;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPFNN\0v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArchitecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub final_batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for NetworkArchitecture {
    /// Two hidden layers of width 51, scalar input and output.
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden_widths: vec![51, 51],
            output_dim: 1,
            final_batch_norm: true,
            bn_momentum: 0.99,
            bn_epsilon: 1e-5,
        }
    }
}

impl NetworkArchitecture {
    pub fn with_widths(input_dim: usize, hidden_widths: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: hidden_widths.to_vec(),
            output_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("network layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!(
                "batch-norm momentum must lie in [0, 1), got {}",
                self.bn_momentum
            )));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config("batch-norm epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    pub dense: Dense,
    pub bn: BatchNorm,
}

/// All parameters and running statistics of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: NetworkArchitecture,
    pub input_bn: BatchNorm,
    pub hidden: Vec<HiddenBlock>,
    pub output: Dense,
    pub output_bn: Option<BatchNorm>,
}

/// Everything the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    bn: Vec<BnCache>,
    dense_inputs: Vec<Array2<f64>>,
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// tanh outputs of each hidden block.
    pub fn activations(&self) -> &[Array2<f64>] {
        &self.activations
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Gradients in the same block order as [`NetworkParams::blocks_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    fn forward_train(
        &mut self,
        x: &Array2<f64>,
        momentum: f64,
        eps: f64,
    ) -> (Array2<f64>, BnCache) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        self.running_mean = momentum * &self.running_mean + (1.0 - momentum) * &mean;
        self.running_var = momentum * &self.running_var + (1.0 - momentum) * (var * (n / (n - 1.0)));
        (y, BnCache { xhat, inv_std })
    }

    fn forward_inference(&self, x: &Array2<f64>, eps: f64) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + eps).sqrt());
        let shift = &self.beta - &self.running_mean * &scale;
        x * &scale + &shift
    }

    /// Returns `(d input, d gamma, d beta)`.
    fn backward(&self, dy: &Array2<f64>, cache: &BnCache) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
        let n = dy.nrows() as f64;
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * (&cache.inv_std / n);
        (dx, dgamma.to_vec(), dbeta.to_vec())
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.gamma.as_slice_mut().expect("contiguous"),
            self.beta.as_slice_mut().expect("contiguous"),
        ]
    }
}

impl Dense {
    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weights.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}

fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Dense {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Dense {
        weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound)),
        bias: Array1::zeros(fan_out),
    }
}

fn check_finite(x: &ArrayView2<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("network input contains non-finite values".into()))
    }
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, identity batch normalization.
    pub fn initialize<R: Rng + ?Sized>(arch: &NetworkArchitecture, rng: &mut R) -> Result<Self> {
        Self::build(arch, |i, o| glorot(i, o, rng))
    }

    fn build(
        arch: &NetworkArchitecture,
        mut dense: impl FnMut(usize, usize) -> Dense,
    ) -> Result<Self> {
        arch.validate()?;
        let mut hidden = Vec::with_capacity(arch.hidden_widths.len());
        let mut fan_in = arch.input_dim;
        for &w in &arch.hidden_widths {
            hidden.push(HiddenBlock {
                dense: dense(fan_in, w),
                bn: BatchNorm::identity(w),
            });
            fan_in = w;
        }
        Ok(Self {
            arch: arch.clone(),
            input_bn: BatchNorm::identity(arch.input_dim),
            hidden,
            output: dense(fan_in, arch.output_dim),
            output_bn: arch
                .final_batch_norm
                .then(|| BatchNorm::identity(arch.output_dim)),
        })
    }

    pub fn arch(&self) -> &NetworkArchitecture {
        &self.arch
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let bn = |w: usize| 2 * w;
        let mut count = bn(self.arch.input_dim);
        for b in &self.hidden {
            count += b.dense.weights.len() + b.dense.bias.len() + bn(b.bn.gamma.len());
        }
        count += self.output.weights.len() + self.output.bias.len();
        count + self.output_bn.as_ref().map_or(0, |b| bn(b.gamma.len()))
    }

    /// Training-mode forward pass on an `n x input_dim` batch. Uses batch
    /// statistics and updates the running averages.
    pub fn forward_train(&mut self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "training-mode forward needs a batch of at least 2, got {}",
                x.nrows()
            )));
        }
        self.check_input(&x)?;
        let (mom, eps) = (self.arch.bn_momentum, self.arch.bn_epsilon);
        let mut bn_caches = Vec::with_capacity(self.hidden.len() + 2);
        let mut dense_inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut activations = Vec::with_capacity(self.hidden.len());

        let (mut h, c) = self.input_bn.forward_train(&x.to_owned(), mom, eps);
        bn_caches.push(c);
        for block in &mut self.hidden {
            let z = block.dense.forward(&h);
            dense_inputs.push(h);
            let (u, c) = block.bn.forward_train(&z, mom, eps);
            bn_caches.push(c);
            let a = u.mapv_into(f64::tanh);
            activations.push(a.clone());
            h = a;
        }
        let mut out = self.output.forward(&h);
        dense_inputs.push(h);
        if let Some(bn) = &mut self.output_bn {
            let (y, c) = bn.forward_train(&out, mom, eps);
            bn_caches.push(c);
            out = y;
        }
        Ok((
            out,
            ForwardCache {
                bn: bn_caches,
                dense_inputs,
                activations,
            },
        ))
    }

    /// Inference-mode forward pass; row `i` of the output depends only on row `i` of the input.
    pub fn forward_inference(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let eps = self.arch.bn_epsilon;
        let mut h = self.input_bn.forward_inference(&x.to_owned(), eps);
        for block in &self.hidden {
            h = block
                .bn
                .forward_inference(&block.dense.forward(&h), eps)
                .mapv_into(f64::tanh);
        }
        let out = self.output.forward(&h);
        Ok(match &self.output_bn {
            Some(bn) => bn.forward_inference(&out, eps),
            None => out,
        })
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::InvalidInput(format!(
                "network expects {} input columns, got {}",
                self.arch.input_dim,
                x.ncols()
            )));
        }
        check_finite(x)
    }

    /// Exact gradients of a scalar batch loss given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Gradients {
        let mut blocks: Vec<Vec<f64>> = Vec::new();
        let mut bn_iter = cache.bn.iter().rev();
        let mut g = output_grad.to_owned();

        let mut tail: Vec<Vec<f64>> = Vec::new();
        if let Some(bn) = &self.output_bn {
            let (dx, dgamma, dbeta) = bn.backward(&g, bn_iter.next().expect("cache"));
            tail.push(dbeta);
            tail.push(dgamma);
            g = dx;
        }
        let out_in = cache.dense_inputs.last().expect("cache");
        tail.push(g.sum_axis(Axis(0)).to_vec());
        tail.push(as_vec(out_in.t().dot(&g)));
        g = g.dot(&self.output.weights.t());

        for (k, block) in self.hidden.iter().enumerate().rev() {
            let a = &cache.activations[k];
            g *= &a.mapv(|v| 1.0 - v * v);
            let (dz, dgamma, dbeta) = block.bn.backward(&g, bn_iter.next().expect("cache"));
            tail.push(dbeta);
            tail.push(dgamma);
            let input = &cache.dense_inputs[k];
            tail.push(dz.sum_axis(Axis(0)).to_vec());
            tail.push(as_vec(input.t().dot(&dz)));
            g = dz.dot(&block.dense.weights.t());
        }
        let (_, dgamma, dbeta) = self.input_bn.backward(&g, bn_iter.next().expect("cache"));
        blocks.push(dgamma);
        blocks.push(dbeta);
        blocks.extend(tail.into_iter().rev());
        Gradients { blocks }
    }

    /// Trainable parameter blocks in canonical order: input BN `(gamma, beta)`,
    /// then per hidden block `(weights, bias, gamma, beta)`, then output
    /// `(weights, bias)` and, if present, output BN `(gamma, beta)`.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        v.extend(self.input_bn.blocks_mut());
        for block in &mut self.hidden {
            v.extend(block.dense.blocks_mut());
            v.extend(block.bn.blocks_mut());
        }
        v.extend(self.output.blocks_mut());
        if let Some(bn) = &mut self.output_bn {
            v.extend(bn.blocks_mut());
        }
        v
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut v = vec!["input_bn.gamma".to_string(), "input_bn.beta".to_string()];
        for k in 0..self.hidden.len() {
            for part in ["dense.weights", "dense.bias", "bn.gamma", "bn.beta"] {
                v.push(format!("hidden[{k}].{part}"));
            }
        }
        v.push("output.weights".into());
        v.push("output.bias".into());
        if self.output_bn.is_some() {
            v.push("output_bn.gamma".into());
            v.push("output_bn.beta".into());
        }
        v
    }

    /// Multiplies every network output by `factor`.
    pub fn scale_output(&mut self, factor: f64) {
        match &mut self.output_bn {
            Some(bn) => {
                bn.gamma *= factor;
                bn.beta *= factor;
            }
            None => {
                self.output.weights *= factor;
                self.output.bias *= factor;
            }
        }
    }

    fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut v = vec![&self.input_bn];
        v.extend(self.hidden.iter().map(|b| &b.bn));
        v.extend(self.output_bn.as_ref());
        v
    }

    pub fn running_stats_valid(&self) -> bool {
        self.batch_norms().iter().all(|bn| {
            bn.running_var.iter().all(|v| *v >= 0.0 && v.is_finite())
                && bn.running_mean.iter().all(|v| v.is_finite())
        })
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let a = &self.arch;
        w.write_all(MAGIC)?;
        for v in [a.input_dim, a.output_dim, a.hidden_widths.len()]
            .into_iter()
            .chain(a.hidden_widths.iter().copied())
        {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&[u8::from(a.final_batch_norm)])?;
        w.write_all(&a.bn_momentum.to_le_bytes())?;
        w.write_all(&a.bn_epsilon.to_le_bytes())?;
        let mut put = |xs: &mut dyn Iterator<Item = &f64>| -> Result<()> {
            for x in xs {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        let put_bn = |bn: &BatchNorm, put: &mut dyn FnMut(&mut dyn Iterator<Item = &f64>) -> Result<()>| {
            put(&mut bn.gamma.iter())?;
            put(&mut bn.beta.iter())?;
            put(&mut bn.running_mean.iter())?;
            put(&mut bn.running_var.iter())
        };
        put_bn(&self.input_bn, &mut put)?;
        for block in &self.hidden {
            put(&mut block.dense.weights.iter())?;
            put(&mut block.dense.bias.iter())?;
            put_bn(&block.bn, &mut put)?;
        }
        put(&mut self.output.weights.iter())?;
        put(&mut self.output.bias.iter())?;
        if let Some(bn) = &self.output_bn {
            put_bn(bn, &mut put)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let u32_ = |r: &mut R| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let input_dim = u32_(&mut r)?;
        let output_dim = u32_(&mut r)?;
        let n_hidden = u32_(&mut r)?;
        if n_hidden > 1024 {
            return Err(Error::Checkpoint(format!("implausible depth {n_hidden}")));
        }
        let hidden_widths = (0..n_hidden).map(|_| u32_(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let f64_ = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let arch = NetworkArchitecture {
            input_dim,
            hidden_widths,
            output_dim,
            final_batch_norm: match flag[0] {
                0 => false,
                1 => true,
                other => return Err(Error::Checkpoint(format!("bad batch-norm flag {other}"))),
            },
            bn_momentum: f64_(&mut r)?,
            bn_epsilon: f64_(&mut r)?,
        };
        arch.validate()
            .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
        let mut net = Self::build(&arch, |i, o| Dense {
            weights: Array2::zeros((i, o)),
            bias: Array1::zeros(o),
        })?;
        let mut fill = |xs: &mut dyn Iterator<Item = &mut f64>| -> Result<()> {
            for x in xs {
                *x = f64_(&mut r)?;
            }
            Ok(())
        };
        let fill_bn = |bn: &mut BatchNorm, fill: &mut dyn FnMut(&mut dyn Iterator<Item = &mut f64>) -> Result<()>| {
            fill(&mut bn.gamma.iter_mut())?;
            fill(&mut bn.beta.iter_mut())?;
            fill(&mut bn.running_mean.iter_mut())?;
            fill(&mut bn.running_var.iter_mut())
        };
        fill_bn(&mut net.input_bn, &mut fill)?;
        for block in &mut net.hidden {
            fill(&mut block.dense.weights.iter_mut())?;
            fill(&mut block.dense.bias.iter_mut())?;
            fill_bn(&mut block.bn, &mut fill)?;
        }
        fill(&mut net.output.weights.iter_mut())?;
        fill(&mut net.output.bias.iter_mut())?;
        if let Some(bn) = &mut net.output_bn {
            fill_bn(bn, &mut fill)?;
        }
        Ok(net)
    }
}

fn as_vec(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

/// A network read as a density estimate supported on a hypercube.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDensity {
    pub net: NetworkParams,
    pub domain: Domain,
}

impl NeuralDensity {
    pub fn new(net: NetworkParams, domain: Domain) -> Result<Self> {
        if net.arch().input_dim != domain.dim() || net.arch().output_dim != 1 {
            return Err(Error::InvalidInput(format!(
                "density network must map R^{} to R, got {} -> {}",
                domain.dim(),
                net.arch().input_dim,
                net.arch().output_dim
            )));
        }
        Ok(Self { net, domain })
    }

    /// Raw network value on the domain, zero outside. Negative values are kept.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        if !self.domain.contains(x) {
            return 0.0;
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("point shape");
        self.net
            .forward_inference(view)
            .map(|o| o[[0, 0]])
            .unwrap_or(f64::NAN)
    }

    /// Evaluates every row of `points` (`n x d`).
    pub fn evaluate_batch(&self, points: ArrayView2<f64>) -> Vec<f64> {
        let d = points.ncols();
        let inside: Vec<usize> = (0..points.nrows())
            .filter(|&i| {
                let row = points.row(i);
                row.iter().all(|v| v.is_finite())
                    && self.domain.contains(row.as_slice().unwrap_or(&row.to_vec()))
            })
            .collect();
        let mut out = vec![0.0; points.nrows()];
        if inside.is_empty() {
            return out;
        }
        let gathered = Array2::from_shape_fn((inside.len(), d), |(k, j)| points[[inside[k], j]]);
        let values = self
            .net
            .forward_inference(gathered.view())
            .expect("finite, shape-checked input");
        for (k, &i) in inside.iter().enumerate() {
            out[i] = values[[k, 0]];
        }
        out
    }
}
