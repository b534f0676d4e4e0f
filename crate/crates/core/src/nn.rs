//! Multilayer perceptrons with hand-written backpropagation.
//!
//! Weights are stored `fan_in x fan_out` so a batch `x` (`n x fan_in`) maps
//! to `x W + b`. Hidden layers share one activation; the output layer is
//! always linear.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. ReLU uses 0 at 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Usage(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weights: Tensor,
    /// `1 x fan_out`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Values kept from the forward pass for [`MlpParams::backward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

/// Anything whose trainable values can be flattened to one vector, in a
/// fixed order, and written back.
pub trait Parameters {
    fn flatten(&self) -> Vec<f64>;

    /// Overwrites parameters from `values`, which must have
    /// `flatten().len()` entries.
    fn load_flat(&mut self, values: &[f64]) -> Result<()>;

    fn num_params(&self) -> usize {
        self.flatten().len()
    }
}

pub(crate) fn load_tensor(t: &mut Tensor, values: &[f64], offset: &mut usize) -> Result<()> {
    let len = t.rows() * t.cols();
    let slice = values
        .get(*offset..*offset + len)
        .ok_or_else(|| Error::Usage("flat parameter vector too short".into()))?;
    *t = Tensor::new(t.rows(), t.cols(), slice.to_vec())?;
    *offset += len;
    Ok(())
}

impl MlpParams {
    pub fn new(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        let p = MlpParams { layers, activation };
        p.check()?;
        Ok(p)
    }

    /// Consecutive widths chain and every bias is `1 x fan_out`.
    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Usage("an MLP needs at least one layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.shape() != Shape::new(1, l.weights.cols()) {
                return Err(Error::Shape {
                    op: "mlp bias",
                    left: l.weights.shape(),
                    right: l.bias.shape(),
                });
            }
            if i > 0 && self.layers[i - 1].weights.cols() != l.weights.rows() {
                return Err(Error::Shape {
                    op: "mlp layer chain",
                    left: self.layers[i - 1].weights.shape(),
                    right: l.weights.shape(),
                });
            }
        }
        Ok(())
    }

    /// Glorot-uniform weights `U(−s, s)`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases. `sizes` lists every width from input to output.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let s = if fan_in + fan_out == 0 {
                    0.0
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let data = (0..fan_in * fan_out)
                    .map(|_| if s > 0.0 { rng.gen_range(-s..s) } else { 0.0 })
                    .collect();
                Dense {
                    weights: Tensor::new(fan_in, fan_out, data).expect("finite init"),
                    bias: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        MlpParams { layers, activation }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Tensor::zeros(l.weights.rows(), l.weights.cols()),
                    bias: Tensor::zeros(1, l.bias.cols()),
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").weights.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape {
                op: "mlp_forward",
                left: x.shape(),
                right: self.layers[0].weights.shape(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = a.matmul(&l.weights)?.add_row_broadcast(&l.bias)?;
            let next = if i == last {
                z.clone()
            } else {
                let act = self.activation;
                z.map(|v| act.apply(v))?
            };
            cache.inputs.push(a);
            cache.pre.push(z);
            a = next;
        }
        Ok((a, cache))
    }

    /// Parameter gradients and the gradient with respect to the input, given
    /// the gradient of the loss with respect to the output.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Tensor) -> Result<(MlpParams, Tensor)> {
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let dz = if i == last {
                delta
            } else {
                let act = self.activation;
                let d = cache.pre[i].map(|z| act.derivative(z))?;
                delta.hadamard(&d)?
            };
            let dw = cache.inputs[i].transpose().matmul(&dz)?;
            let db = if dz.rows() == 0 {
                Tensor::zeros(1, dz.cols())
            } else {
                dz.aggregate(crate::Aggregator::Sum)?
            };
            delta = dz.matmul(&self.layers[i].weights.transpose())?;
            grads.push(Dense { weights: dw, bias: db });
        }
        grads.reverse();
        Ok((
            MlpParams {
                layers: grads,
                activation: self.activation,
            },
            delta,
        ))
    }
}

impl Parameters for MlpParams {
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        let mut offset = 0;
        for l in &mut self.layers {
            load_tensor(&mut l.weights, values, &mut offset)?;
            load_tensor(&mut l.bias, values, &mut offset)?;
        }
        if offset != values.len() {
            return Err(Error::Usage(format!("{} flat values for {offset} parameters", values.len())));
        }
        Ok(())
    }
}

pub fn mlp_forward(x: &Tensor, p: &MlpParams) -> Result<Tensor> {
    p.forward(x)
}

/// Mean of squared elementwise differences.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let d = pred.sub(target).map_err(|_| Error::Shape {
        op: "mse_loss",
        left: pred.shape(),
        right: target.shape(),
    })?;
    let n = d.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / n as f64)
}

/// `∂ mse / ∂ pred`.
pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let n = pred.data().len().max(1) as f64;
    pred.sub(target)?.scale(2.0 / n)
}

/// Gradient of `mse_loss(mlp_forward(x), target)` with respect to every
/// parameter, shaped like `p`.
pub fn mlp_gradients(x: &Tensor, target: &Tensor, p: &MlpParams) -> Result<MlpParams> {
    let (y, cache) = p.forward_cached(x)?;
    let g = mse_grad(&y, target)?;
    Ok(p.backward(&cache, &g)?.0)
}

/// `p − lr · grads`.
pub fn sgd_step<P: Parameters + Clone>(p: &P, grads: &P, lr: f64) -> Result<P> {
    let values = p.flatten();
    let g = grads.flatten();
    if values.len() != g.len() {
        return Err(Error::Usage(format!("{} parameters but {} gradients", values.len(), g.len())));
    }
    let mut out = p.clone();
    out.load_flat(&values.iter().zip(&g).map(|(v, d)| v - lr * d).collect::<Vec<_>>())?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// `None` trains full-batch; otherwise rows are reshuffled every epoch
    /// from `seed`.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

/// Index batches for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    match batch {
        Some(b) if b > 0 && b < n => {
            idx.shuffle(rng);
            idx.chunks(b).map(<[usize]>::to_vec).collect()
        }
        _ => vec![idx],
    }
}

/// Gradient descent on mean squared error. Returns the trained parameters and
/// the mean pre-update loss of each epoch.
pub fn train_mlp(p: &MlpParams, x: &Tensor, y: &Tensor, cfg: &TrainConfig) -> Result<(MlpParams, Vec<f64>)> {
    if x.rows() == 0 || x.rows() != y.rows() {
        return Err(Error::Usage(format!("cannot train on {} inputs and {} targets", x.rows(), y.rows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = p.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(x.rows(), cfg.batch_size, &mut rng);
        for b in &batches {
            let (xb, yb) = (x.select_rows(b), y.select_rows(b));
            let (pred, cache) = params.forward_cached(&xb)?;
            let loss = mse_loss(&pred, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            total += loss;
            let (g, _) = params.backward(&cache, &mse_grad(&pred, &yb)?)?;
            params = sgd_step(&params, &g, cfg.lr)
                .map_err(|e| Error::Numerical(format!("update diverged at epoch {epoch}: {e}")))?;
        }
        history.push(total / batches.len() as f64);
    }
    Ok((params, history))
}
