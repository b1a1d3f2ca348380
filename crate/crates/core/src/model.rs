//! Small multi-layer perceptron: ReLU hidden layers, sigmoid head, explicit
//! reverse-mode gradients and an Adam optimizer with per-layer learning-rate
//! multipliers.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{clamp_prob, sigmoid};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Shape (fan_in, fan_out).
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub lr_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `(D, hidden..., M)`.
    pub dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    /// Width of the embedding exposed in [`ForwardTrace::embedding`].
    pub fn embedding_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    pub fn set_last_layer_lr_multiplier(&mut self, mult: f64) {
        if let Some(l) = self.layers.last_mut() {
            l.lr_multiplier = mult;
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }
}

/// Uniform `±1/√fan_in` weights, zero biases.
pub fn mlp_init(dims: &[usize], seed: u64) -> Result<ModelParams> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!("model dims {dims:?} need >= 2 positive entries")));
    }
    let mut r = rng::stream(seed, rng::STREAM_MODEL_INIT);
    let layers = dims
        .windows(2)
        .map(|w| {
            let bound = 1.0 / (w[0] as f64).sqrt();
            Layer {
                weights: Array2::from_shape_fn((w[0], w[1]), |_| r.random_range(-bound..bound)),
                biases: Array1::zeros(w[1]),
                lr_multiplier: 1.0,
            }
        })
        .collect();
    Ok(ModelParams {
        dims: dims.to_vec(),
        layers,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Array2<f64>,
    /// Clamped sigmoid of the logits.
    pub probs: Array2<f64>,
    /// Input of the last layer (the final hidden activation, or the raw
    /// features for a single-layer model).
    pub embedding: Array2<f64>,
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
}

pub fn forward(params: &ModelParams, x: &Array2<f64>) -> Result<ForwardTrace> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "input has {} features, model expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut h = x.clone();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = h.dot(&layer.weights);
        z += &layer.biases;
        inputs.push(h);
        if i < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        h = z;
    }
    let probs = h.mapv(|z| clamp_prob(sigmoid(z)));
    Ok(ForwardTrace {
        embedding: inputs[last].clone(),
        logits: h,
        probs,
        inputs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Reverse pass from `d/dz` on the logits and optional `d/dembedding`.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_z: &Array2<f64>,
    grad_embedding: Option<&Array2<f64>>,
) -> Result<Vec<LayerGrad>> {
    if grad_z.dim() != trace.logits.dim() {
        return Err(Error::Dimension(format!(
            "logit gradient {:?} vs logits {:?}",
            grad_z.dim(),
            trace.logits.dim()
        )));
    }
    if let Some(g) = grad_embedding {
        if g.dim() != trace.embedding.dim() {
            return Err(Error::Dimension(format!(
                "embedding gradient {:?} vs embedding {:?}",
                g.dim(),
                trace.embedding.dim()
            )));
        }
    }
    let n = params.layers.len();
    let mut grads = Vec::with_capacity(n);
    let mut delta = grad_z.clone();
    for i in (0..n).rev() {
        let input = &trace.inputs[i];
        let layer = &params.layers[i];
        grads.push(LayerGrad {
            weights: input.t().dot(&delta),
            biases: delta.sum_axis(Axis(0)),
        });
        if i == 0 {
            break;
        }
        let mut upstream = delta.dot(&layer.weights.t());
        if i == n - 1 {
            if let Some(g) = grad_embedding {
                upstream += g;
            }
        }
        // `input` is the ReLU output of the previous layer; derivative is 0 at 0.
        ndarray::Zip::from(&mut upstream).and(input).for_each(|u, &a| {
            if a <= 0.0 {
                *u = 0.0;
            }
        });
        delta = upstream;
    }
    grads.reverse();
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    m: Vec<LayerMoments>,
    v: Vec<LayerMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerMoments {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| LayerMoments {
                    w: Array2::zeros(l.weights.dim()),
                    b: Array1::zeros(l.biases.len()),
                })
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment_norm(&self) -> f64 {
        self.m
            .iter()
            .map(|l| l.w.iter().chain(l.b.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Bias-corrected Adam update; layer `i` uses `base_lr · lr_multiplier_i`.
pub fn adam_step(params: &mut ModelParams, grads: &[LayerGrad], state: &mut AdamState, base_lr: f64, cfg: AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((layer, g), m), v) in params
        .layers
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let lr = base_lr * layer.lr_multiplier;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        };
        ndarray::Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.w)
            .and(&mut v.w)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.biases)
            .and(&g.biases)
            .and(&mut m.b)
            .and(&mut v.b)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
}
