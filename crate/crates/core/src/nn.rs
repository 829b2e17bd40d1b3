//! Minimal dense-network engine: batched forward/backward passes, Adam,
//! Polyak target blending, and the stable softmax/logsumexp primitives the
//! training losses are built from.
//!
//! Everything is double precision. Batches are column-major: a batch of B
//! input vectors is an `[in_dim, B]` matrix, so a layer is one GEMM.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully-connected network with ReLU hidden layers and an identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_dims: Vec<usize>,
    /// Per layer, `[out, in]`.
    weights: Vec<Array2<f64>>,
    /// Per layer, `[out]`.
    biases: Vec<Array1<f64>>,
}

/// Post-activation values kept from a forward pass for backprop.
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l]` is the ReLU output of
    /// hidden layer `l`. The final (linear) output is not needed here.
    activations: Vec<Array2<f64>>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl DenseNet {
    /// Initializes weights uniformly in ±sqrt(6/(fan_in+fan_out)), biases zero.
    pub fn new(layer_dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output dims");
        assert!(layer_dims.iter().all(|&d| d > 0), "zero-width layer");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-limit..limit)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        DenseNet {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        }
    }

    /// All-zero parameters; handy for tests and fixed points.
    pub fn zeros(layer_dims: &[usize]) -> Self {
        let weights = layer_dims
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        DenseNet {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "DenseNet::forward input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut act = Array1::from_vec(input.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&act) + b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            act = z;
        }
        Ok(act.to_vec())
    }

    /// Batched forward pass; `input` is `[in_dim, B]`.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_batch_cached(input)?.0)
    }

    /// Batched forward pass that keeps activations for `backward_batch`.
    pub fn forward_batch_cached(
        &self,
        input: &Array2<f64>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if input.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "DenseNet::forward_batch input",
                expected: self.input_dim(),
                got: input.nrows(),
            });
        }
        let mut activations = vec![input.clone()];
        let last = self.weights.len() - 1;
        let mut current = input.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&current);
            for mut col in z.columns_mut() {
                col += b;
            }
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
                activations.push(z.clone());
            }
            current = z;
        }
        Ok((current, ForwardCache { activations }))
    }

    /// Exact reverse-mode gradients. `output_grad` is ∂loss/∂output as
    /// `[out_dim, B]` (any batch scaling baked in by the caller). Returns the
    /// parameter gradients and ∂loss/∂input.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if output_grad.nrows() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "DenseNet::backward_batch output_grad",
                expected: self.output_dim(),
                got: output_grad.nrows(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.clone();
        for l in (0..self.weights.len()).rev() {
            let upstream_act = &cache.activations[l];
            // `dot` may hand back an F-layout result; the flat accessors and
            // Adam assume standard layout, so normalize here.
            let dw = delta.dot(&upstream_act.t());
            grads.weights[l] = if dw.is_standard_layout() {
                dw
            } else {
                dw.as_standard_layout().into_owned()
            };
            grads.biases[l] = delta.sum_axis(Axis(1));
            let mut input_grad = self.weights[l].t().dot(&delta);
            if l > 0 {
                // ReLU mask: post-activation is positive iff pre-activation was.
                azip_relu_mask(&mut input_grad, upstream_act);
            }
            delta = input_grad;
        }
        Ok((grads, delta))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.len())
            .chain(self.biases.iter().map(|b| b.len()))
            .sum()
    }

    /// Flat parameter accessor: layer by layer, weights row-major then bias.
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.len() {
                return *w.as_slice().unwrap().get(idx).unwrap();
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            if idx < w.len() {
                w.as_slice_mut().unwrap()[idx] = value;
                return;
            }
            idx -= w.len();
            if idx < b.len() {
                b[idx] = value;
                return;
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Serializes to the self-describing model document.
    pub fn to_document(&self, config_hash: &str) -> NetDocument {
        let mut params = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            params.extend(w.iter().copied());
            params.extend(b.iter().copied());
        }
        NetDocument {
            layer_dims: self.layer_dims.clone(),
            activation: "relu".to_string(),
            params,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn from_document(doc: &NetDocument) -> Result<DenseNet> {
        if doc.activation != "relu" {
            return Err(Error::Format(format!(
                "unsupported activation tag '{}'",
                doc.activation
            )));
        }
        if doc.layer_dims.len() < 2 || doc.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Format("bad layer_dims".into()));
        }
        let mut net = DenseNet::zeros(&doc.layer_dims);
        if doc.params.len() != net.param_count() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                net.param_count(),
                doc.params.len()
            )));
        }
        let mut cursor = 0;
        for (w, b) in net.weights.iter_mut().zip(&mut net.biases) {
            let wlen = w.len();
            w.as_slice_mut()
                .unwrap()
                .copy_from_slice(&doc.params[cursor..cursor + wlen]);
            cursor += wlen;
            let blen = b.len();
            b.as_slice_mut()
                .unwrap()
                .copy_from_slice(&doc.params[cursor..cursor + blen]);
            cursor += blen;
        }
        Ok(net)
    }
}

fn azip_relu_mask(grad: &mut Array2<f64>, post_activation: &Array2<f64>) {
    ndarray::Zip::from(grad)
        .and(post_activation)
        .for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
}

/// On-disk form of one network: dims, activation tag, flat parameters, and
/// the hash of the environment config it was trained against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetDocument {
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub params: Vec<f64>,
    pub config_hash: String,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Flat accessor matching `DenseNet::get_param` ordering.
    pub fn get(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.len() {
                return w.as_slice().unwrap()[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("gradient index out of range");
    }
}

/// Adam optimizer state, shaped like the network it updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }
}

/// One Adam update with bias correction. A non-finite gradient aborts the
/// step and leaves the parameters untouched.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "adam gradient",
            step: state.step as usize,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.eps);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for l in 0..net.weights.len() {
        let w = net.weights[l].as_slice_mut().unwrap();
        let g = grads.weights[l].as_slice().unwrap();
        let m = state.m.weights[l].as_slice_mut().unwrap();
        let v = state.v.weights[l].as_slice_mut().unwrap();
        for i in 0..w.len() {
            update(&mut w[i], g[i], &mut m[i], &mut v[i]);
        }
        let b = net.biases[l].as_slice_mut().unwrap();
        let g = grads.biases[l].as_slice().unwrap();
        let m = state.m.biases[l].as_slice_mut().unwrap();
        let v = state.v.biases[l].as_slice_mut().unwrap();
        for i in 0..b.len() {
            update(&mut b[i], g[i], &mut m[i], &mut v[i]);
        }
    }
    Ok(())
}

/// Blends `target <- tau * source + (1 - tau) * target`.
pub fn polyak_blend(target: &mut DenseNet, source: &DenseNet, tau: f64) {
    assert_eq!(target.layer_dims, source.layer_dims);
    for (t, s) in target.weights.iter_mut().zip(&source.weights) {
        t.zip_mut_with(s, |t, &s| *t = tau * s + (1.0 - tau) * *t);
    }
    for (t, s) in target.biases.iter_mut().zip(&source.biases) {
        t.zip_mut_with(s, |t, &s| *t = tau * s + (1.0 - tau) * *t);
    }
}

/// Max-shifted log-sum-exp.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("logsumexp"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Stable softmax; strictly positive entries summing to one.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Column-wise softmax of a `[actions, B]` logit matrix.
pub fn softmax_columns(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut col in out.columns_mut() {
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in col.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Column-wise logsumexp of a `[actions, B]` matrix.
pub fn logsumexp_columns(values: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(values.ncols());
    for (b, col) in values.columns().into_iter().enumerate() {
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = col.iter().map(|v| (v - max).exp()).sum();
        out[b] = max + sum.ln();
    }
    out
}
