//! Dense feedforward classifier with exact analytic gradients.
//!
//! The model is a ReLU MLP whose final linear layer is split into disjoint
//! per-task head slices, so multiple binary/multiclass tasks share one trunk.
//! Everything is 64-bit and framework-free: forward caches activations,
//! backward replays them, and the gradient of the weighted softmax
//! cross-entropy is computed in closed form (and checked against central
//! finite differences in the tests).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Weights and biases of the MLP, with the output layer partitioned into
/// per-task head slices.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `[d, h1, ..., Σ C_t]`
    pub layer_dims: Vec<usize>,
    /// Disjoint ranges covering the output dimension, one per task.
    pub head_slices: Vec<Range<usize>>,
    /// `weights[l]` has shape `(layer_dims[l+1], layer_dims[l])`.
    pub(crate) weights: Vec<Matrix>,
    pub(crate) biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.head_slices.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_classes(&self, task: usize) -> usize {
        self.head_slices[task].len()
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    /// Flatten every parameter in declaration order (per layer: weights
    /// row-major, then biases) — the checkpoint layout.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }

    /// Inverse of [`write_flat`]: load parameters from a flat slice.
    pub fn read_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.num_params() {
            return Err(Error::Config(format!(
                "parameter blob holds {} values but the model needs {}",
                data.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wn = w.data().len();
            w.data_mut().copy_from_slice(&data[offset..offset + wn]);
            offset += wn;
            let bn = b.len();
            b.copy_from_slice(&data[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }
}

/// Gradient (or optimizer-velocity) buffer shaped exactly like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub(crate) weights: Vec<Matrix>,
    pub(crate) biases: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(params: &MlpParams) -> Self {
        GradBuffer {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= s;
            }
        }
    }

    /// `self += s · other`, elementwise.
    pub fn add_scaled(&mut self, other: &GradBuffer, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += s * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }

    pub fn read_flat(&mut self, data: &[f64]) -> Result<()> {
        let need: usize = self.weights.iter().map(|w| w.data().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>();
        if data.len() != need {
            return Err(Error::Config(format!(
                "velocity blob holds {} values but the model needs {need}",
                data.len()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wn = w.data().len();
            w.data_mut().copy_from_slice(&data[offset..offset + wn]);
            offset += wn;
            let bn = b.len();
            b.copy_from_slice(&data[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }
}

/// Shadow copy of the model updated as `ema ← α·ema + (1−α)·live` after every
/// step; evaluation reads this copy for stability.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaParams {
    pub params: MlpParams,
    pub decay: f64,
}

impl EmaParams {
    /// Initialize the shadow as a copy of the live model.
    pub fn new(live: &MlpParams, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config("EMA decay must be in [0, 1)".into()));
        }
        Ok(EmaParams {
            params: live.clone(),
            decay,
        })
    }

    pub fn update(&mut self, live: &MlpParams) {
        ema_update(&mut self.params, live, self.decay);
    }
}

/// He-uniform initialization: weights ~ U(−√(6/fan_in), √(6/fan_in)), biases
/// zero. Deterministic in the seed.
pub fn init(layer_dims: &[usize], num_classes: &[usize], seed: u64) -> Result<MlpParams> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(
            "layer_dims needs at least an input and an output layer".into(),
        ));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::Config("layer_dims entries must be >= 1".into()));
    }
    if num_classes.is_empty() || num_classes.iter().any(|&c| c < 2) {
        return Err(Error::Config("every task needs at least two classes".into()));
    }
    let total: usize = num_classes.iter().sum();
    if total != *layer_dims.last().unwrap() {
        return Err(Error::Config(format!(
            "output layer has {} units but the task heads need {total}",
            layer_dims.last().unwrap()
        )));
    }
    let mut head_slices = Vec::with_capacity(num_classes.len());
    let mut start = 0;
    for &c in num_classes {
        head_slices.push(start..start + c);
        start += c;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / fan_in as f64).sqrt();
        let mut w = Matrix::zeros(fan_out, fan_in);
        for v in w.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpParams {
        layer_dims: layer_dims.to_vec(),
        head_slices,
        weights,
        biases,
    })
}

/// Layer inputs captured during a forward pass, for the matching backward.
pub struct ForwardCache {
    /// `activations[l]` is the input to layer `l`; `activations[0]` is X.
    activations: Vec<Matrix>,
}

/// Forward pass returning full-width logits and the activation cache. Pure in
/// `(params, x)`.
pub fn forward(params: &MlpParams, x: &Matrix) -> (Matrix, ForwardCache) {
    assert_eq!(x.cols(), params.input_dim(), "input width mismatch");
    let layers = params.num_layers();
    let mut activations = Vec::with_capacity(layers);
    let mut current = x.clone();
    for l in 0..layers {
        let mut z = current.matmul_transpose_b(&params.weights[l]);
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&params.biases[l]) {
                *v += b;
            }
        }
        activations.push(current);
        if l + 1 < layers {
            for v in z.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        current = z;
    }
    (current, ForwardCache { activations })
}

/// Forward pass without a cache, for evaluation.
pub fn logits(params: &MlpParams, x: &Matrix) -> Matrix {
    forward(params, x).0
}

/// Weighted softmax cross-entropy over rows: `loss = Σ_i w_i · CE_i`, with
/// the exact gradient w.r.t. the logits. Stabilized by max-subtraction.
pub fn softmax_xent(logits: &Matrix, targets: &[u32], weights: &[f64]) -> (f64, Matrix) {
    assert_eq!(logits.rows(), targets.len(), "one target per row");
    assert_eq!(logits.rows(), weights.len(), "one weight per row");
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        let w = weights[i];
        debug_assert!(w >= 0.0, "row weights must be non-negative");
        if w == 0.0 {
            continue;
        }
        let row = logits.row(i);
        let target = targets[i] as usize;
        debug_assert!(target < row.len(), "target class out of range");
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        loss += w * (denom.ln() - (row[target] - max));
        let drow = dlogits.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / denom;
            drow[j] = w * (p - f64::from(j == target));
        }
    }
    (loss, dlogits)
}

/// Exact gradients of the (summed, weighted) loss w.r.t. every parameter.
pub fn backward(params: &MlpParams, cache: &ForwardCache, dlogits: &Matrix) -> GradBuffer {
    assert_eq!(
        cache.activations.len(),
        params.num_layers(),
        "cache does not match this model"
    );
    assert_eq!(
        cache.activations[0].rows(),
        dlogits.rows(),
        "cache does not match this batch"
    );
    let mut grads = GradBuffer::zeros_like(params);
    let mut delta = dlogits.clone();
    for l in (0..params.num_layers()).rev() {
        let input = &cache.activations[l];
        grads.weights[l] = delta.matmul_transpose_a(input);
        for i in 0..delta.rows() {
            for (g, d) in grads.biases[l].iter_mut().zip(delta.row(i)) {
                *g += d;
            }
        }
        if l > 0 {
            let mut prev = delta.matmul(&params.weights[l]);
            // ReLU derivative: the cached input to layer l is the previous
            // layer's post-activation output, zero exactly where ReLU clamped.
            for i in 0..prev.rows() {
                for (v, &a) in prev.row_mut(i).iter_mut().zip(input.row(i)) {
                    if a <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
    grads
}

/// `ema ← decay·ema + (1−decay)·live`, elementwise.
pub fn ema_update(ema: &mut MlpParams, live: &MlpParams, decay: f64) {
    for (e, l) in ema.weights.iter_mut().zip(&live.weights) {
        for (x, y) in e.data_mut().iter_mut().zip(l.data()) {
            *x = decay * *x + (1.0 - decay) * y;
        }
    }
    for (e, l) in ema.biases.iter_mut().zip(&live.biases) {
        for (x, y) in e.iter_mut().zip(l) {
            *x = decay * *x + (1.0 - decay) * y;
        }
    }
}

/// Row-wise softmax probabilities.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        let o = out.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            o[j] = e;
            denom += e;
        }
        for v in o {
            *v /= denom;
        }
    }
    out
}

/// Copy one task's slice of the full-width logits.
pub fn head(logits: &Matrix, slice: &Range<usize>) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), slice.len());
    for i in 0..logits.rows() {
        out.row_mut(i).copy_from_slice(&logits.row(i)[slice.clone()]);
    }
    out
}

/// Predicted class (argmax, lowest index on ties) and confidence (max softmax
/// probability) for one task's head.
pub fn predict(params: &MlpParams, x: &Matrix, task: usize) -> (Vec<u32>, Vec<f64>) {
    let full = logits(params, x);
    let probs = softmax_rows(&head(&full, &params.head_slices[task]));
    let mut classes = Vec::with_capacity(probs.rows());
    let mut confidences = Vec::with_capacity(probs.rows());
    for i in 0..probs.rows() {
        let row = probs.row(i);
        let (mut best, mut best_p) = (0usize, row[0]);
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > best_p {
                best = j;
                best_p = p;
            }
        }
        classes.push(best as u32);
        confidences.push(best_p);
    }
    (classes, confidences)
}
