//! Minimal dense network: a ReLU feature extractor feeding a linear
//! classifier, with reverse-mode gradients for the combined
//! classification + prototype-alignment loss and plain SGD.
//!
//! Everything is `f64` and allocation-per-call; determinism matters more
//! than throughput at the scales this crate targets.

use crate::prototype::PrototypeSet;
use crate::tensor::{Tensor, TensorError};
use rand::rngs::StdRng;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch { context: &'static str, expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("{labels} labels for a batch of {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("prototype dimension {proto} does not match feature dimension {feature}")]
    PrototypeDim { proto: usize, feature: usize },
    #[error("prototype class {class} out of range for {classes} classes")]
    PrototypeClass { class: u32, classes: usize },
    #[error("extractor must have at least one layer")]
    EmptyExtractor,
    #[error("layer {index} input dimension {got} does not chain with previous output {expected}")]
    LayerChain { index: usize, expected: usize, got: usize },
    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },
}

/// One dense layer: row-major weights of shape `(out_dim, in_dim)` plus a
/// bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, NnError> {
        if weights.len() != in_dim * out_dim {
            return Err(NnError::ShapeMismatch {
                context: "layer weights",
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(NnError::ShapeMismatch { context: "layer bias", expected: out_dim, got: bias.len() });
        }
        Ok(Self { in_dim, out_dim, weights, bias })
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// He-uniform weights, zero bias; the init of choice for the ReLU stack.
    fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim] }
    }

    /// Xavier-uniform weights, zero bias; used for the linear classifier.
    fn xavier_uniform(in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim] }
    }
}

/// Feature-extractor layers (ReLU after each) plus a linear classifier
/// mapping the feature dimension to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub extractor: Vec<DenseLayer>,
    pub classifier: DenseLayer,
}

impl ModelParams {
    pub fn new(extractor: Vec<DenseLayer>, classifier: DenseLayer) -> Result<Self, NnError> {
        if extractor.is_empty() {
            return Err(NnError::EmptyExtractor);
        }
        for (i, pair) in extractor.windows(2).enumerate() {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(NnError::LayerChain { index: i + 1, expected: pair[0].out_dim, got: pair[1].in_dim });
            }
        }
        let last = extractor.last().expect("nonempty");
        if classifier.in_dim != last.out_dim {
            return Err(NnError::LayerChain {
                index: extractor.len(),
                expected: last.out_dim,
                got: classifier.in_dim,
            });
        }
        Ok(Self { extractor, classifier })
    }

    /// Randomly initialized network `input -> hidden.. -> feature_dim -> num_classes`.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        num_classes: usize,
        rng: &mut StdRng,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        let extractor = dims.windows(2).map(|w| DenseLayer::he_uniform(w[0], w[1], rng)).collect();
        let classifier = DenseLayer::xavier_uniform(feature_dim, num_classes, rng);
        Self { extractor, classifier }
    }

    /// All-zero network with the same layout as [`ModelParams::init`].
    pub fn zeros(input_dim: usize, hidden: &[usize], feature_dim: usize, num_classes: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        let extractor = dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect();
        let classifier = DenseLayer::zeros(feature_dim, num_classes);
        Self { extractor, classifier }
    }

    pub fn input_dim(&self) -> usize {
        self.extractor[0].in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim
    }

    /// Total scalar parameter count (weights + biases, extractor + classifier).
    pub fn param_count(&self) -> usize {
        self.extractor
            .iter()
            .chain(std::iter::once(&self.classifier))
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

/// Per-layer gradient buffers, shape-congruent with [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<LayerGrad>,
    pub classifier: LayerGrad,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let layer = |l: &DenseLayer| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] };
        Self { extractor: params.extractor.iter().map(layer).collect(), classifier: layer(&params.classifier) }
    }

    fn check_finite(&self) -> Result<(), NnError> {
        let finite = |g: &LayerGrad| g.weights.iter().chain(&g.bias).all(|v| v.is_finite());
        if self.extractor.iter().all(finite) && finite(&self.classifier) {
            Ok(())
        } else {
            Err(NnError::NonFinite { context: "gradients" })
        }
    }

    /// Squared Euclidean norm over every entry.
    pub fn norm_sq(&self) -> f64 {
        self.extractor
            .iter()
            .chain(std::iter::once(&self.classifier))
            .flat_map(|g| g.weights.iter().chain(&g.bias))
            .map(|v| v * v)
            .sum()
    }
}

/// Dot product with four independent accumulators: fixed reassociation
/// keeps it deterministic while breaking the add dependency chain.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y[b] = W x[b] + bias` for every row of a flat `(rows, in_dim)` buffer.
fn linear(x: &[f64], rows: usize, layer: &DenseLayer) -> Vec<f64> {
    let (ind, outd) = (layer.in_dim, layer.out_dim);
    let mut y = vec![0.0; rows * outd];
    for b in 0..rows {
        let xr = &x[b * ind..(b + 1) * ind];
        let yr = &mut y[b * outd..(b + 1) * outd];
        for (o, out) in yr.iter_mut().enumerate() {
            *out = layer.bias[o] + dot(&layer.weights[o * ind..(o + 1) * ind], xr);
        }
    }
    y
}

fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Post-activation buffers of each extractor layer plus the raw logits.
struct Trace {
    /// `activations[0]` is the input batch; `activations[i]` is the output of
    /// extractor layer `i-1` after ReLU. Each is flat `(rows, dim)`.
    activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
    rows: usize,
}

fn forward_trace(params: &ModelParams, batch: &Tensor) -> Result<Trace, NnError> {
    let (rows, cols) = batch.dim2()?;
    if rows == 0 {
        return Err(NnError::ShapeMismatch { context: "batch rows", expected: 1, got: 0 });
    }
    if cols != params.input_dim() {
        return Err(NnError::ShapeMismatch { context: "batch columns", expected: params.input_dim(), got: cols });
    }
    let mut activations = Vec::with_capacity(params.extractor.len() + 1);
    activations.push(batch.data().to_vec());
    for layer in &params.extractor {
        let mut y = linear(activations.last().expect("input present"), rows, layer);
        relu_inplace(&mut y);
        activations.push(y);
    }
    let logits = linear(activations.last().expect("features present"), rows, &params.classifier);
    Ok(Trace { activations, logits, rows })
}

/// Runs the extractor and classifier over a `(B, input_dim)` batch,
/// returning `(features, logits)` of shapes `(B, feature_dim)` and
/// `(B, num_classes)`.
pub fn forward(params: &ModelParams, batch: &Tensor) -> Result<(Tensor, Tensor), NnError> {
    let trace = forward_trace(params, batch)?;
    let features = Tensor::new(
        vec![trace.rows, params.feature_dim()],
        trace.activations.last().expect("features present").clone(),
    )?;
    let logits = Tensor::new(vec![trace.rows, params.num_classes()], trace.logits)?;
    Ok((features, logits))
}

/// Row-wise `log(sum(exp(..)))`, shifted by the row max so large logits
/// cannot overflow.
fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean negative log-softmax of the true class over the batch.
pub fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<f64, NnError> {
    let (rows, classes) = logits.dim2()?;
    if labels.len() != rows {
        return Err(NnError::LabelCount { labels: labels.len(), rows });
    }
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let row = logits.row(b);
        total += log_sum_exp(row) - row[label as usize];
    }
    let loss = total / rows as f64;
    if !loss.is_finite() {
        return Err(NnError::NonFinite { context: "cross_entropy" });
    }
    Ok(loss)
}

/// Gradient of the combined loss `L = L_S + lambda * L_R` with respect to
/// every parameter, returned together with the two loss terms.
///
/// `local_protos` must be the per-class feature means of this batch under
/// `params` (what [`crate::prototype::local_prototypes`] returns for the
/// batch); the alignment term is differentiated through those batch means.
/// An empty `global_protos` or `lambda == 0` leaves the alignment path out
/// entirely, so the result is bitwise identical to a pure classification
/// gradient.
pub fn backward(
    params: &ModelParams,
    batch: &Tensor,
    labels: &[u32],
    local_protos: &PrototypeSet,
    global_protos: &PrototypeSet,
    lambda: f64,
) -> Result<(Gradients, f64, f64), NnError> {
    let trace = forward_trace(params, batch)?;
    let rows = trace.rows;
    let classes = params.num_classes();
    let feature_dim = params.feature_dim();
    if labels.len() != rows {
        return Err(NnError::LabelCount { labels: labels.len(), rows });
    }
    for &label in labels {
        if label as usize >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
    }
    for set in [local_protos, global_protos] {
        if let Some(dim) = set.dim() {
            if dim != feature_dim {
                return Err(NnError::PrototypeDim { proto: dim, feature: feature_dim });
            }
        }
        if let Some(class) = set.classes().find(|&c| c as usize >= classes) {
            return Err(NnError::PrototypeClass { class, classes });
        }
    }

    // Classification term: softmax cross-entropy, averaged over the batch.
    let mut loss_s = 0.0;
    let mut dlogits = vec![0.0; rows * classes];
    for b in 0..rows {
        let row = &trace.logits[b * classes..(b + 1) * classes];
        let lse = log_sum_exp(row);
        loss_s += lse - row[labels[b] as usize];
        let drow = &mut dlogits[b * classes..(b + 1) * classes];
        for (o, d) in drow.iter_mut().enumerate() {
            *d = (row[o] - lse).exp() / rows as f64;
        }
        drow[labels[b] as usize] -= 1.0 / rows as f64;
    }
    loss_s /= rows as f64;

    let mut grads = Gradients::zeros_like(params);
    let features = trace.activations.last().expect("features present");

    // Classifier gradients and the classification pull on the features.
    let mut dfeat = vec![0.0; rows * feature_dim];
    {
        let layer = &params.classifier;
        let grad = &mut grads.classifier;
        for b in 0..rows {
            let dz = &dlogits[b * classes..(b + 1) * classes];
            let x = &features[b * feature_dim..(b + 1) * feature_dim];
            let dx = &mut dfeat[b * feature_dim..(b + 1) * feature_dim];
            for (o, &d) in dz.iter().enumerate() {
                grad.bias[o] += d;
                let wrow = &layer.weights[o * feature_dim..(o + 1) * feature_dim];
                let grow = &mut grad.weights[o * feature_dim..(o + 1) * feature_dim];
                for (g, &xv) in grow.iter_mut().zip(x) {
                    *g += d * xv;
                }
                for (dxv, &wv) in dx.iter_mut().zip(wrow) {
                    *dxv += d * wv;
                }
            }
        }
    }

    // Alignment term: each sample's feature vector enters its class mean,
    // so the unit direction (p_i - P_i)/||.|| flows back scaled by
    // lambda / (|I| * n_i). The subgradient at zero distance is zero, and
    // classes absent from either set contribute nothing.
    let mut loss_r = 0.0;
    if !global_protos.is_empty() {
        let mut class_counts = vec![0usize; classes];
        for &label in labels {
            class_counts[label as usize] += 1;
        }
        for (class, local) in local_protos.entries() {
            let Some(global) = global_protos.get(class) else { continue };
            let diff: Vec<f64> = local.iter().zip(global).map(|(p, g)| p - g).collect();
            let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            loss_r += norm / classes as f64;
            if lambda == 0.0 || norm == 0.0 {
                continue;
            }
            let n_i = class_counts[class as usize];
            if n_i == 0 {
                continue;
            }
            let coef = lambda / (classes as f64 * norm * n_i as f64);
            for b in 0..rows {
                if labels[b] != class {
                    continue;
                }
                let dx = &mut dfeat[b * feature_dim..(b + 1) * feature_dim];
                for (d, v) in dx.iter_mut().zip(&diff) {
                    *d = v.mul_add(coef, *d);
                }
            }
        }
    }

    // Walk the extractor backwards; ReLU derivative from post-activations.
    let mut dcur = dfeat;
    for (idx, layer) in params.extractor.iter().enumerate().rev() {
        let output = &trace.activations[idx + 1];
        let input = &trace.activations[idx];
        for (d, &a) in dcur.iter_mut().zip(output) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        let grad = &mut grads.extractor[idx];
        let mut dprev = vec![0.0; rows * layer.in_dim];
        for b in 0..rows {
            let dz = &dcur[b * layer.out_dim..(b + 1) * layer.out_dim];
            let x = &input[b * layer.in_dim..(b + 1) * layer.in_dim];
            let dx = &mut dprev[b * layer.in_dim..(b + 1) * layer.in_dim];
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue; // masked ReLU rows cost nothing
                }
                grad.bias[o] += d;
                let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut grad.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &xv) in grow.iter_mut().zip(x) {
                    *g += d * xv;
                }
                for (dxv, &wv) in dx.iter_mut().zip(wrow) {
                    *dxv += d * wv;
                }
            }
        }
        dcur = dprev;
    }

    grads.check_finite()?;
    if !loss_s.is_finite() || !loss_r.is_finite() {
        return Err(NnError::NonFinite { context: "loss" });
    }
    Ok((grads, loss_s, loss_r))
}

/// One plain SGD step `w <- w - eta * g`; no momentum, no state.
pub fn sgd_step(params: &ModelParams, grads: &Gradients, eta: f64) -> Result<ModelParams, NnError> {
    if grads.extractor.len() != params.extractor.len() {
        return Err(NnError::ShapeMismatch {
            context: "gradient layers",
            expected: params.extractor.len(),
            got: grads.extractor.len(),
        });
    }
    let step_layer = |layer: &DenseLayer, grad: &LayerGrad| -> Result<DenseLayer, NnError> {
        if grad.weights.len() != layer.weights.len() || grad.bias.len() != layer.bias.len() {
            return Err(NnError::ShapeMismatch {
                context: "gradient buffer",
                expected: layer.weights.len(),
                got: grad.weights.len(),
            });
        }
        let weights = layer.weights.iter().zip(&grad.weights).map(|(w, g)| w - eta * g).collect();
        let bias = layer.bias.iter().zip(&grad.bias).map(|(b, g)| b - eta * g).collect();
        Ok(DenseLayer { in_dim: layer.in_dim, out_dim: layer.out_dim, weights, bias })
    };
    let extractor = params
        .extractor
        .iter()
        .zip(&grads.extractor)
        .map(|(l, g)| step_layer(l, g))
        .collect::<Result<Vec<_>, _>>()?;
    let classifier = step_layer(&params.classifier, &grads.classifier)?;
    Ok(ModelParams { extractor, classifier })
}

/// `L2` distance helper shared by the prototype math.
pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|d| d * d).sum::<f64>().sqrt()
}
