//! 1D convolutional binary classifier trained from scratch.
//!
//! The default [`CnnConfig`] builds four `conv(k=3, valid) -> ReLU ->
//! maxpool(2)` stages with 128/64/32/16 filters over an 80-long single-channel
//! input, then `flatten(48) -> dropout -> dense64 ReLU -> dropout -> dense32
//! ReLU -> dropout -> dense1 sigmoid`, 38,129 parameters in total.
//!
//! Activations are stored time-major (`[len][channels]`), so flattening is a
//! no-op on the buffer. Conv kernels are laid out `[k][c_in][c_out]` and
//! dense weights `[n_in][n_out]`.

mod io;
mod train;

use std::ops::Range;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{architecture_hash, load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use train::{train, Adam, EarlyStopping, EpochRecord, StopDecision, TrainReport};

/// Probability clamp used by the loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation at epoch {epoch}, batch {batch}")]
    NonFiniteActivation { epoch: usize, batch: usize },
    #[error("weight file built for architecture {found:#018x}, expected {expected:#018x}")]
    ArchitectureMismatch { expected: u64, found: u64 },
    #[error("weight file I/O failure: {0}")]
    Io(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub input_len: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub dense_widths: Vec<usize>,
    /// Rates for the dropout after flatten and after each hidden dense layer.
    pub dropout: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Per-class loss weights `[non_cough, cough]`; unweighted when absent.
    pub class_weights: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_len: 80,
            conv_filters: vec![128, 64, 32, 16],
            kernel: 3,
            pool: 2,
            dense_widths: vec![64, 32, 1],
            dropout: vec![0.3, 0.3, 0.3],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 1000,
            patience: 100,
            class_weights: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Shape {
    Seq { len: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Seq { len, channels } => len * channels,
            Shape::Flat(n) => n,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Seq { len, channels } => write!(f, "(None, {len}, {channels})"),
            Shape::Flat(n) => write!(f, "(None, {n})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LayerKind {
    Conv1d { kernel: usize, c_in: usize, c_out: usize },
    MaxPool { pool: usize, channels: usize },
    Flatten,
    Dropout { rate: f64 },
    Dense { n_in: usize, n_out: usize, activation: Activation },
}

impl LayerKind {
    fn param_count(&self) -> (usize, usize) {
        match *self {
            LayerKind::Conv1d { kernel, c_in, c_out } => (kernel * c_in * c_out, c_out),
            LayerKind::Dense { n_in, n_out, .. } => (n_in * n_out, n_out),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    pub params: usize,
}

/// Resolves the layer stack for `cfg`, checking every shape along the way.
pub fn architecture(cfg: &CnnConfig) -> Result<Vec<LayerSpec>, CnnError> {
    let invalid = |m: String| Err(CnnError::InvalidConfig(m));
    if cfg.kernel == 0 || cfg.pool == 0 {
        return invalid("kernel and pool must be positive".into());
    }
    if cfg.dense_widths.last() != Some(&1) {
        return invalid("last dense layer must have width 1".into());
    }
    if cfg.dropout.len() != cfg.dense_widths.len() {
        return invalid(format!(
            "{} dense layers need {} dropout rates, got {}",
            cfg.dense_widths.len(),
            cfg.dense_widths.len(),
            cfg.dropout.len()
        ));
    }
    if let Some(r) = cfg.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return invalid(format!("dropout rate {r} outside [0, 1)"));
    }

    let mut layers = Vec::new();
    let mut shape = Shape::Seq {
        len: cfg.input_len,
        channels: 1,
    };
    let mut push = |name: String, kind: LayerKind, input: Shape, output: Shape| {
        let (w, b) = kind.param_count();
        layers.push(LayerSpec {
            name,
            kind,
            input,
            output,
            params: w + b,
        });
        output
    };

    for (i, &filters) in cfg.conv_filters.iter().enumerate() {
        let Shape::Seq { len, channels } = shape else {
            unreachable!()
        };
        if len < cfg.kernel {
            return Err(CnnError::ShapeMismatch(format!(
                "conv layer {} sees length {len} < kernel {}",
                i + 1,
                cfg.kernel
            )));
        }
        let conv_out = Shape::Seq {
            len: len - cfg.kernel + 1,
            channels: filters,
        };
        shape = push(
            format!("conv1d_{}", i + 1),
            LayerKind::Conv1d {
                kernel: cfg.kernel,
                c_in: channels,
                c_out: filters,
            },
            shape,
            conv_out,
        );
        let pooled_len = (len - cfg.kernel + 1) / cfg.pool;
        if pooled_len == 0 {
            return Err(CnnError::ShapeMismatch(format!(
                "pool layer {} reduces length to zero",
                i + 1
            )));
        }
        shape = push(
            format!("max_pooling1d_{}", i + 1),
            LayerKind::MaxPool {
                pool: cfg.pool,
                channels: filters,
            },
            shape,
            Shape::Seq {
                len: pooled_len,
                channels: filters,
            },
        );
    }
    shape = push(
        "flatten".into(),
        LayerKind::Flatten,
        shape,
        Shape::Flat(shape.size()),
    );
    let last = cfg.dense_widths.len() - 1;
    for (i, (&width, &rate)) in cfg.dense_widths.iter().zip(&cfg.dropout).enumerate() {
        shape = push(
            format!("dropout_{}", i + 1),
            LayerKind::Dropout { rate },
            shape,
            shape,
        );
        let activation = if i == last {
            Activation::Sigmoid
        } else {
            Activation::Relu
        };
        shape = push(
            format!("dense_{}", i + 1),
            LayerKind::Dense {
                n_in: shape.size(),
                n_out: width,
                activation,
            },
            shape,
            Shape::Flat(width),
        );
    }
    Ok(layers)
}

/// Location of one trainable layer's tensors inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// All weights and biases in one flat buffer, layers in declaration order,
/// each layer's weights followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParameters {
    pub slots: Vec<ParamSlot>,
    pub data: Vec<f64>,
}

impl CnnParameters {
    pub fn zeros(layers: &[LayerSpec]) -> Self {
        let mut slots = Vec::new();
        let mut at = 0;
        for (i, layer) in layers.iter().enumerate() {
            let (w, b) = layer.kind.param_count();
            if w + b == 0 {
                continue;
            }
            slots.push(ParamSlot {
                layer: i,
                weight: at..at + w,
                bias: at + w..at + w + b,
            });
            at += w + b;
        }
        Self {
            slots,
            data: vec![0.0; at],
        }
    }

    /// Glorot-uniform weights (fan computed over the kernel window for
    /// convolutions), zero biases.
    pub fn glorot<R: RngCore + ?Sized>(layers: &[LayerSpec], rng: &mut R) -> Self {
        let mut params = Self::zeros(layers);
        for slot in &params.slots {
            let (fan_in, fan_out) = match layers[slot.layer].kind {
                LayerKind::Conv1d { kernel, c_in, c_out } => (kernel * c_in, kernel * c_out),
                LayerKind::Dense { n_in, n_out, .. } => (n_in, n_out),
                _ => unreachable!(),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params.data[slot.weight.clone()] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        params
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn weight(&self, slot: usize) -> &[f64] {
        &self.data[self.slots[slot].weight.clone()]
    }

    pub fn bias(&self, slot: usize) -> &[f64] {
        &self.data[self.slots[slot].bias.clone()]
    }

    /// Per trainable layer parameter counts.
    pub fn layer_counts(&self) -> Vec<usize> {
        self.slots
            .iter()
            .map(|s| s.weight.len() + s.bias.len())
            .collect()
    }
}

/// Clamped binary cross-entropy averaged over the batch.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> f64 {
    weighted_bce(probs, labels, None)
}

fn weighted_bce(probs: &[f64], labels: &[u8], class_weights: Option<[f64; 2]>) -> f64 {
    assert_eq!(probs.len(), labels.len());
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let w = class_weights.map_or(1.0, |cw| cw[y as usize]);
            let nll = if y != 0 { -p.ln() } else { -(1.0 - p).ln() };
            w * nll
        })
        .sum();
    total / probs.len() as f64
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward mode. Training mode samples inverted-dropout masks from the rng.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Intermediate values of one example needed by the backward pass.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    /// Output of every layer (after its activation).
    acts: Vec<Vec<f64>>,
    /// Winning input index per pooled output, for pooling layers.
    argmax: Vec<Vec<u32>>,
    /// Keep-and-rescale factors, for dropout layers.
    masks: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub probs: Vec<f64>,
    /// Empty in eval mode.
    pub traces: Vec<SampleTrace>,
}

/// Network topology plus the pure forward/backward kernels.
#[derive(Debug, Clone)]
pub struct Cnn {
    cfg: CnnConfig,
    layers: Vec<LayerSpec>,
}

impl Cnn {
    pub fn new(cfg: &CnnConfig) -> Result<Self, CnnError> {
        Ok(Self {
            layers: architecture(cfg)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn zero_params(&self) -> CnnParameters {
        CnnParameters::zeros(&self.layers)
    }

    pub fn init_params<R: RngCore + ?Sized>(&self, rng: &mut R) -> CnnParameters {
        CnnParameters::glorot(&self.layers, rng)
    }

    fn check_params(&self, params: &CnnParameters) -> Result<(), CnnError> {
        let expected = self.zero_params();
        if params.slots != expected.slots || params.data.len() != expected.data.len() {
            return Err(CnnError::ShapeMismatch(
                "parameters do not match the network layout".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), CnnError> {
        if x.len() != self.cfg.input_len {
            return Err(CnnError::ShapeMismatch(format!(
                "input length {} != {}",
                x.len(),
                self.cfg.input_len
            )));
        }
        Ok(())
    }

    /// Draws dropout masks for one example, one per dropout layer.
    fn sample_masks(&self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Dropout { rate } => {
                    let keep = 1.0 / (1.0 - rate);
                    Some(
                        (0..l.input.size())
                            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                            .collect(),
                    )
                }
                _ => None,
            })
            .collect()
    }

    /// Runs one example. Dropout is applied only when `masks` is given.
    fn forward_one(&self, params: &CnnParameters, x: &[f64], masks: Option<Vec<Vec<f64>>>) -> SampleTrace {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::new();
        let mut slot = 0;
        let mut dropout_idx = 0;
        for layer in &self.layers {
            let input: &[f64] = acts.last().map_or(x, |a| a.as_slice());
            let out = match layer.kind {
                LayerKind::Conv1d { kernel, c_in, c_out } => {
                    let out = conv_relu_forward(
                        input,
                        c_in,
                        kernel,
                        c_out,
                        params.weight(slot),
                        params.bias(slot),
                    );
                    slot += 1;
                    out
                }
                LayerKind::MaxPool { pool, channels } => {
                    let (out, idx) = maxpool_forward(input, channels, pool);
                    argmax.push(idx);
                    out
                }
                LayerKind::Flatten => input.to_vec(),
                LayerKind::Dropout { .. } => {
                    let out = match &masks {
                        Some(m) => input.iter().zip(&m[dropout_idx]).map(|(a, k)| a * k).collect(),
                        None => input.to_vec(),
                    };
                    dropout_idx += 1;
                    out
                }
                LayerKind::Dense { n_out, activation, .. } => {
                    let mut out = dense_forward(input, n_out, params.weight(slot), params.bias(slot));
                    slot += 1;
                    match activation {
                        Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                        Activation::Sigmoid => out.iter_mut().for_each(|v| *v = sigmoid(*v)),
                    }
                    out
                }
            };
            acts.push(out);
        }
        SampleTrace {
            acts,
            argmax,
            masks: masks.unwrap_or_default(),
        }
    }

    /// Batch forward pass returning sigmoid outputs.
    pub fn forward(&self, params: &CnnParameters, batch: &[Vec<f64>], mode: Mode<'_>) -> Result<ForwardPass, CnnError> {
        self.check_params(params)?;
        batch.iter().try_for_each(|x| self.check_input(x))?;
        let mut probs = Vec::with_capacity(batch.len());
        let mut traces = Vec::new();
        match mode {
            Mode::Eval => {
                for x in batch {
                    let trace = self.forward_one(params, x, None);
                    probs.push(trace.acts.last().unwrap()[0]);
                }
            }
            Mode::Train(rng) => {
                for x in batch {
                    let masks = self.sample_masks(rng);
                    let trace = self.forward_one(params, x, Some(masks));
                    probs.push(trace.acts.last().unwrap()[0]);
                    traces.push(trace);
                }
            }
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(CnnError::NonFiniteActivation { epoch: 0, batch: 0 });
        }
        Ok(ForwardPass { probs, traces })
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, params: &CnnParameters, batch: &[Vec<f64>]) -> Result<Vec<f64>, CnnError> {
        Ok(self.forward(params, batch, Mode::Eval)?.probs)
    }

    /// Exact gradient of the (optionally class-weighted) mean clamped BCE
    /// with respect to every parameter, dropout masks held fixed.
    pub fn backward(
        &self,
        params: &CnnParameters,
        batch: &[Vec<f64>],
        labels: &[u8],
        pass: &ForwardPass,
    ) -> Result<CnnParameters, CnnError> {
        self.check_params(params)?;
        if batch.len() != labels.len() || pass.traces.len() != batch.len() {
            return Err(CnnError::ShapeMismatch(format!(
                "batch {} / labels {} / traces {}",
                batch.len(),
                labels.len(),
                pass.traces.len()
            )));
        }
        let mut grads = self.zero_params();
        let inv_b = 1.0 / batch.len() as f64;
        // Transposed kernels for the input-gradient pass of every conv layer
        // except the first.
        let transposed: Vec<Option<Vec<f64>>> = params
            .slots
            .iter()
            .map(|s| match self.layers[s.layer].kind {
                LayerKind::Conv1d { c_out, .. } if s.layer > 0 => {
                    Some(transpose(&params.data[s.weight.clone()], c_out))
                }
                _ => None,
            })
            .collect();
        for ((x, &y), trace) in batch.iter().zip(labels).zip(&pass.traces) {
            let p = trace.acts.last().unwrap()[0];
            // d(clamped BCE)/d(logit): zero where the clamp is active.
            let dlogit = if p > PROB_EPS && p < 1.0 - PROB_EPS {
                let w = self.cfg.class_weights.map_or(1.0, |cw| cw[y as usize]);
                w * (p - y as f64) * inv_b
            } else {
                0.0
            };
            self.backward_one(params, &transposed, x, trace, dlogit, &mut grads);
        }
        Ok(grads)
    }

    fn backward_one(
        &self,
        params: &CnnParameters,
        transposed: &[Option<Vec<f64>>],
        x: &[f64],
        trace: &SampleTrace,
        dlogit: f64,
        grads: &mut CnnParameters,
    ) {
        let mut slot = params.slots.len();
        let mut pool_idx = trace.argmax.len();
        let mut dropout_idx = trace.masks.len();
        // Gradient w.r.t. the output of the current layer.
        let mut g = vec![dlogit];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input: &[f64] = if i == 0 { x } else { &trace.acts[i - 1] };
            let output = &trace.acts[i];
            g = match layer.kind {
                LayerKind::Dense { n_in, n_out, activation } => {
                    slot -= 1;
                    if activation == Activation::Relu {
                        g.iter_mut().zip(output).for_each(|(d, o)| {
                            if *o <= 0.0 {
                                *d = 0.0
                            }
                        });
                    }
                    let s = &params.slots[slot];
                    dense_backward(input, &g, n_in, n_out, &params.data[s.weight.clone()], &mut grads.data, s)
                }
                LayerKind::Dropout { .. } => {
                    dropout_idx -= 1;
                    g.iter_mut().zip(&trace.masks[dropout_idx]).for_each(|(d, k)| *d *= k);
                    g
                }
                LayerKind::Flatten => g,
                LayerKind::MaxPool { .. } => {
                    pool_idx -= 1;
                    let mut dx = vec![0.0; input.len()];
                    for (&src, d) in trace.argmax[pool_idx].iter().zip(&g) {
                        dx[src as usize] += d;
                    }
                    dx
                }
                LayerKind::Conv1d { kernel, c_in, c_out } => {
                    slot -= 1;
                    g.iter_mut().zip(output).for_each(|(d, o)| {
                        if *o <= 0.0 {
                            *d = 0.0
                        }
                    });
                    let s = &params.slots[slot];
                    conv_backward(
                        input,
                        &g,
                        c_in,
                        kernel,
                        c_out,
                        transposed[slot].as_deref(),
                        &mut grads.data,
                        s,
                    )
                }
            };
        }
    }
}

/// `out[t, o] = b[o] + sum_{k, c} x[t + k, c] w[k, c, o]`.
///
/// The receptive field of output `t` is the contiguous input run
/// `x[t * c_in .. (t + k) * c_in]`, so flattened window index `j` pairs with
/// weight row `j`. Iterating rows outermost keeps one weight row and the
/// whole output block cache-resident.
fn conv_linear(x: &[f64], c_in: usize, kernel: usize, c_out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let len_out = x.len() / c_in + 1 - kernel;
    let mut out = Vec::with_capacity(len_out * c_out);
    for _ in 0..len_out {
        out.extend_from_slice(b);
    }
    let rows: Vec<&[f64]> = w.chunks_exact(c_out).collect();
    let mut j = 0;
    while j < rows.len() {
        let take = (rows.len() - j).min(4);
        for (t, row) in out.chunks_exact_mut(c_out).enumerate() {
            let xs = &x[t * c_in + j..t * c_in + j + take];
            // Inputs past a ReLU are often exactly zero.
            if xs.iter().all(|&v| v == 0.0) {
                continue;
            }
            if take == 4 {
                axpy4(row, [xs[0], xs[1], xs[2], xs[3]], [rows[j], rows[j + 1], rows[j + 2], rows[j + 3]]);
            } else {
                for (k, &xv) in xs.iter().enumerate() {
                    row.iter_mut().zip(rows[j + k]).for_each(|(o, wv)| *o += xv * wv);
                }
            }
        }
        j += take;
    }
    out
}

/// `acc += a0 r0 + a1 r1 + a2 r2 + a3 r3`, one load/store of `acc` per four
/// multiply-adds.
fn axpy4(acc: &mut [f64], a: [f64; 4], r: [&[f64]; 4]) {
    let n = acc.len();
    let (r0, r1, r2, r3) = (&r[0][..n], &r[1][..n], &r[2][..n], &r[3][..n]);
    for i in 0..n {
        acc[i] += (a[0] * r0[i] + a[1] * r1[i]) + (a[2] * r2[i] + a[3] * r3[i]);
    }
}

fn conv_relu_forward(x: &[f64], c_in: usize, kernel: usize, c_out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = conv_linear(x, c_in, kernel, c_out, w, b);
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
///
/// `w_t` is the kernel transposed to `[c_out][k * c_in]`; when absent the
/// input gradient is skipped and an empty vector returned.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    g: &[f64],
    c_in: usize,
    kernel: usize,
    c_out: usize,
    w_t: Option<&[f64]>,
    grads: &mut [f64],
    slot: &ParamSlot,
) -> Vec<f64> {
    let window = kernel * c_in;
    let len_out = g.len() / c_out;
    let (gw, gb) = grads[slot.weight.start..slot.bias.end].split_at_mut(slot.weight.len());
    for gr in g.chunks_exact(c_out) {
        gb.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
    }
    let live: Vec<usize> = (0..len_out)
        .filter(|&t| g[t * c_out..(t + 1) * c_out].iter().any(|&v| v != 0.0))
        .collect();
    let mut active = Vec::with_capacity(live.len());
    for (j, gwr) in gw.chunks_exact_mut(c_out).enumerate().take(window) {
        // A zero input adds no weight gradient.
        active.clear();
        active.extend(live.iter().copied().filter(|&t| x[t * c_in + j] != 0.0));
        let grow = |t: usize| &g[t * c_out..(t + 1) * c_out];
        let mut chunks = active.chunks_exact(4);
        for ts in &mut chunks {
            axpy4(
                gwr,
                [x[ts[0] * c_in + j], x[ts[1] * c_in + j], x[ts[2] * c_in + j], x[ts[3] * c_in + j]],
                [grow(ts[0]), grow(ts[1]), grow(ts[2]), grow(ts[3])],
            );
        }
        for &t in chunks.remainder() {
            let xv = x[t * c_in + j];
            gwr.iter_mut().zip(grow(t)).for_each(|(a, v)| *a += xv * v);
        }
    }
    let Some(w_t) = w_t else {
        return Vec::new();
    };
    // dx[t + k, c] += sum_o w[k, c, o] g[t, o], as axpys over transposed rows.
    let mut dx = vec![0.0; x.len()];
    let cols: Vec<&[f64]> = w_t.chunks_exact(window).collect();
    for &t in &live {
        let gr = &g[t * c_out..(t + 1) * c_out];
        let dxs = &mut dx[t * c_in..t * c_in + window];
        let nz: Vec<usize> = (0..c_out).filter(|&o| gr[o] != 0.0).collect();
        let mut chunks = nz.chunks_exact(4);
        for os in &mut chunks {
            axpy4(
                dxs,
                [gr[os[0]], gr[os[1]], gr[os[2]], gr[os[3]]],
                [cols[os[0]], cols[os[1]], cols[os[2]], cols[os[3]]],
            );
        }
        for &o in chunks.remainder() {
            dxs.iter_mut().zip(cols[o]).for_each(|(d, wv)| *d += gr[o] * wv);
        }
    }
    dx
}

/// `[rows][cols]` to `[cols][rows]`.
fn transpose(m: &[f64], cols: usize) -> Vec<f64> {
    let rows = m.len() / cols;
    let mut out = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// Non-overlapping max pooling along time; a trailing partial window is
/// dropped. Ties pick the earlier element.
fn maxpool_forward(x: &[f64], channels: usize, pool: usize) -> (Vec<f64>, Vec<u32>) {
    let len_out = x.len() / channels / pool;
    let mut out = vec![f64::NEG_INFINITY; len_out * channels];
    let mut idx = vec![0u32; len_out * channels];
    for t in 0..len_out {
        for p in 0..pool {
            let src = (t * pool + p) * channels;
            for c in 0..channels {
                let v = x[src + c];
                let o = t * channels + c;
                if v > out[o] {
                    out[o] = v;
                    idx[o] = (src + c) as u32;
                }
            }
        }
    }
    (out, idx)
}

fn dense_forward(x: &[f64], n_out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (&xv, wr) in x.iter().zip(w.chunks_exact(n_out)) {
        for (o, wv) in out.iter_mut().zip(wr) {
            *o += xv * wv;
        }
    }
    out
}

fn dense_backward(
    x: &[f64],
    g: &[f64],
    n_in: usize,
    n_out: usize,
    w: &[f64],
    grads: &mut [f64],
    slot: &ParamSlot,
) -> Vec<f64> {
    let (gw, gb) = grads[slot.weight.start..slot.bias.end].split_at_mut(slot.weight.len());
    gb.iter_mut().zip(g).for_each(|(a, v)| *a += v);
    let mut dx = vec![0.0; n_in];
    for ((&xv, gwr), (d, wr)) in x
        .iter()
        .zip(gw.chunks_exact_mut(n_out))
        .zip(dx.iter_mut().zip(w.chunks_exact(n_out)))
    {
        for (a, v) in gwr.iter_mut().zip(g) {
            *a += xv * v;
        }
        *d = dot(wr, g);
    }
    dx
}

/// Dot product with four interleaved partial sums so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Public single-layer kernels, exposed for direct testing.
pub mod kernels {
    /// Valid 1D convolution without activation: `[L][c_in] -> [L-k+1][c_out]`.
    pub fn conv1d_valid(
        input: &[f64],
        c_in: usize,
        weights: &[f64],
        kernel: usize,
        c_out: usize,
        bias: &[f64],
    ) -> Result<Vec<f64>, super::CnnError> {
        use super::CnnError::ShapeMismatch;
        if c_in == 0 || !input.len().is_multiple_of(c_in) {
            return Err(ShapeMismatch(format!("input of {} values is not [L][{c_in}]", input.len())));
        }
        let len = input.len() / c_in;
        if len < kernel {
            return Err(ShapeMismatch(format!("length {len} shorter than kernel {kernel}")));
        }
        if weights.len() != kernel * c_in * c_out || bias.len() != c_out {
            return Err(ShapeMismatch("weight or bias size does not match".into()));
        }
        Ok(super::conv_linear(input, c_in, kernel, c_out, weights, bias))
    }

    /// Pool-2 max pooling: `[L][C] -> [L/2][C]`.
    pub fn maxpool1d_2(input: &[f64], channels: usize) -> Vec<f64> {
        super::maxpool_forward(input, channels, 2).0
    }
}

#[cfg(test)]
mod tests;
