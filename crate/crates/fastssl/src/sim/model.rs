//! Resolution-agnostic tiny encoder with manual backprop.
//!
//! Architecture: three 3x3 stride-2 convolutions with leaky ReLU, global average
//! pooling into a feature vector, a two-layer projection MLP ending in
//! per-batch standardization (mean/variance normalization over the batch,
//! no learned affine), and a two-layer bottleneck predictor MLP. Any square
//! input of side >= 8 maps to a fixed-size embedding.
//!
//! Convolutions run as patch extraction plus a plain matmul; every conv and
//! dense layer contributes `2 * fan_in * fan_out` FLOPs per output element
//! to the exact per-pass counter (pooling, rectifiers and standardization are not
//! counted). The backward pass is hand-derived and validated against finite
//! differences in 64-bit mode.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{ensure_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Smallest square input the encoder accepts.
pub const MIN_INPUT_SIDE: usize = 8;

/// Epsilon inside the batch-standardization denominator.
pub const STD_EPS: f64 = 1e-5;

/// Layer widths. The defaults keep a full desk-scale run cheap on a CPU
/// while leaving the embedding wide enough for a meaningful kNN probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub proj_hidden: usize,
    pub embed_dim: usize,
    pub pred_hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            in_channels: 3,
            conv_channels: [8, 16, 32],
            proj_hidden: 64,
            embed_dim: 64,
            pred_hidden: 32,
        }
    }
}

/// Weight layout `[3, 3, c_in, c_out]` (patch-major, channel-last) so the
/// flattened kernel is directly the matmul operand.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Weight layout `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// All named parameter tensors. The same container doubles as gradient and
/// momentum-buffer storage (`zeros_like`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub spec: ModelSpec,
    pub conv: Vec<ConvLayer<S>>,
    pub proj: Vec<DenseLayer<S>>,
    pub pred: Vec<DenseLayer<S>>,
}

impl<S: Scalar> ModelParams<S> {
    /// He-initialized parameters, deterministic under the RNG.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
        let mut sample_w = |shape: &[usize], fan_in: usize| {
            let scale = (2.0 / fan_in as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| S::from_f64_val(normal.sample(rng) * scale))
                .collect();
            Tensor::from_vec(shape, data).expect("shape matches data")
        };
        let mut conv = Vec::new();
        let mut ci = spec.in_channels;
        for &co in &spec.conv_channels {
            conv.push(ConvLayer {
                weight: sample_w(&[3, 3, ci, co], 9 * ci),
                bias: Tensor::zeros(&[co]),
            });
            ci = co;
        }
        let dense = |sample_w: &mut dyn FnMut(&[usize], usize) -> Tensor<S>,
                     fan_in: usize,
                     fan_out: usize| DenseLayer {
            weight: sample_w(&[fan_in, fan_out], fan_in),
            bias: Tensor::zeros(&[fan_out]),
        };
        let proj = vec![
            dense(&mut sample_w, spec.conv_channels[2], spec.proj_hidden),
            dense(&mut sample_w, spec.proj_hidden, spec.embed_dim),
        ];
        let pred = vec![
            dense(&mut sample_w, spec.embed_dim, spec.pred_hidden),
            dense(&mut sample_w, spec.pred_hidden, spec.embed_dim),
        ];
        ModelParams {
            spec,
            conv,
            proj,
            pred,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let conv = self
            .conv
            .iter()
            .map(|l| ConvLayer {
                weight: Tensor::zeros(l.weight.shape()),
                bias: Tensor::zeros(l.bias.shape()),
            })
            .collect();
        let zero_dense = |l: &DenseLayer<S>| DenseLayer {
            weight: Tensor::zeros(l.weight.shape()),
            bias: Tensor::zeros(l.bias.shape()),
        };
        ModelParams {
            spec: self.spec,
            conv,
            proj: self.proj.iter().map(zero_dense).collect(),
            pred: self.pred.iter().map(zero_dense).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            spec: self.spec,
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            proj: self
                .proj
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            pred: self
                .pred
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Stable (name, tensor) order shared by checkpoints, the optimizer and
    /// the gradient check.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, layer) in self.conv.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &layer.weight));
            out.push((format!("conv{}.bias", i + 1), &layer.bias));
        }
        for (i, layer) in self.proj.iter().enumerate() {
            out.push((format!("proj{}.weight", i + 1), &layer.weight));
            out.push((format!("proj{}.bias", i + 1), &layer.bias));
        }
        for (i, layer) in self.pred.iter().enumerate() {
            out.push((format!("pred{}.weight", i + 1), &layer.weight));
            out.push((format!("pred{}.bias", i + 1), &layer.bias));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, layer) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &mut layer.weight));
            out.push((format!("conv{}.bias", i + 1), &mut layer.bias));
        }
        for (i, layer) in self.proj.iter_mut().enumerate() {
            out.push((format!("proj{}.weight", i + 1), &mut layer.weight));
            out.push((format!("proj{}.bias", i + 1), &mut layer.bias));
        }
        for (i, layer) in self.pred.iter_mut().enumerate() {
            out.push((format!("pred{}.weight", i + 1), &mut layer.weight));
            out.push((format!("pred{}.bias", i + 1), &mut layer.bias));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Elementwise add another container (used to sum per-view gradients).
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        let other_tensors = other.named_tensors();
        for ((name, mine), (_, theirs)) in
            self.named_tensors_mut().iter_mut().zip(other_tensors.iter())
        {
            if mine.shape() != theirs.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("accumulate {name}"),
                    expected: mine.shape().to_vec(),
                    actual: theirs.shape().to_vec(),
                });
            }
            for (a, &b) in mine.data_mut().iter_mut().zip(theirs.data()) {
                *a += b;
            }
        }
        Ok(())
    }
}

/// Outputs of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    /// Pooled encoder features `[N, c3]` (what the kNN probe consumes).
    pub features: Tensor<S>,
    /// Projection output before batch standardization `[N, E]`.
    pub embedding_pre: Tensor<S>,
    /// Standardized embedding `z` `[N, E]` (loss target / predictor input).
    pub embedding: Tensor<S>,
    /// Predictor output `p` `[N, E]`.
    pub prediction: Tensor<S>,
    /// Exact FLOPs spent in this pass (conv + dense layers).
    pub flops: u64,
}

/// Cached intermediates for the backward pass.
pub struct ForwardTrace<S> {
    input_dims: (usize, usize, usize), // n, side, channels
    conv_cols: Vec<Tensor<S>>,         // patch matrices per conv layer
    conv_out: Vec<Tensor<S>>,          // post-ReLU activations (matmul layout)
    conv_dims: Vec<(usize, usize)>,    // (h_in, h_out) per conv layer
    features: Tensor<S>,
    proj_hidden: Tensor<S>, // post-ReLU
    std_xhat: Tensor<S>,    // standardized embedding (= z)
    std_inv: Vec<S>,        // 1 / sqrt(var + eps) per dimension
    pred_hidden: Tensor<S>, // post-ReLU
}

/// `c[m,n] += a[m,k] * b[k,n]`
fn matmul_nn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == S::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ik * bv;
            }
        }
    }
}

/// `dw[k,n] += a[m,k]^T * dc[m,n]`
fn matmul_tn<S: Scalar>(a: &[S], dc: &[S], dw: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let d_row = &dc[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == S::zero() {
                continue;
            }
            let w_row = &mut dw[kk * n..(kk + 1) * n];
            for (wv, &dv) in w_row.iter_mut().zip(d_row) {
                *wv += a_ik * dv;
            }
        }
    }
}

/// `da[m,k] += dc[m,n] * b[k,n]^T`
fn matmul_nt<S: Scalar>(dc: &[S], b: &[S], da: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let d_row = &dc[i * n..(i + 1) * n];
        let a_row = &mut da[i * k..(i + 1) * k];
        for (kk, av) in a_row.iter_mut().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = S::zero();
            for (&dv, &bv) in d_row.iter().zip(b_row) {
                acc += dv * bv;
            }
            *av += acc;
        }
    }
}

fn conv_out_side(side: usize) -> usize {
    // 3x3 kernel, stride 2, padding 1.
    (side + 1) / 2
}

/// Extract stride-2 3x3 patches (zero padding 1) of a channel-last batch
/// into a `[n * ho * wo, 9 * c]` matrix.
fn im2col<S: Scalar>(input: &[S], n: usize, side: usize, c: usize) -> (Tensor<S>, usize) {
    let out_side = conv_out_side(side);
    let rows = n * out_side * out_side;
    let cols = 9 * c;
    let mut out = vec![S::zero(); rows * cols];
    let mut row = 0usize;
    for img in 0..n {
        let img_base = img * side * side * c;
        for oh in 0..out_side {
            for ow in 0..out_side {
                let row_base = row * cols;
                for kh in 0..3usize {
                    let ih = (2 * oh + kh) as isize - 1;
                    if ih < 0 || ih >= side as isize {
                        continue;
                    }
                    for kw in 0..3usize {
                        let iw = (2 * ow + kw) as isize - 1;
                        if iw < 0 || iw >= side as isize {
                            continue;
                        }
                        let src = img_base + (ih as usize * side + iw as usize) * c;
                        let dst = row_base + (kh * 3 + kw) * c;
                        out[dst..dst + c].copy_from_slice(&input[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    (
        Tensor::from_vec(&[rows, cols], out).expect("im2col shape"),
        out_side,
    )
}

/// Scatter-add patch-matrix gradients back onto the input layout.
fn col2im<S: Scalar>(dcols: &[S], n: usize, side: usize, c: usize, dinput: &mut [S]) {
    let out_side = conv_out_side(side);
    let cols = 9 * c;
    let mut row = 0usize;
    for img in 0..n {
        let img_base = img * side * side * c;
        for oh in 0..out_side {
            for ow in 0..out_side {
                let row_base = row * cols;
                for kh in 0..3usize {
                    let ih = (2 * oh + kh) as isize - 1;
                    if ih < 0 || ih >= side as isize {
                        continue;
                    }
                    for kw in 0..3usize {
                        let iw = (2 * ow + kw) as isize - 1;
                        if iw < 0 || iw >= side as isize {
                            continue;
                        }
                        let dst = img_base + (ih as usize * side + iw as usize) * c;
                        let src = row_base + (kh * 3 + kw) * c;
                        for offset in 0..c {
                            dinput[dst + offset] += dcols[src + offset];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn add_bias_rows<S: Scalar>(data: &mut [S], bias: &[S]) {
    let n = bias.len();
    for row in data.chunks_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Leaky rectifier. The small negative slope keeps every unit trainable,
/// which matters at the narrow widths this simulator runs at (a fully dead
/// predictor would emit zero-norm rows the cosine loss must reject).
const LEAKY_SLOPE: f64 = 0.1;

fn leaky_relu_inplace<S: Scalar>(data: &mut [S]) {
    let slope = S::from_f64_val(LEAKY_SLOPE);
    for v in data.iter_mut() {
        if *v < S::zero() {
            *v *= slope;
        }
    }
}

/// Scale gradients on the negative side. The stored activation is
/// post-rectifier, but its sign matches the pre-activation's.
fn leaky_relu_backward<S: Scalar>(grad: &mut [S], activated: &[S]) {
    let slope = S::from_f64_val(LEAKY_SLOPE);
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= S::zero() {
            *g *= slope;
        }
    }
}

fn dense_forward<S: Scalar>(
    input: &Tensor<S>,
    layer: &DenseLayer<S>,
    flops: &mut u64,
) -> Tensor<S> {
    let (rows, fan_in) = (input.shape()[0], input.shape()[1]);
    let fan_out = layer.weight.shape()[1];
    let mut out = Tensor::zeros(&[rows, fan_out]);
    matmul_nn(
        input.data(),
        layer.weight.data(),
        out.data_mut(),
        rows,
        fan_in,
        fan_out,
    );
    add_bias_rows(out.data_mut(), layer.bias.data());
    *flops += 2 * (rows * fan_in * fan_out) as u64;
    out
}

struct DenseGrads<S> {
    d_input: Tensor<S>,
    d_weight: Tensor<S>,
    d_bias: Tensor<S>,
}

fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    layer: &DenseLayer<S>,
    d_out: &Tensor<S>,
) -> DenseGrads<S> {
    let (rows, fan_in) = (input.shape()[0], input.shape()[1]);
    let fan_out = layer.weight.shape()[1];
    let mut d_weight = Tensor::zeros(&[fan_in, fan_out]);
    matmul_tn(
        input.data(),
        d_out.data(),
        d_weight.data_mut(),
        rows,
        fan_in,
        fan_out,
    );
    let mut d_bias = Tensor::zeros(&[fan_out]);
    for row in d_out.data().chunks(fan_out) {
        for (b, &d) in d_bias.data_mut().iter_mut().zip(row) {
            *b += d;
        }
    }
    let mut d_input = Tensor::zeros(&[rows, fan_in]);
    matmul_nt(
        d_out.data(),
        layer.weight.data(),
        d_input.data_mut(),
        rows,
        fan_in,
        fan_out,
    );
    DenseGrads {
        d_input,
        d_weight,
        d_bias,
    }
}

/// Per-dimension standardization over the batch axis (biased variance).
fn batch_std_forward<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<S>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let inv_n = S::from_f64_val(1.0 / n as f64);
    let eps = S::from_f64_val(STD_EPS);
    let mut mean = vec![S::zero(); d];
    for row in x.data().chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m *= inv_n;
    }
    let mut var = vec![S::zero(); d];
    for row in x.data().chunks(d) {
        for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
            let c = xv - m;
            *v += c * c;
        }
    }
    let inv_std: Vec<S> = var
        .iter()
        .map(|&v| (v * inv_n + eps).sqrt().recip())
        .collect();
    let mut out = Tensor::zeros(&[n, d]);
    for (out_row, row) in out.data_mut().chunks_mut(d).zip(x.data().chunks(d)) {
        for k in 0..d {
            out_row[k] = (row[k] - mean[k]) * inv_std[k];
        }
    }
    (out, inv_std)
}

/// Standard batch-norm backward without affine terms:
/// `dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))`.
fn batch_std_backward<S: Scalar>(
    xhat: &Tensor<S>,
    inv_std: &[S],
    d_out: &Tensor<S>,
) -> Tensor<S> {
    let (n, d) = (xhat.shape()[0], xhat.shape()[1]);
    let inv_n = S::from_f64_val(1.0 / n as f64);
    let mut mean_dy = vec![S::zero(); d];
    let mut mean_dy_xhat = vec![S::zero(); d];
    for (dy_row, x_row) in d_out.data().chunks(d).zip(xhat.data().chunks(d)) {
        for k in 0..d {
            mean_dy[k] += dy_row[k];
            mean_dy_xhat[k] += dy_row[k] * x_row[k];
        }
    }
    for k in 0..d {
        mean_dy[k] *= inv_n;
        mean_dy_xhat[k] *= inv_n;
    }
    let mut dx = Tensor::zeros(&[n, d]);
    for ((dx_row, dy_row), x_row) in dx
        .data_mut()
        .chunks_mut(d)
        .zip(d_out.data().chunks(d))
        .zip(xhat.data().chunks(d))
    {
        for k in 0..d {
            dx_row[k] = inv_std[k] * (dy_row[k] - mean_dy[k] - x_row[k] * mean_dy_xhat[k]);
        }
    }
    dx
}

fn validate_input<S: Scalar>(spec: &ModelSpec, input: &Tensor<S>) -> Result<(usize, usize)> {
    let shape = input.shape();
    if shape.len() != 4 || shape[1] != shape[2] || shape[3] != spec.in_channels {
        return Err(Error::ShapeMismatch {
            context: "encoder input (expected [n, side, side, channels])".into(),
            expected: vec![0, 0, 0, spec.in_channels],
            actual: shape.to_vec(),
        });
    }
    if shape[1] < MIN_INPUT_SIDE {
        return Err(Error::invalid(format!(
            "input side {} below the encoder minimum of {MIN_INPUT_SIDE}",
            shape[1]
        )));
    }
    Ok((shape[0], shape[1]))
}

fn run_forward<S: Scalar>(
    params: &ModelParams<S>,
    input: &Tensor<S>,
    keep_trace: bool,
) -> Result<(ForwardOutput<S>, Option<ForwardTrace<S>>)> {
    let spec = &params.spec;
    let (n, mut side) = validate_input(spec, input)?;
    ensure_finite("encoder input", input)?;
    let mut flops = 0u64;

    let mut conv_cols = Vec::with_capacity(3);
    let mut conv_out = Vec::with_capacity(3);
    let mut conv_dims = Vec::with_capacity(3);
    let mut current = input.data().to_vec();
    let mut channels = spec.in_channels;
    for (idx, layer) in params.conv.iter().enumerate() {
        let (cols, out_side) = im2col(&current, n, side, channels);
        let co = layer.weight.shape()[3];
        let rows = n * out_side * out_side;
        let k = 9 * channels;
        let mut out = Tensor::zeros(&[rows, co]);
        matmul_nn(
            cols.data(),
            layer.weight.data(),
            out.data_mut(),
            rows,
            k,
            co,
        );
        add_bias_rows(out.data_mut(), layer.bias.data());
        leaky_relu_inplace(out.data_mut());
        flops += 2 * (rows * k * co) as u64;
        ensure_finite(&format!("conv{}", idx + 1), &out)?;
        conv_dims.push((side, out_side));
        if keep_trace {
            conv_cols.push(cols);
        }
        current = out.data().to_vec();
        conv_out.push(out);
        side = out_side;
        channels = co;
    }

    // Global average pool over the spatial grid.
    let c3 = channels;
    let cells = side * side;
    let inv_cells = S::from_f64_val(1.0 / cells as f64);
    let mut features = Tensor::zeros(&[n, c3]);
    {
        let last = conv_out.last().expect("three conv layers");
        for img in 0..n {
            let feat_row = &mut features.data_mut()[img * c3..(img + 1) * c3];
            for cell in 0..cells {
                let row = &last.data()[(img * cells + cell) * c3..(img * cells + cell + 1) * c3];
                for (f, &v) in feat_row.iter_mut().zip(row) {
                    *f += v;
                }
            }
            for f in feat_row.iter_mut() {
                *f *= inv_cells;
            }
        }
    }

    let mut proj_hidden = dense_forward(&features, &params.proj[0], &mut flops);
    leaky_relu_inplace(proj_hidden.data_mut());
    let embedding_pre = dense_forward(&proj_hidden, &params.proj[1], &mut flops);
    ensure_finite("projection", &embedding_pre)?;
    let (embedding, std_inv) = batch_std_forward(&embedding_pre);

    let mut pred_hidden = dense_forward(&embedding, &params.pred[0], &mut flops);
    leaky_relu_inplace(pred_hidden.data_mut());
    let prediction = dense_forward(&pred_hidden, &params.pred[1], &mut flops);
    ensure_finite("predictor", &prediction)?;

    let trace = keep_trace.then(|| ForwardTrace {
        input_dims: (n, input.shape()[1], spec.in_channels),
        conv_cols,
        conv_out: conv_out.clone(),
        conv_dims,
        features: features.clone(),
        proj_hidden,
        std_xhat: embedding.clone(),
        std_inv,
        pred_hidden,
    });
    Ok((
        ForwardOutput {
            features,
            embedding_pre,
            embedding,
            prediction,
            flops,
        },
        trace,
    ))
}

/// Inference-only forward pass.
pub fn forward<S: Scalar>(params: &ModelParams<S>, input: &Tensor<S>) -> Result<ForwardOutput<S>> {
    run_forward(params, input, false).map(|(out, _)| out)
}

/// Forward pass that caches what the backward pass needs.
pub fn forward_with_trace<S: Scalar>(
    params: &ModelParams<S>,
    input: &Tensor<S>,
) -> Result<(ForwardOutput<S>, ForwardTrace<S>)> {
    run_forward(params, input, true).map(|(out, trace)| (out, trace.expect("trace requested")))
}

/// Backpropagate `d_prediction` (gradient on the predictor output) and
/// `d_embedding` (gradient flowing *directly* into the standardized
/// embedding; identically zero under a stop-gradient loss) into parameter
/// gradients.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    trace: &ForwardTrace<S>,
    d_prediction: &Tensor<S>,
    d_embedding: &Tensor<S>,
) -> Result<ModelParams<S>> {
    let spec = &params.spec;
    let mut grads = params.zeros_like();

    // Predictor.
    let g2 = dense_backward(&trace.pred_hidden, &params.pred[1], d_prediction);
    grads.pred[1].weight = g2.d_weight;
    grads.pred[1].bias = g2.d_bias;
    let mut d_pred_hidden = g2.d_input;
    leaky_relu_backward(d_pred_hidden.data_mut(), trace.pred_hidden.data());
    let g1 = dense_backward(&trace.std_xhat, &params.pred[0], &d_pred_hidden);
    grads.pred[0].weight = g1.d_weight;
    grads.pred[0].bias = g1.d_bias;

    // Total gradient on z: through the predictor plus any direct term.
    let mut d_z = g1.d_input;
    if d_embedding.shape() != d_z.shape() {
        return Err(Error::ShapeMismatch {
            context: "embedding gradient".into(),
            expected: d_z.shape().to_vec(),
            actual: d_embedding.shape().to_vec(),
        });
    }
    for (a, &b) in d_z.data_mut().iter_mut().zip(d_embedding.data()) {
        *a += b;
    }

    // Batch standardization, then the projection MLP.
    let d_embed_pre = batch_std_backward(&trace.std_xhat, &trace.std_inv, &d_z);
    let gp2 = dense_backward(&trace.proj_hidden, &params.proj[1], &d_embed_pre);
    grads.proj[1].weight = gp2.d_weight;
    grads.proj[1].bias = gp2.d_bias;
    let mut d_proj_hidden = gp2.d_input;
    leaky_relu_backward(d_proj_hidden.data_mut(), trace.proj_hidden.data());
    let gp1 = dense_backward(&trace.features, &params.proj[0], &d_proj_hidden);
    grads.proj[0].weight = gp1.d_weight;
    grads.proj[0].bias = gp1.d_bias;
    let d_features = gp1.d_input;

    // Un-pool: spread the feature gradient evenly over the spatial grid.
    let (n, _, _) = trace.input_dims;
    let c3 = spec.conv_channels[2];
    let last_side = trace.conv_dims[2].1;
    let cells = last_side * last_side;
    let inv_cells = S::from_f64_val(1.0 / cells as f64);
    let rows3 = n * cells;
    let mut d_out = Tensor::zeros(&[rows3, c3]);
    for img in 0..n {
        let feat_row = &d_features.data()[img * c3..(img + 1) * c3];
        for cell in 0..cells {
            let row = &mut d_out.data_mut()[(img * cells + cell) * c3..(img * cells + cell + 1) * c3];
            for (r, &f) in row.iter_mut().zip(feat_row) {
                *r = f * inv_cells;
            }
        }
    }

    // Convolution stack, last to first. The input gradient of conv1 is
    // never needed, so it is skipped.
    for idx in (0..3).rev() {
        let layer = &params.conv[idx];
        leaky_relu_backward(d_out.data_mut(), trace.conv_out[idx].data());
        let (in_side, out_side) = trace.conv_dims[idx];
        let ci = layer.weight.shape()[2];
        let co = layer.weight.shape()[3];
        let rows = n * out_side * out_side;
        let k = 9 * ci;
        matmul_tn(
            trace.conv_cols[idx].data(),
            d_out.data(),
            grads.conv[idx].weight.data_mut(),
            rows,
            k,
            co,
        );
        for row in d_out.data().chunks(co) {
            for (b, &d) in grads.conv[idx].bias.data_mut().iter_mut().zip(row) {
                *b += d;
            }
        }
        if idx > 0 {
            let mut d_cols = vec![S::zero(); rows * k];
            matmul_nt(d_out.data(), layer.weight.data(), &mut d_cols, rows, k, co);
            let prev_rows = n * in_side * in_side;
            let mut d_prev = vec![S::zero(); prev_rows * ci];
            col2im(&d_cols, n, in_side, ci, &mut d_prev);
            d_out = Tensor::from_vec(&[prev_rows, ci], d_prev)?;
        }
    }

    Ok(grads)
}

/// Forward FLOPs for a batch at the given input side, computed from layer
/// dimensions alone. Matches the counter inside [`forward`] exactly.
pub fn forward_flops(spec: &ModelSpec, batch: usize, side: usize) -> u64 {
    let mut flops = 0u64;
    let mut s = side;
    let mut ci = spec.in_channels;
    for &co in &spec.conv_channels {
        let out = conv_out_side(s);
        flops += 2 * (batch * out * out * 9 * ci * co) as u64;
        s = out;
        ci = co;
    }
    flops += 2 * (batch * spec.conv_channels[2] * spec.proj_hidden) as u64;
    flops += 2 * (batch * spec.proj_hidden * spec.embed_dim) as u64;
    flops += 2 * (batch * spec.embed_dim * spec.pred_hidden) as u64;
    flops += 2 * (batch * spec.pred_hidden * spec.embed_dim) as u64;
    flops
}
