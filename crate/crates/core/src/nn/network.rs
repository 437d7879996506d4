//! Forward and reverse-mode passes over a [`ParameterStore`].
//!
//! The architecture is lowered to a flat op program; training-mode forward
//! records a tape that [`backward`] walks in reverse. Per-sample convolution
//! work runs in parallel, and every cross-sample reduction is summed in sample
//! order so results do not depend on thread scheduling.

use rayon::prelude::*;

use super::spec::{weight_key, Family, NetworkSpec, CLASSIFIER, STEM_BN, STEM_CONV};
use super::store::{Gradients, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Conv { layer: String, stride: usize },
    BatchNorm { layer: String },
    Relu,
    PushSkip,
    /// Adds the saved block input, subsampled and zero-padded to `out_channels` when needed.
    AddSkip { stride: usize, out_channels: usize },
    GlobalPool,
    Linear { layer: String },
}

fn program(spec: &NetworkSpec) -> Vec<Op> {
    let mut ops = vec![
        Op::Conv { layer: STEM_CONV.into(), stride: 1 },
        Op::BatchNorm { layer: STEM_BN.into() },
        Op::Relu,
    ];
    for block in spec.blocks() {
        let residual = spec.family == Family::Residual;
        if residual {
            ops.push(Op::PushSkip);
        }
        ops.push(Op::Conv { layer: block.conv1(), stride: block.stride });
        ops.push(Op::BatchNorm { layer: block.bn1() });
        ops.push(Op::Relu);
        ops.push(Op::Conv { layer: block.conv2(), stride: 1 });
        ops.push(Op::BatchNorm { layer: block.bn2() });
        if residual {
            ops.push(Op::AddSkip { stride: block.stride, out_channels: block.out_channels });
        }
        ops.push(Op::Relu);
    }
    ops.push(Op::GlobalPool);
    ops.push(Op::Linear { layer: CLASSIFIER.into() });
    ops
}

/// Observes or rewrites the input of every weight-bearing layer (conv or linear)
/// before that layer consumes it. Used for activation calibration and fake quantization.
pub trait ActivationHook {
    fn before_layer(&mut self, layer: &str, input: &mut Tensor) -> Result<()>;
}

/// Batch-norm behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Running statistics.
    Eval,
    /// Batch statistics; the tape records what [`backward`] needs.
    Train,
}

enum Saved {
    Conv { input: Tensor },
    BatchNorm { xhat: Tensor, inv_std: Vec<f64> },
    Relu { output: Tensor },
    PushSkip,
    AddSkip { in_shape: Vec<usize> },
    GlobalPool { in_shape: Vec<usize> },
    Linear { input: Tensor },
}

/// Batch statistics of one batch-norm layer (biased variance) and its element count per channel.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub layer: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Everything recorded by a training-mode forward pass.
pub struct Tape {
    ops: Vec<Op>,
    saved: Vec<Saved>,
    pub batch_stats: Vec<BatchStats>,
}

pub fn check_input(spec: &NetworkSpec, inputs: &Tensor) -> Result<()> {
    let [c, h, w] = spec.input_shape;
    let s = inputs.shape();
    if s.len() != 4 || s[0] == 0 || s[1..] != [c, h, w] {
        return Err(Error::input(format!(
            "batch shape {:?} does not match N×{c}×{h}×{w} with N >= 1",
            s
        )));
    }
    Ok(())
}

/// Inference-mode scores, shape N×K.
pub fn forward(store: &ParameterStore, inputs: &Tensor) -> Result<Tensor> {
    run(store, inputs, Mode::Eval, None).map(|(out, _)| out)
}

/// Inference-mode scores with a hook on every weight layer's input.
pub fn forward_with_hook(store: &ParameterStore, inputs: &Tensor, hook: &mut dyn ActivationHook) -> Result<Tensor> {
    run(store, inputs, Mode::Eval, Some(hook)).map(|(out, _)| out)
}

/// Training-mode forward: batch-statistics normalization, tape recorded.
pub fn forward_train(store: &ParameterStore, inputs: &Tensor) -> Result<(Tensor, Tape)> {
    let (out, tape) = run(store, inputs, Mode::Train, None)?;
    Ok((out, tape.expect("train mode records a tape")))
}

fn run(
    store: &ParameterStore,
    inputs: &Tensor,
    mode: Mode,
    mut hook: Option<&mut dyn ActivationHook>,
) -> Result<(Tensor, Option<Tape>)> {
    check_input(&store.spec, inputs)?;
    store.check_shapes()?;
    let ops = program(&store.spec);
    let record = mode == Mode::Train;
    let mut saved = Vec::with_capacity(if record { ops.len() } else { 0 });
    let mut batch_stats = Vec::new();
    let mut skips: Vec<Tensor> = Vec::new();
    let mut x = inputs.clone();

    for op in &ops {
        match op {
            Op::Conv { layer, stride } => {
                if let Some(h) = hook.as_deref_mut() {
                    h.before_layer(layer, &mut x)?;
                }
                let y = conv2d(&x, store.weight(layer), *stride);
                if record {
                    saved.push(Saved::Conv { input: std::mem::replace(&mut x, y) });
                } else {
                    x = y;
                }
            }
            Op::BatchNorm { layer } => match mode {
                Mode::Eval => batch_norm_eval(&mut x, store, layer),
                Mode::Train => {
                    let (xhat, inv_std, stats) = batch_norm_train(&mut x, store, layer);
                    batch_stats.push(stats);
                    saved.push(Saved::BatchNorm { xhat, inv_std });
                }
            },
            Op::Relu => {
                x.map_inplace(|v| v.max(0.0));
                if record {
                    saved.push(Saved::Relu { output: x.clone() });
                }
            }
            Op::PushSkip => {
                skips.push(x.clone());
                if record {
                    saved.push(Saved::PushSkip);
                }
            }
            Op::AddSkip { stride, out_channels } => {
                let skip = skips.pop().expect("balanced skip ops");
                let in_shape = skip.shape().to_vec();
                add_shortcut(&mut x, &skip, *stride, *out_channels);
                if record {
                    saved.push(Saved::AddSkip { in_shape });
                }
            }
            Op::GlobalPool => {
                let in_shape = x.shape().to_vec();
                x = global_pool(&x);
                if record {
                    saved.push(Saved::GlobalPool { in_shape });
                }
            }
            Op::Linear { layer } => {
                if let Some(h) = hook.as_deref_mut() {
                    h.before_layer(layer, &mut x)?;
                }
                let y = linear(&x, store.weight(layer), store.param(&format!("{layer}.bias")));
                if record {
                    saved.push(Saved::Linear { input: std::mem::replace(&mut x, y) });
                } else {
                    x = y;
                }
            }
        }
    }
    let tape = record.then_some(Tape { ops, saved, batch_stats });
    Ok((x, tape))
}

/// Gradients of a scalar loss with respect to every trainable parameter, given
/// `d loss / d scores` for the pass recorded in `tape`.
pub fn backward(store: &ParameterStore, tape: &Tape, grad_scores: &Tensor) -> Result<Gradients> {
    let mut grads = store.zero_grads();
    let mut g = grad_scores.clone();
    let mut skip_grads: Vec<Tensor> = Vec::new();
    for (op, saved) in tape.ops.iter().zip(&tape.saved).rev() {
        match (op, saved) {
            (Op::Conv { layer, stride }, Saved::Conv { input }) => {
                let (dx, dw) = conv2d_backward(input, store.weight(layer), &g, *stride);
                grads.get_mut(&weight_key(layer)).expect("grad slot").add_scaled(&dw, 1.0);
                g = dx;
            }
            (Op::BatchNorm { layer }, Saved::BatchNorm { xhat, inv_std }) => {
                let (dgamma, dbeta) = batch_norm_backward(&mut g, xhat, inv_std, store, layer);
                grads.get_mut(&format!("{layer}.gamma")).expect("grad slot").add_scaled(&dgamma, 1.0);
                grads.get_mut(&format!("{layer}.beta")).expect("grad slot").add_scaled(&dbeta, 1.0);
            }
            (Op::Relu, Saved::Relu { output }) => {
                for (gv, ov) in g.data_mut().iter_mut().zip(output.data()) {
                    if *ov <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            (Op::AddSkip { stride, .. }, Saved::AddSkip { in_shape }) => {
                skip_grads.push(shortcut_backward(&g, in_shape, *stride));
            }
            (Op::PushSkip, Saved::PushSkip) => {
                let sg = skip_grads.pop().expect("balanced skip ops");
                g.add_scaled(&sg, 1.0);
            }
            (Op::GlobalPool, Saved::GlobalPool { in_shape }) => {
                g = global_pool_backward(&g, in_shape);
            }
            (Op::Linear { layer }, Saved::Linear { input }) => {
                let w = store.weight(layer);
                let (n, k) = (g.shape()[0], g.shape()[1]);
                let c = input.shape()[1];
                let mut dw = vec![0.0; k * c];
                matmul_at_acc(g.data(), input.data(), &mut dw, n, k, c);
                let mut db = vec![0.0; k];
                for i in 0..n {
                    for (d, v) in db.iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                let mut dx = vec![0.0; n * c];
                matmul_acc(g.data(), w.data(), &mut dx, n, k, c);
                grads.get_mut(&weight_key(layer)).expect("grad slot").add_scaled(&Tensor::new(vec![k, c], dw)?, 1.0);
                grads.get_mut(&format!("{layer}.bias")).expect("grad slot").add_scaled(&Tensor::new(vec![k], db)?, 1.0);
                g = Tensor::new(vec![n, c], dx)?;
            }
            _ => unreachable!("tape out of sync with program"),
        }
    }
    Ok(grads)
}

/// Folds one batch's statistics into the running estimates (unbiased variance).
pub fn update_running_stats(store: &mut ParameterStore, stats: &[BatchStats]) {
    for s in stats {
        let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
        let rm = store.get_mut(&format!("{}.running_mean", s.layer)).expect("running mean");
        for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = store.get_mut(&format!("{}.running_var", s.layer)).expect("running var");
        for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

// ---------------------------------------------------------------------------
// kernels

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, ho: usize, wo: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let hw = ho * wo;
    let mut cols = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + ih as usize) * w..(ci * h + ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[oh * wo + ow] = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, ho: usize, wo: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let hw = ho * wo;
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            x[(ci * h + ih as usize) * w + iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_geometry(x: &Tensor, weight: &Tensor, stride: usize) -> (usize, usize, usize, usize, usize, usize, usize, usize) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, k) = (weight.shape()[0], weight.shape()[2]);
    debug_assert_eq!(weight.shape()[1], c, "conv input channels");
    let pad = (k - 1) / 2;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    (n, c, h, w, f, k, ho, wo)
}

fn conv2d(x: &Tensor, weight: &Tensor, stride: usize) -> Tensor {
    let (n, c, h, w, f, k, ho, wo) = conv_geometry(x, weight, stride);
    let ckk = c * k * k;
    let per_sample: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.row(i), c, h, w, k, stride, ho, wo);
            let mut out = vec![0.0; f * ho * wo];
            matmul_acc(weight.data(), &cols, &mut out, f, ckk, ho * wo);
            out
        })
        .collect();
    Tensor::new(vec![n, f, ho, wo], per_sample.concat()).expect("conv output shape")
}

fn conv2d_backward(x: &Tensor, weight: &Tensor, grad: &Tensor, stride: usize) -> (Tensor, Tensor) {
    let (n, c, h, w, f, k, ho, wo) = conv_geometry(x, weight, stride);
    let ckk = c * k * k;
    let hw = ho * wo;
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.row(i), c, h, w, k, stride, ho, wo);
            let g = grad.row(i);
            let mut dw = vec![0.0; f * ckk];
            matmul_bt_acc(g, &cols, &mut dw, f, hw, ckk);
            let mut dcols = vec![0.0; ckk * hw];
            matmul_at_acc(weight.data(), g, &mut dcols, f, ckk, hw);
            (col2im(&dcols, c, h, w, k, stride, ho, wo), dw)
        })
        .collect();
    let mut dw_total = vec![0.0; f * ckk];
    let mut dx = Vec::with_capacity(n * c * h * w);
    for (dxi, dwi) in per_sample {
        dx.extend_from_slice(&dxi);
        for (a, b) in dw_total.iter_mut().zip(&dwi) {
            *a += b;
        }
    }
    (
        Tensor::new(vec![n, c, h, w], dx).expect("dx shape"),
        Tensor::new(weight.shape().to_vec(), dw_total).expect("dw shape"),
    )
}

fn bn_params<'a>(store: &'a ParameterStore, layer: &str) -> (&'a [f64], &'a [f64]) {
    (store.param(&format!("{layer}.gamma")).data(), store.param(&format!("{layer}.beta")).data())
}

fn batch_norm_eval(x: &mut Tensor, store: &ParameterStore, layer: &str) {
    let (gamma, beta) = bn_params(store, layer);
    let mean = store.param(&format!("{layer}.running_mean")).data();
    let var = store.param(&format!("{layer}.running_var")).data();
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let hw = x.row_len() / c;
    let data = x.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            for v in &mut data[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                *v = *v * scale + shift;
            }
        }
    }
}

fn batch_norm_train(x: &mut Tensor, store: &ParameterStore, layer: &str) -> (Tensor, Vec<f64>, BatchStats) {
    let (gamma, beta) = bn_params(store, layer);
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let hw = x.row_len() / c;
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    {
        let data = x.data();
        for i in 0..n {
            for ch in 0..c {
                mean[ch] += data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for i in 0..n {
            for ch in 0..c {
                var[ch] += data[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.clone();
    {
        let xh = xhat.data_mut();
        let out = x.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for (o, h) in out[range.clone()].iter_mut().zip(&mut xh[range]) {
                    *h = (*o - mean[ch]) * inv_std[ch];
                    *o = gamma[ch] * *h + beta[ch];
                }
            }
        }
    }
    let stats = BatchStats { layer: layer.to_string(), mean, var, count: n * hw };
    (xhat, inv_std, stats)
}

fn batch_norm_backward(
    g: &mut Tensor,
    xhat: &Tensor,
    inv_std: &[f64],
    store: &ParameterStore,
    layer: &str,
) -> (Tensor, Tensor) {
    let (gamma, _) = bn_params(store, layer);
    let (n, c) = (g.shape()[0], g.shape()[1]);
    let hw = g.row_len() / c;
    let m = (n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for (gv, hv) in g.data()[range.clone()].iter().zip(&xhat.data()[range]) {
                dbeta[ch] += gv;
                dgamma[ch] += gv * hv;
            }
        }
    }
    let data = g.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * inv_std[ch] / m;
            let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for (gv, hv) in data[range.clone()].iter_mut().zip(&xhat.data()[range]) {
                *gv = k * (m * *gv - dbeta[ch] - hv * dgamma[ch]);
            }
        }
    }
    (
        Tensor::new(vec![c], dgamma).expect("dgamma"),
        Tensor::new(vec![c], dbeta).expect("dbeta"),
    )
}

fn channel_pad(in_channels: usize, out_channels: usize) -> usize {
    (out_channels - in_channels) / 2
}

fn add_shortcut(x: &mut Tensor, skip: &Tensor, stride: usize, out_channels: usize) {
    let (n, cin, h, w) = (skip.shape()[0], skip.shape()[1], skip.shape()[2], skip.shape()[3]);
    let (ho, wo) = (x.shape()[2], x.shape()[3]);
    debug_assert_eq!(x.shape()[1], out_channels);
    let lo = channel_pad(cin, out_channels);
    let data = x.data_mut();
    for i in 0..n {
        for c in 0..cin {
            for oh in 0..ho {
                for ow in 0..wo {
                    let src = skip.data()[((i * cin + c) * h + oh * stride) * w + ow * stride];
                    data[((i * out_channels + c + lo) * ho + oh) * wo + ow] += src;
                }
            }
        }
    }
}

fn shortcut_backward(g: &Tensor, in_shape: &[usize], stride: usize) -> Tensor {
    let (n, cin, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (cout, ho, wo) = (g.shape()[1], g.shape()[2], g.shape()[3]);
    let lo = channel_pad(cin, cout);
    let mut out = Tensor::zeros(in_shape);
    let data = out.data_mut();
    for i in 0..n {
        for c in 0..cin {
            for oh in 0..ho {
                for ow in 0..wo {
                    data[((i * cin + c) * h + oh * stride) * w + ow * stride] +=
                        g.data()[((i * cout + c + lo) * ho + oh) * wo + ow];
                }
            }
        }
    }
    out
}

fn global_pool(x: &Tensor) -> Tensor {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let hw = x.row_len() / c;
    let data: Vec<f64> = x.data().chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
    Tensor::new(vec![n, c], data).expect("pool shape")
}

fn global_pool_backward(g: &Tensor, in_shape: &[usize]) -> Tensor {
    let hw: usize = in_shape[2..].iter().product();
    let mut data = Vec::with_capacity(g.len() * hw);
    for v in g.data() {
        data.extend(std::iter::repeat_n(v / hw as f64, hw));
    }
    Tensor::new(in_shape.to_vec(), data).expect("pool grad shape")
}

fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let k = weight.shape()[0];
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        out[i * k..(i + 1) * k].copy_from_slice(bias.data());
    }
    matmul_bt_acc(x.data(), weight.data(), &mut out, n, c, k);
    Tensor::new(vec![n, k], out).expect("linear shape")
}
