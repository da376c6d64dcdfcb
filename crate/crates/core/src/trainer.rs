//! Exact-arithmetic reference trainer: softmax cross-entropy, reverse-mode
//! gradients through conv/dense/relu/maxpool/flatten, and mini-batch SGD.
//!
//! Training never goes through the approximate kernels. It is single
//! threaded, so a fixed seed gives bit-identical weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::network::{Architecture, Conv2d, Dense, Layer, NetworkSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.03, epochs: 20, batch_size: 8, seed: 0, lr_decay: 0.95 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParam("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::InvalidParam(format!("lr decay {} must be positive", self.lr_decay)));
        }
        Ok(())
    }
}

/// Gradient of one parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradients aligned with `NetworkSpec::layers`; `None` for layers without
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_like(net: &NetworkSpec) -> Gradients {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => {
                    Some(ParamGrad { weights: vec![0.0; c.weights.len()], biases: vec![0.0; c.biases.len()] })
                }
                Layer::Dense(d) => {
                    Some(ParamGrad { weights: vec![0.0; d.weights.len()], biases: vec![0.0; d.biases.len()] })
                }
                _ => None,
            })
            .collect();
        Gradients { layers }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
                a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flatten().flat_map(|g| g.weights.iter().chain(&g.biases).copied())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flatten().flat_map(|g| g.weights.iter_mut().chain(g.biases.iter_mut()))
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Builds `arch` with weights uniform in `+-sqrt(6 / (fan_in + fan_out))`
/// and zero biases.
pub fn init_network(arch: Architecture, seed: u64) -> NetworkSpec {
    let mut net = arch.build_zeroed();
    init_weights(&mut net, seed);
    net
}

pub fn init_weights(net: &mut NetworkSpec, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut net.layers {
        let (weights, biases, fan_in, fan_out) = match layer {
            Layer::Conv2d(c) => {
                let area = c.kernel_h * c.kernel_w;
                (&mut c.weights, &mut c.biases, c.in_channels * area, c.out_channels * area)
            }
            Layer::Dense(d) => (&mut d.weights, &mut d.biases, d.in_features, d.out_features),
            _ => continue,
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.iter_mut().for_each(|w| *w = rng.random_range(-limit..=limit));
        biases.iter_mut().for_each(|b| *b = 0.0);
    }
}

/// Activations saved by the forward pass for the backward pass.
struct Cache {
    /// Input to each layer up to the logits.
    inputs: Vec<Tensor>,
    /// Flat input index chosen by each pooled output (empty for other layers).
    pool_argmax: Vec<Vec<usize>>,
}

/// Layers before the trailing softmax layers; softmax is folded into the
/// loss.
fn logits_end(net: &NetworkSpec) -> Result<usize> {
    let end = net.layers.iter().rposition(|l| !matches!(l, Layer::Softmax)).map_or(0, |i| i + 1);
    if net.layers[..end].iter().any(|l| matches!(l, Layer::Softmax)) {
        return Err(Error::Shape("softmax is only supported as the final layer when training".into()));
    }
    Ok(end)
}

fn forward_cached(net: &NetworkSpec, image: &Tensor) -> Result<(Tensor, Cache)> {
    if image.shape() != net.input_shape.as_slice() {
        return Err(Error::Shape(format!("network expects {:?}, got {:?}", net.input_shape, image.shape())));
    }
    let end = logits_end(net)?;
    let mut cache = Cache { inputs: Vec::with_capacity(end), pool_argmax: Vec::with_capacity(end) };
    let mut x = image.clone();
    for layer in &net.layers[..end] {
        let mut argmax = Vec::new();
        let y = match layer {
            Layer::Conv2d(c) => conv_exact(&x, c)?,
            Layer::Dense(d) => dense_exact(&x, d)?,
            Layer::MaxPool2d { window_h, window_w } => {
                let (y, idx) = maxpool_with_argmax(&x, *window_h, *window_w)?;
                argmax = idx;
                y
            }
            Layer::Relu => crate::network::relu(&x),
            Layer::Flatten => crate::network::flatten(&x),
            Layer::Softmax => unreachable!("excluded by logits_end"),
        };
        cache.inputs.push(std::mem::replace(&mut x, y));
        cache.pool_argmax.push(argmax);
    }
    Ok((x, cache))
}

fn conv_exact(x: &Tensor, c: &Conv2d) -> Result<Tensor> {
    let mut ops = crate::ops::OpCount::ZERO;
    crate::network::conv2d_forward(x, c, crate::kernels::MulKernel::EXACT, &mut ops)
}

fn dense_exact(x: &Tensor, d: &Dense) -> Result<Tensor> {
    let mut ops = crate::ops::OpCount::ZERO;
    crate::network::dense_forward(x, d, crate::kernels::MulKernel::EXACT, &mut ops)
}

fn maxpool_with_argmax(x: &Tensor, wh: usize, ww: usize) -> Result<(Tensor, Vec<usize>)> {
    let y = crate::network::maxpool2d(x, wh, ww)?;
    let (c, h, w) = x.dims3()?;
    let (_, oh, ow) = y.dims3()?;
    let mut idx = Vec::with_capacity(y.len());
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + oy * wh) * w + ox * ww;
                for dy in 0..wh {
                    for dx in 0..ww {
                        let i = (ch * h + oy * wh + dy) * w + ox * ww + dx;
                        if x.data()[i] > x.data()[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok((y, idx))
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn check_label(logits: &Tensor, label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::InvalidParam(format!("label {label} outside [0, {})", logits.len())));
    }
    Ok(())
}

/// Cross-entropy of the softmax of the network's logits.
pub fn loss(net: &NetworkSpec, image: &Tensor, label: usize) -> Result<f64> {
    let (logits, _) = forward_cached(net, image)?;
    check_label(&logits, label)?;
    Ok(cross_entropy(logits.data(), label))
}

/// Gradients of the softmax cross-entropy loss with respect to every
/// weight and bias.
pub fn network_backward(net: &NetworkSpec, image: &Tensor, label: usize) -> Result<Gradients> {
    Ok(loss_and_gradients(net, image, label)?.1)
}

pub fn loss_and_gradients(net: &NetworkSpec, image: &Tensor, label: usize) -> Result<(f64, Gradients)> {
    let (logits, cache) = forward_cached(net, image)?;
    check_label(&logits, label)?;
    let loss = cross_entropy(logits.data(), label);

    let mut grad: Vec<f64> = crate::network::layers::softmax_slice(logits.data());
    grad[label] -= 1.0;

    let mut grads = Gradients::zeros_like(net);
    for i in (0..cache.inputs.len()).rev() {
        let input = &cache.inputs[i];
        let need_input_grad = i > 0;
        grad = match &net.layers[i] {
            Layer::Dense(d) => {
                let g = grads.layers[i].as_mut().expect("dense has params");
                let x = input.data();
                let mut gx = vec![0.0; d.in_features];
                for (o, &go) in grad.iter().enumerate() {
                    g.biases[o] += go;
                    let row = o * d.in_features;
                    for j in 0..d.in_features {
                        g.weights[row + j] += go * x[j];
                        gx[j] += d.weights[row + j] * go;
                    }
                }
                gx
            }
            Layer::Conv2d(c) => {
                let g = grads.layers[i].as_mut().expect("conv has params");
                conv_backward(input, c, &grad, g, need_input_grad)?
            }
            Layer::Relu => grad.iter().zip(input.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
            Layer::MaxPool2d { .. } => {
                let mut gx = vec![0.0; input.len()];
                for (&src, g) in cache.pool_argmax[i].iter().zip(&grad) {
                    gx[src] += g;
                }
                gx
            }
            Layer::Flatten => grad,
            Layer::Softmax => unreachable!("excluded by logits_end"),
        };
    }
    Ok((loss, grads))
}

fn conv_backward(
    input: &Tensor,
    c: &Conv2d,
    grad_out: &[f64],
    g: &mut ParamGrad,
    need_input_grad: bool,
) -> Result<Vec<f64>> {
    let (_, h, w) = input.dims3()?;
    let (oh, ow) = (h - c.kernel_h + 1, w - c.kernel_w + 1);
    let x = input.data();
    let mut gx = if need_input_grad { vec![0.0; x.len()] } else { Vec::new() };
    let taps = c.in_channels * c.kernel_h * c.kernel_w;
    for oc in 0..c.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let go = grad_out[(oc * oh + oy) * ow + ox];
                if go == 0.0 {
                    continue;
                }
                g.biases[oc] += go;
                let mut t = oc * taps;
                for ic in 0..c.in_channels {
                    for ky in 0..c.kernel_h {
                        let row = (ic * h + oy + ky) * w + ox;
                        for kx in 0..c.kernel_w {
                            g.weights[t] += go * x[row + kx];
                            if need_input_grad {
                                gx[row + kx] += c.weights[t] * go;
                            }
                            t += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// `w <- w - lr * g` for every parameter.
pub fn sgd_step(net: &mut NetworkSpec, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Shape("gradient layout does not match the network".into()));
    }
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        let (weights, biases) = match layer {
            Layer::Conv2d(c) => (&mut c.weights, &mut c.biases),
            Layer::Dense(d) => (&mut d.weights, &mut d.biases),
            _ => continue,
        };
        let g = g.as_ref().ok_or_else(|| Error::Shape("missing gradient for a parameterised layer".into()))?;
        if g.weights.len() != weights.len() || g.biases.len() != biases.len() {
            return Err(Error::Shape("gradient length does not match layer parameters".into()));
        }
        weights.iter_mut().zip(&g.weights).for_each(|(w, g)| *w -= lr * g);
        biases.iter_mut().zip(&g.biases).for_each(|(b, g)| *b -= lr * g);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean loss over the epoch's samples, measured before each update.
    pub train_loss: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

/// Mini-batch SGD over `data`. Batches are drawn from a seeded shuffle each
/// epoch; gradients are averaged over the batch in sample order.
pub fn train(
    mut net: NetworkSpec,
    data: &Dataset,
    heldout: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(NetworkSpec, History)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut total = Gradients::zeros_like(&net);
            for &i in batch {
                let sample = &data.items[i];
                let (loss, g) = loss_and_gradients(&net, &sample.image, sample.label)?;
                loss_sum += loss;
                total.accumulate(&g);
            }
            total.scale(1.0 / batch.len() as f64);
            sgd_step(&mut net, &total, lr)?;
        }
        let heldout_accuracy = heldout.map(|h| exact_accuracy(&net, h)).transpose()?;
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss: loss_sum / data.len() as f64,
            heldout_accuracy,
        });
        lr *= cfg.lr_decay;
    }
    Ok((net, history))
}

/// Percentage of `data` classified correctly with exact arithmetic.
pub fn exact_accuracy(net: &NetworkSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    for s in &data.items {
        let (logits, _) = forward_cached(net, &s.image)?;
        if logits.argmax() == s.label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation flipped a relu or pooling decision, so
    /// the loss is not differentiable along that direction at this step.
    pub skipped: usize,
}

/// Denominator floor for relative errors; below it differences are
/// effectively absolute.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Relative difference `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Central difference of a scalar function.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Checks every parameter's analytic gradient against a central difference
/// with step `eps`.
pub fn grad_check(net: &NetworkSpec, image: &Tensor, label: usize, eps: f64) -> Result<GradCheck> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidParam(format!("eps {eps} outside (0, 1e-2]")));
    }
    let analytic = network_backward(net, image, label)?;
    let base_signature = signature(net, image)?;

    let mut probe = net.clone();
    let mut report = GradCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for (li, g) in analytic.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        for (which, grads) in [(0, &g.weights), (1, &g.biases)] {
            for (pi, &a) in grads.iter().enumerate() {
                let original = param(&mut probe, li, which, pi);
                let mut evaluate = |value: f64| -> Result<(f64, Vec<usize>)> {
                    *param_mut(&mut probe, li, which, pi) = value;
                    let (logits, cache) = forward_cached(&probe, image)?;
                    Ok((cross_entropy(logits.data(), label), signature_of(&probe, &cache)))
                };
                let (plus, sig_plus) = evaluate(original + eps)?;
                let (minus, sig_minus) = evaluate(original - eps)?;
                *param_mut(&mut probe, li, which, pi) = original;
                if sig_plus != base_signature || sig_minus != base_signature {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * eps);
                report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
                report.checked += 1;
            }
        }
    }
    Ok(report)
}

fn param(net: &mut NetworkSpec, layer: usize, which: usize, index: usize) -> f64 {
    *param_mut(net, layer, which, index)
}

fn param_mut(net: &mut NetworkSpec, layer: usize, which: usize, index: usize) -> &mut f64 {
    let (w, b) = match &mut net.layers[layer] {
        Layer::Conv2d(c) => (&mut c.weights, &mut c.biases),
        Layer::Dense(d) => (&mut d.weights, &mut d.biases),
        _ => unreachable!("only parameterised layers have gradients"),
    };
    if which == 0 {
        &mut w[index]
    } else {
        &mut b[index]
    }
}

/// Relu activity pattern and pooling choices of a forward pass.
fn signature(net: &NetworkSpec, image: &Tensor) -> Result<Vec<usize>> {
    let (_, cache) = forward_cached(net, image)?;
    Ok(signature_of(net, &cache))
}

fn signature_of(net: &NetworkSpec, cache: &Cache) -> Vec<usize> {
    let mut sig = Vec::new();
    for (i, input) in cache.inputs.iter().enumerate() {
        match net.layers[i] {
            Layer::Relu => sig.extend(input.data().iter().map(|&v| usize::from(v > 0.0))),
            Layer::MaxPool2d { .. } => sig.extend_from_slice(&cache.pool_argmax[i]),
            _ => {}
        }
    }
    sig
}
