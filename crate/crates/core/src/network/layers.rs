//! Layer definitions and their forward passes.
//!
//! Convolution and dense layers route every scalar product through a
//! [`MulKernel`]. Each accumulation of a product counts one add, and adding
//! the bias to an output counts one more, whatever the kernel. Pooling,
//! activations, and reshapes are not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{quantize_scale, MulKernel, Scales};
use crate::ops::OpCount;
use crate::tensor::Tensor;

/// Valid-padding, stride-1 convolution. Weights are laid out
/// `(out_channels, in_channels, kernel_h, kernel_w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Conv2d {
        Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            weights: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            biases: vec![0.0; out_channels],
        }
    }

    #[inline]
    pub fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [c, h, w] if c == self.in_channels && h >= self.kernel_h && w >= self.kernel_w => {
                Ok(vec![self.out_channels, h - self.kernel_h + 1, w - self.kernel_w + 1])
            }
            _ => Err(Error::Shape(format!(
                "conv2d {}->{} {}x{} cannot take input {input:?}",
                self.in_channels, self.out_channels, self.kernel_h, self.kernel_w
            ))),
        }
    }

    fn check(&self) -> Result<()> {
        let expected = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.out_channels == 0 || self.in_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Shape("conv2d dimensions must be nonzero".into()));
        }
        if self.weights.len() != expected || self.biases.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "conv2d expects {expected} weights and {} biases, has {} and {}",
                self.out_channels,
                self.weights.len(),
                self.biases.len()
            )));
        }
        Ok(())
    }
}

/// Fully connected layer. Weights are laid out `(out_features, in_features)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_features: usize, out_features: usize) -> Dense {
        Dense {
            in_features,
            out_features,
            weights: vec![0.0; in_features * out_features],
            biases: vec![0.0; out_features],
        }
    }

    fn check(&self) -> Result<()> {
        if self.in_features == 0 || self.out_features == 0 {
            return Err(Error::Shape("dense dimensions must be nonzero".into()));
        }
        if self.weights.len() != self.in_features * self.out_features || self.biases.len() != self.out_features {
            return Err(Error::Shape(format!(
                "dense {}->{} has {} weights and {} biases",
                self.in_features,
                self.out_features,
                self.weights.len(),
                self.biases.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Conv2d(Conv2d),
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        window_h: usize,
        window_w: usize,
    },
    Relu,
    Flatten,
    Dense(Dense),
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    /// Checks the layer's own parameters and computes its output shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(conv) => {
                conv.check()?;
                conv.output_shape(input)
            }
            Layer::MaxPool2d { window_h, window_w } => match *input {
                [c, h, w] if *window_h > 0 && *window_w > 0 && h >= *window_h && w >= *window_w => {
                    Ok(vec![c, h / window_h, w / window_w])
                }
                _ => Err(Error::Shape(format!("maxpool {window_h}x{window_w} cannot take input {input:?}"))),
            },
            Layer::Relu | Layer::Softmax => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(dense) => {
                dense.check()?;
                match *input {
                    [n] if n == dense.in_features => Ok(vec![dense.out_features]),
                    _ => {
                        Err(Error::Shape(format!("dense expects a flat input of {}, got {input:?}", dense.in_features)))
                    }
                }
            }
        }
    }

    /// Number of scalar multiplies the layer performs on one input.
    pub fn mac_count(&self, input: &[usize]) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok(match self {
            Layer::Conv2d(c) => (out.iter().product::<usize>() * c.in_channels * c.kernel_h * c.kernel_w) as u64,
            Layer::Dense(d) => (d.in_features * d.out_features) as u64,
            _ => 0,
        })
    }
}

fn kernel_scales(kernel: MulKernel, weights: &[f64], input: &[f64]) -> Scales {
    match kernel.quantize_bits() {
        Some(bits) => Scales { a: quantize_scale(weights, bits), b: quantize_scale(input, bits) },
        None => Scales::default(),
    }
}

/// Convolution with every product computed as `kernel(weight, input)`.
pub fn conv2d_forward(input: &Tensor, conv: &Conv2d, kernel: MulKernel, ops: &mut OpCount) -> Result<Tensor> {
    conv.check()?;
    let out_shape = conv.output_shape(input.shape())?;
    let (_, in_h, in_w) = input.dims3()?;
    let (out_h, out_w) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let scales = kernel_scales(kernel, &conv.weights, x);
    let taps = conv.in_channels * conv.kernel_h * conv.kernel_w;

    let mut out = Vec::with_capacity(conv.out_channels * out_h * out_w);
    let mut local = OpCount::ZERO;
    for oc in 0..conv.out_channels {
        let filter = &conv.weights[oc * taps..(oc + 1) * taps];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                let mut t = 0;
                for ic in 0..conv.in_channels {
                    for ky in 0..conv.kernel_h {
                        let row = (ic * in_h + oy + ky) * in_w + ox;
                        for kx in 0..conv.kernel_w {
                            acc += match mul(kernel, filter[t], x[row + kx], scales, &mut local) {
                                Ok(p) => p,
                                Err(e) => {
                                    *ops += local;
                                    return Err(e);
                                }
                            };
                            t += 1;
                        }
                    }
                }
                out.push(acc + conv.biases[oc]);
            }
        }
    }
    let outputs = out.len() as u64;
    local.add += outputs * taps as u64 + outputs;
    *ops += local;
    Ok(Tensor::from_parts(out_shape, out))
}

#[inline(always)]
fn mul(kernel: MulKernel, w: f64, x: f64, scales: Scales, ops: &mut OpCount) -> Result<f64> {
    if kernel.is_exact() {
        ops.mul += 1;
        Ok(w * x)
    } else {
        kernel.mul_scaled(w, x, scales, ops)
    }
}

/// `out[o] = bias[o] + sum_i kernel(weight[o][i], input[i])`.
pub fn dense_forward(input: &Tensor, dense: &Dense, kernel: MulKernel, ops: &mut OpCount) -> Result<Tensor> {
    let out_shape = Layer::Dense(dense.clone()).output_shape(input.shape())?;
    let x = input.data();
    let scales = kernel_scales(kernel, &dense.weights, x);
    let mut out = Vec::with_capacity(dense.out_features);
    let mut local = OpCount::ZERO;
    for o in 0..dense.out_features {
        let row = &dense.weights[o * dense.in_features..(o + 1) * dense.in_features];
        let mut acc = 0.0;
        for (&w, &v) in row.iter().zip(x) {
            acc += match mul(kernel, w, v, scales, &mut local) {
                Ok(p) => p,
                Err(e) => {
                    *ops += local;
                    return Err(e);
                }
            };
        }
        out.push(acc + dense.biases[o]);
    }
    local.add += (dense.out_features * dense.in_features + dense.out_features) as u64;
    *ops += local;
    Ok(Tensor::from_parts(out_shape, out))
}

/// Non-overlapping max pooling; trailing rows and columns that do not fill a
/// window are dropped.
pub fn maxpool2d(input: &Tensor, window_h: usize, window_w: usize) -> Result<Tensor> {
    let shape = Layer::MaxPool2d { window_h, window_w }.output_shape(input.shape())?;
    let (c, _, _) = input.dims3()?;
    let (out_h, out_w) = (shape[1], shape[2]);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..window_h {
                    for dx in 0..window_w {
                        best = best.max(input.at3(ch, oy * window_h + dy, ox * window_w + dx));
                    }
                }
                out.push(best);
            }
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(input.shape().to_vec(), input.data().iter().map(|&v| v.max(0.0)).collect())
}

pub fn flatten(input: &Tensor) -> Tensor {
    Tensor::from_parts(vec![input.len()], input.data().to_vec())
}

/// Softmax with the maximum subtracted first.
pub fn softmax(input: &Tensor) -> Tensor {
    Tensor::from_parts(input.shape().to_vec(), softmax_slice(input.data()))
}

pub(crate) fn softmax_slice(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv(in_c: usize, out_c: usize, k: usize, weights: Vec<f64>, biases: Vec<f64>) -> Conv2d {
        Conv2d { in_channels: in_c, out_channels: out_c, kernel_h: k, kernel_w: k, weights, biases }
    }

    #[test]
    fn degenerate_convolutions() {
        let mut ops = OpCount::ZERO;
        let x = Tensor::chw(1, 1, 1, vec![2.0]).unwrap();
        let y = conv2d_forward(&x, &conv(1, 1, 1, vec![3.0], vec![0.0]), MulKernel::EXACT, &mut ops).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[6.0]);

        let x = Tensor::chw(1, 3, 3, vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &conv(1, 1, 3, vec![1.0; 9], vec![0.0]), MulKernel::EXACT, &mut ops).unwrap();
        assert_eq!(y.data(), &[9.0]);
        // 1 + 9 multiplies, 1 + 9 accumulations, 2 bias adds
        assert_eq!(ops, OpCount { mul: 10, add: 12, ..OpCount::ZERO });
    }

    /// Independent six-loop convolution.
    fn brute_conv(x: &[f64], c: usize, h: usize, w: usize, f: &Conv2d) -> Vec<f64> {
        let (oh, ow) = (h - f.kernel_h + 1, w - f.kernel_w + 1);
        let mut out = vec![0.0; f.out_channels * oh * ow];
        for o in 0..f.out_channels {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = f.biases[o];
                    for ch in 0..c {
                        for a in 0..f.kernel_h {
                            for b in 0..f.kernel_w {
                                s += x[ch * h * w + (i + a) * w + (j + b)]
                                    * f.weights[o * c * f.kernel_h * f.kernel_w
                                        + ch * f.kernel_h * f.kernel_w
                                        + a * f.kernel_w
                                        + b];
                            }
                        }
                    }
                    out[o * oh * ow + i * ow + j] = s;
                }
            }
        }
        out
    }

    #[test]
    fn random_conv_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = conv(
            2,
            3,
            3,
            (0..54).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let input = Tensor::chw(2, 5, 5, x.clone()).unwrap();
        let got = conv2d_forward(&input, &f, MulKernel::EXACT, &mut OpCount::default()).unwrap();
        let want = brute_conv(&x, 2, 5, 5, &f);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_shape_mismatch() {
        let x = Tensor::chw(2, 3, 3, vec![0.0; 18]).unwrap();
        let f = conv(1, 1, 3, vec![0.0; 9], vec![0.0]);
        assert!(matches!(conv2d_forward(&x, &f, MulKernel::EXACT, &mut OpCount::default()), Err(Error::Shape(_))));
        let bad = conv(2, 1, 3, vec![0.0; 5], vec![0.0]);
        assert!(matches!(conv2d_forward(&x, &bad, MulKernel::EXACT, &mut OpCount::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_fixtures() {
        let x = Tensor::chw(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x, 2, 2).unwrap().data(), &[4.0]);

        let c = Tensor::chw(2, 4, 4, vec![0.7; 32]).unwrap();
        let p = maxpool2d(&c, 2, 2).unwrap();
        assert_eq!(p.shape(), &[2, 2, 2]);
        assert!(p.data().iter().all(|&v| v == 0.7));

        let ramp = Tensor::chw(1, 5, 5, (0..25).map(f64::from).collect()).unwrap();
        assert_eq!(maxpool2d(&ramp, 2, 2).unwrap().data(), &[6.0, 8.0, 16.0, 18.0]);

        assert!(matches!(maxpool2d(&x, 3, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_fixtures() {
        let id = Dense { in_features: 2, out_features: 2, weights: vec![1.0, 0.0, 0.0, 1.0], biases: vec![0.0; 2] };
        let x = Tensor::flat(vec![0.3, -2.0]).unwrap();
        assert_eq!(dense_forward(&x, &id, MulKernel::EXACT, &mut OpCount::default()).unwrap().data(), x.data());

        let d = Dense { in_features: 2, out_features: 1, weights: vec![1.0, 1.0], biases: vec![0.5] };
        let x = Tensor::flat(vec![3.0, 4.0]).unwrap();
        let mut ops = OpCount::ZERO;
        assert_eq!(dense_forward(&x, &d, MulKernel::EXACT, &mut ops).unwrap().data(), &[7.5]);
        assert_eq!(ops, OpCount { mul: 2, add: 3, ..OpCount::ZERO });

        let wrong = Tensor::flat(vec![1.0; 3]).unwrap();
        assert!(matches!(dense_forward(&wrong, &d, MulKernel::EXACT, &mut ops), Err(Error::Shape(_))));
    }

    #[test]
    fn random_dense_matches_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Dense {
            in_features: 4,
            out_features: 3,
            weights: (0..12).map(|_| rng.random_range(-2.0..2.0)).collect(),
            biases: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got =
            dense_forward(&Tensor::flat(x.clone()).unwrap(), &d, MulKernel::EXACT, &mut OpCount::default()).unwrap();
        for o in 0..3 {
            let want: f64 = d.biases[o] + (0..4).map(|i| d.weights[o * 4 + i] * x[i]).sum::<f64>();
            assert!((got.data()[o] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn activations() {
        let x = Tensor::flat(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::flat(vec![0.1, 5.0]).unwrap();
        assert_eq!(relu(&pos), pos);

        let cube = Tensor::chw(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        let f = flatten(&cube);
        assert_eq!(f.shape(), &[8]);
        assert_eq!(f.data(), cube.data());
    }

    #[test]
    fn softmax_fixtures() {
        let s = softmax(&Tensor::flat(vec![0.0, 0.0]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::flat(vec![1000.0, 1000.0]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::flat(vec![0.0, 3f64.ln()]).unwrap());
        assert!((s.data()[0] - 0.25).abs() < 1e-12 && (s.data()[1] - 0.75).abs() < 1e-12);
        let s = softmax(&Tensor::flat(vec![3.0, -1.0, 0.2, 7.0]).unwrap());
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_overflow_surfaces_with_partial_counts() {
        let x = Tensor::flat(vec![1.0, 500.0]).unwrap();
        let d = Dense { in_features: 2, out_features: 1, weights: vec![1.0, 1.0], biases: vec![0.0] };
        let mut ops = OpCount::ZERO;
        let err = dense_forward(&x, &d, MulKernel::SHIFT_ADD, &mut ops).unwrap_err();
        assert!(err.is_overflow());
        // the first product (one set bit) was performed before the failure
        assert_eq!(ops, OpCount { shift: 1, add: 1, ..OpCount::ZERO });
    }
}
