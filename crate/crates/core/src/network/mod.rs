//! Network description, the reference architectures, and the forward pass.

mod assignment;
pub mod layers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use assignment::{LayerAssignment, CONV_LAYERS};
pub use layers::{conv2d_forward, dense_forward, flatten, maxpool2d, relu, softmax, Conv2d, Dense, Layer};

use crate::error::{Error, Result};
use crate::ops::OpCount;
use crate::tensor::Tensor;

/// A feed-forward network: input shape plus an ordered list of layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<NetworkSpec> {
        let net = NetworkSpec { name: name.into(), input_shape, layers };
        net.layer_shapes()?;
        Ok(net)
    }

    /// Output shape of every layer, in order. Fails if any layer's
    /// parameters or input shape are inconsistent.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!("bad input shape {:?}", self.input_shape)));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape =
                layer.output_shape(&shape).map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    /// Positions in `layers` of the convolution layers; conv layer `k`
    /// (1-based) lives at `positions[k - 1]`.
    pub fn conv_positions(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| matches!(l, Layer::Conv2d(_))).map(|(i, _)| i).collect()
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.layer_shapes()?.last().map_or(self.input_shape.iter().product(), |s| s.iter().product()))
    }

    /// Total multiplies in one forward pass.
    pub fn mac_count(&self) -> Result<u64> {
        let mut shape = self.input_shape.clone();
        let mut total = 0;
        for layer in &self.layers {
            total += layer.mac_count(&shape)?;
            shape = layer.output_shape(&shape)?;
        }
        Ok(total)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weights.len() + c.biases.len(),
                Layer::Dense(d) => d.weights.len() + d.biases.len(),
                _ => 0,
            })
            .sum()
    }

    /// Runs every layer. `layer_ops` is resized to one counter per layer and
    /// receives each layer's operations, including those performed before a
    /// kernel error aborted the pass.
    pub fn forward_with(
        &self,
        assign: &LayerAssignment,
        input: &Tensor,
        layer_ops: &mut Vec<OpCount>,
    ) -> Result<Tensor> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!("network expects input {:?}, got {:?}", self.input_shape, input.shape())));
        }
        layer_ops.clear();
        layer_ops.resize(self.layers.len(), OpCount::ZERO);
        let mut x = input.clone();
        let mut conv_index = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let ops = &mut layer_ops[i];
            x = match layer {
                Layer::Conv2d(conv) => {
                    conv_index += 1;
                    conv2d_forward(&x, conv, assign.conv_kernel(conv_index), ops)?
                }
                Layer::Dense(dense) => dense_forward(&x, dense, assign.dense_kernel(), ops)?,
                Layer::MaxPool2d { window_h, window_w } => maxpool2d(&x, *window_h, *window_w)?,
                Layer::Relu => relu(&x),
                Layer::Flatten => flatten(&x),
                Layer::Softmax => softmax(&x),
            };
        }
        Ok(x)
    }

    /// Forward pass returning the per-layer operation counts.
    pub fn forward_traced(&self, assign: &LayerAssignment, input: &Tensor) -> Result<(Tensor, Vec<OpCount>)> {
        let mut per_layer = Vec::new();
        let out = self.forward_with(assign, input, &mut per_layer)?;
        Ok((out, per_layer))
    }
}

/// Runs `net` on `input` with each conv/dense layer's multiplies routed
/// through its assigned kernel. Returns the class scores and the total
/// operation count.
pub fn network_forward(net: &NetworkSpec, assign: &LayerAssignment, input: &Tensor) -> Result<(Tensor, OpCount)> {
    let (out, per_layer) = net.forward_traced(assign, input)?;
    Ok((out, per_layer.into_iter().sum()))
}

/// The two reference architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// 3x30x30 input, conv 32@5x5 x2, pool, conv 64@3x3 x2, pool, dense 256,
    /// dense `classes`.
    Appsign30 { classes: usize },
    /// 3x16x16 input, conv 8@3x3 x2, pool, conv 16@3x3 x2, pool, dense 32,
    /// dense `classes`.
    AppsignTiny { classes: usize },
}

impl Architecture {
    pub const DEFAULT_CLASSES: usize = 43;

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Appsign30 { .. } => "appsign-30",
            Architecture::AppsignTiny { .. } => "appsign-tiny",
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Appsign30 { classes } | Architecture::AppsignTiny { classes } => classes,
        }
    }

    pub fn with_classes(self, classes: usize) -> Architecture {
        match self {
            Architecture::Appsign30 { .. } => Architecture::Appsign30 { classes },
            Architecture::AppsignTiny { .. } => Architecture::AppsignTiny { classes },
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Architecture::Appsign30 { .. } => 30,
            Architecture::AppsignTiny { .. } => 16,
        }
    }

    /// The architecture with all weights and biases zero.
    pub fn build_zeroed(&self) -> NetworkSpec {
        let classes = self.classes();
        let (c1, k1, c2, k2, hidden) = match self {
            Architecture::Appsign30 { .. } => (32, 5, 64, 3, 256),
            Architecture::AppsignTiny { .. } => (8, 3, 16, 3, 32),
        };
        let side = self.input_size();
        // spatial size after two valid convs and a pool, twice
        let after_block1 = (side - 2 * (k1 - 1)) / 2;
        let after_block2 = (after_block1 - 2 * (k2 - 1)) / 2;
        let flat = c2 * after_block2 * after_block2;
        let layers = vec![
            Layer::Conv2d(Conv2d::zeros(3, c1, k1, k1)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::zeros(c1, c1, k1, k1)),
            Layer::Relu,
            Layer::MaxPool2d { window_h: 2, window_w: 2 },
            Layer::Conv2d(Conv2d::zeros(c1, c2, k2, k2)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::zeros(c2, c2, k2, k2)),
            Layer::Relu,
            Layer::MaxPool2d { window_h: 2, window_w: 2 },
            Layer::Flatten,
            Layer::Dense(Dense::zeros(flat, hidden)),
            Layer::Relu,
            Layer::Dense(Dense::zeros(hidden, classes)),
            Layer::Softmax,
        ];
        NetworkSpec { name: self.name().to_string(), input_shape: vec![3, side, side], layers }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Parses `appsign-30` or `appsign-tiny` with the default class count.
    fn from_str(s: &str) -> Result<Architecture> {
        match s.trim() {
            "appsign-30" => Ok(Architecture::Appsign30 { classes: Self::DEFAULT_CLASSES }),
            "appsign-tiny" => Ok(Architecture::AppsignTiny { classes: Self::DEFAULT_CLASSES }),
            other => Err(Error::InvalidParam(format!("unknown architecture `{other}`"))),
        }
    }
}
