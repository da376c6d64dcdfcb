//! Approximate multiplication kernels, a small CNN inference engine whose
//! multiply sites take a kernel per layer, and the tooling around it:
//! operation counting, a reference trainer, model/dataset I/O, and
//! accuracy-over-cost evaluation and sweeps.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod kernels;
pub mod model_io;
pub mod network;
pub mod ops;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use kernels::{KernelId, MulKernel, Scales, SegmentMode};
pub use network::{Architecture, Layer, LayerAssignment, NetworkSpec};
pub use ops::{OpCount, OpWeights};
pub use tensor::Tensor;
