//! Accuracy under a layer assignment, the accuracy-over-cost metric, and
//! high/low precision classes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::MulKernel;
use crate::network::{LayerAssignment, NetworkSpec};
use crate::ops::{OpCount, OpWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Worker threads; results do not depend on it.
    pub workers: usize,
    pub weights: OpWeights,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { workers: 1, weights: OpWeights::default() }
    }
}

impl EvalConfig {
    pub fn with_workers(workers: usize) -> EvalConfig {
        EvalConfig { workers, ..EvalConfig::default() }
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        if self.workers == 0 {
            return Err(Error::InvalidParam("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidParam(format!("cannot start {} workers: {e}", self.workers)))
    }
}

/// Prediction for one image. A saturated image is one where a kernel
/// overflowed; it has no prediction and counts as incorrect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageOutcome {
    pub label: usize,
    pub predicted: Option<usize>,
}

impl ImageOutcome {
    pub fn correct(&self) -> bool {
        self.predicted == Some(self.label)
    }

    pub fn saturated(&self) -> bool {
        self.predicted.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub assignment: LayerAssignment,
    pub accuracy_percent: f64,
    /// Summed over all images, including work done before a saturation.
    pub total_ops: OpCount,
    /// Weighted total divided by 1000.
    pub kilo_ops: f64,
    pub aoc: f64,
    pub saturations: usize,
    pub images: usize,
    /// Per-image outcomes in dataset order.
    pub outcomes: Vec<ImageOutcome>,
}

/// Classifies every image of `data` with `net` under `assign`.
pub fn evaluate(net: &NetworkSpec, assign: &LayerAssignment, data: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_in(&cfg.pool()?, net, assign, data, &cfg.weights)
}

pub(crate) fn evaluate_in(
    pool: &rayon::ThreadPool,
    net: &NetworkSpec,
    assign: &LayerAssignment,
    data: &Dataset,
    weights: &OpWeights,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_image: Vec<(ImageOutcome, OpCount)> = pool.install(|| {
        data.items
            .par_iter()
            .map(|sample| {
                let mut layer_ops = Vec::new();
                let predicted = match net.forward_with(assign, &sample.image, &mut layer_ops) {
                    Ok(scores) => Some(scores.argmax()),
                    Err(e) if e.is_overflow() => None,
                    Err(e) => return Err(e),
                };
                let ops: OpCount = layer_ops.into_iter().sum();
                Ok((ImageOutcome { label: sample.label, predicted }, ops))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let total_ops: OpCount = per_image.iter().map(|(_, o)| *o).sum();
    let outcomes: Vec<ImageOutcome> = per_image.into_iter().map(|(o, _)| o).collect();
    let accuracy_percent = accuracy_of(&outcomes);
    let saturations = outcomes.iter().filter(|o| o.saturated()).count();
    let kilo_ops = total_ops.total(weights) / 1000.0;
    Ok(EvalReport {
        assignment: assign.clone(),
        accuracy_percent,
        total_ops,
        kilo_ops,
        // every image saturated before its first counted operation
        aoc: if kilo_ops == 0.0 && accuracy_percent == 0.0 {
            0.0
        } else {
            aoc_from_kilo_ops(accuracy_percent, kilo_ops)?
        },
        saturations,
        images: outcomes.len(),
        outcomes,
    })
}

/// `100 * correct / N`.
pub fn accuracy_of(outcomes: &[ImageOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    100.0 * outcomes.iter().filter(|o| o.correct()).count() as f64 / outcomes.len() as f64
}

/// Accuracy percentage per thousand weighted operations.
pub fn compute_aoc(accuracy_percent: f64, total_ops: &OpCount, weights: &OpWeights) -> Result<f64> {
    aoc_from_kilo_ops(accuracy_percent, total_ops.total(weights) / 1000.0)
}

pub fn aoc_from_kilo_ops(accuracy_percent: f64, kilo_ops: f64) -> Result<f64> {
    weighted_aoc(accuracy_percent, kilo_ops, 1.0, 1.0)
}

/// `accuracy^alpha / kilo_ops^beta`.
pub fn weighted_aoc(accuracy_percent: f64, kilo_ops: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&accuracy_percent) {
        return Err(Error::InvalidParam(format!("accuracy {accuracy_percent} outside [0, 100]")));
    }
    if !(alpha.is_finite() && beta.is_finite()) {
        return Err(Error::InvalidParam("AoC exponents must be finite".into()));
    }
    if !kilo_ops.is_finite() || kilo_ops < 0.0 {
        return Err(Error::InvalidParam(format!("cost {kilo_ops} must be finite and non-negative")));
    }
    if kilo_ops == 0.0 {
        return Err(Error::DivisionByZero);
    }
    Ok(accuracy_percent.powf(alpha) / kilo_ops.powf(beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Precision {
    High,
    Low,
}

pub const DEFAULT_PRECISION_THRESHOLD: f64 = 80.0;

/// Kernel precision labels keyed by kernel id string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionClass {
    pub threshold: f64,
    pub classes: BTreeMap<String, Precision>,
}

impl PrecisionClass {
    pub fn get(&self, kernel: MulKernel) -> Option<Precision> {
        self.classes.get(&kernel.to_string()).copied()
    }

    /// Kernels with the given label, in id order.
    pub fn members(&self, precision: Precision) -> Vec<MulKernel> {
        self.classes
            .iter()
            .filter(|(_, p)| **p == precision)
            .map(|(k, _)| k.parse().expect("keys are kernel ids"))
            .collect()
    }
}

/// High when the average accuracy is at least `threshold`.
pub fn classify_precision(results: &[(MulKernel, f64)], threshold: f64) -> Result<PrecisionClass> {
    if results.is_empty() {
        return Err(Error::InvalidParam("no kernel results to classify".into()));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidParam(format!("threshold {threshold} is not finite")));
    }
    let classes = results
        .iter()
        .map(|(k, acc)| (k.to_string(), if *acc >= threshold { Precision::High } else { Precision::Low }))
        .collect();
    Ok(PrecisionClass { threshold, classes })
}

/// Average accuracy of each kernel when it alone replaces exact
/// multiplication on one of `layers` (1-based conv indices), averaged over
/// those layers.
pub fn measure_precision(
    net: &NetworkSpec,
    data: &Dataset,
    kernels: &[MulKernel],
    layers: &[usize],
    cfg: &EvalConfig,
) -> Result<Vec<(MulKernel, f64)>> {
    if layers.is_empty() {
        return Err(Error::InvalidParam("no layers to measure".into()));
    }
    let pool = cfg.pool()?;
    kernels
        .iter()
        .map(|&k| {
            let mut sum = 0.0;
            for &layer in layers {
                let assign = LayerAssignment::single(layer, k)?;
                sum += evaluate_in(&pool, net, &assign, data, &cfg.weights)?.accuracy_percent;
            }
            Ok((k, sum / layers.len() as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Provenance, Sample};
    use crate::network::{Dense, Layer};
    use crate::tensor::Tensor;

    fn identity_net() -> NetworkSpec {
        NetworkSpec::new(
            "id",
            vec![3],
            vec![Layer::Dense(Dense {
                in_features: 3,
                out_features: 3,
                weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                biases: vec![0.0; 3],
            })],
        )
        .unwrap()
    }

    fn one_hot_data() -> Dataset {
        scaled_data(1.0)
    }

    fn scaled_data(scale: f64) -> Dataset {
        let items = (0..9)
            .map(|i| {
                let mut v = vec![0.1 * scale; 3];
                v[i % 3] = 0.9 * scale;
                Sample { image: Tensor::flat(v).unwrap(), label: i % 3 }
            })
            .collect();
        Dataset::new(items, 3, Provenance::Ingested).unwrap()
    }

    #[test]
    fn perfect_classifier_scores_100() {
        let r = evaluate(&identity_net(), &LayerAssignment::exact(), &one_hot_data(), &EvalConfig::default()).unwrap();
        assert_eq!(r.accuracy_percent, 100.0);
        assert_eq!(r.images, 9);
        assert_eq!(r.total_ops, OpCount { mul: 81, add: 81 + 27, ..OpCount::ZERO });
        assert!((r.aoc - 100.0 / r.kilo_ops).abs() < 1e-12);
    }

    #[test]
    fn zeroing_kernel_predicts_class_zero() {
        // activations below 2^-8 have no set Q8.8 bits, so every product is 0
        let data = scaled_data(1e-3);
        let exact = evaluate(&identity_net(), &LayerAssignment::exact(), &data, &EvalConfig::default()).unwrap();
        assert_eq!(exact.accuracy_percent, 100.0);
        let assign = LayerAssignment::exact().with_dense(MulKernel::SHIFT_ADD);
        let r = evaluate(&identity_net(), &assign, &data, &EvalConfig::default()).unwrap();
        assert!(r.outcomes.iter().all(|o| o.predicted == Some(0)));
        assert!((r.accuracy_percent - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overflow_counts_as_saturated() {
        let mut net = identity_net();
        if let Layer::Dense(d) = &mut net.layers[0] {
            d.weights[0] = 1e16;
        }
        let assign = LayerAssignment::exact().with_dense(MulKernel::TIRUD);
        let r = evaluate(&net, &assign, &one_hot_data(), &EvalConfig::default()).unwrap();
        assert_eq!(r.saturations, 9);
        assert_eq!(r.accuracy_percent, 0.0);
    }

    #[test]
    fn empty_dataset() {
        let empty = Dataset::new(Vec::new(), 3, Provenance::Ingested).unwrap();
        let r = evaluate(&identity_net(), &LayerAssignment::exact(), &empty, &EvalConfig::default());
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }

    #[test]
    fn aoc_arithmetic() {
        assert_eq!(aoc_from_kilo_ops(0.0, 12.0).unwrap(), 0.0);
        assert!(matches!(aoc_from_kilo_ops(50.0, 0.0), Err(Error::DivisionByZero)));
        let ops = OpCount { mul: 1500, add: 500, ..OpCount::ZERO };
        assert_eq!(compute_aoc(50.0, &ops, &OpWeights::default()).unwrap(), 25.0);
        let w = OpWeights::parse("add=0").unwrap();
        assert_eq!(compute_aoc(75.0, &ops, &w).unwrap(), 50.0);
        assert_eq!(weighted_aoc(10.0, 4.0, 2.0, 0.5).unwrap(), 50.0);
        assert!(aoc_from_kilo_ops(101.0, 1.0).is_err());
    }

    #[test]
    fn precision_threshold_is_inclusive() {
        let pc = classify_precision(
            &[(MulKernel::LNS, 93.84), (MulKernel::ROUNDED, 70.70), (MulKernel::TIRUD, 80.0)],
            DEFAULT_PRECISION_THRESHOLD,
        )
        .unwrap();
        assert_eq!(pc.get(MulKernel::LNS), Some(Precision::High));
        assert_eq!(pc.get(MulKernel::ROUNDED), Some(Precision::Low));
        assert_eq!(pc.get(MulKernel::TIRUD), Some(Precision::High));
        assert_eq!(pc.members(Precision::Low), vec![MulKernel::ROUNDED]);
        assert!(classify_precision(&[], 80.0).is_err());
    }
}
