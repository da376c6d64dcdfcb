//! Scalar accuracy and cost benchmark of the multiplication kernels over
//! seeded random operand pairs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{quantize_scale, MulKernel, Scales};
use crate::ops::OpCount;

pub const MIN_SAMPLES: usize = 1000;

pub const BENCH_CSV_HEADER: &str = "kernel,samples,evaluated,overflows,mean_rel_error,max_rel_error,underestimate_fraction,avg_mul,avg_add,avg_shift,avg_xor,avg_log2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kernel: MulKernel,
    pub samples: usize,
    /// Pairs with a nonzero exact product that the kernel did not overflow on.
    pub evaluated: usize,
    pub overflows: usize,
    pub mean_rel_error: f64,
    pub max_rel_error: f64,
    /// Fraction of evaluated pairs with `|approx| < |exact|`.
    pub underestimate_fraction: f64,
    pub total_ops: OpCount,
}

impl BenchRow {
    /// Mean operations per evaluated pair, in `mul, add, shift, xor, log2`
    /// order.
    pub fn avg_ops(&self) -> [f64; 5] {
        let n = self.evaluated.max(1) as f64;
        let o = &self.total_ops;
        [o.mul, o.add, o.shift, o.xor, o.log2].map(|v| v as f64 / n)
    }
}

/// Draws `samples` pairs uniformly from `[lo, hi)^2` and runs every kernel
/// on the same pairs. The quantizing kernel uses per-operand scales taken
/// over all sampled `a` and all sampled `b`.
pub fn cmd_bench_kernels(samples: usize, range: (f64, f64), seed: u64, kernels: &[MulKernel]) -> Result<Vec<BenchRow>> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidParam(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParam(format!("bad operand range [{lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(f64, f64)> = (0..samples).map(|_| (rng.random_range(lo..hi), rng.random_range(lo..hi))).collect();
    kernels.iter().map(|&k| bench_kernel(k, &pairs)).collect()
}

fn bench_kernel(kernel: MulKernel, pairs: &[(f64, f64)]) -> Result<BenchRow> {
    let scales = match kernel.quantize_bits() {
        Some(bits) => {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            Scales { a: quantize_scale(&a, bits), b: quantize_scale(&b, bits) }
        }
        None => Scales::default(),
    };
    let mut row = BenchRow {
        kernel,
        samples: pairs.len(),
        evaluated: 0,
        overflows: 0,
        mean_rel_error: 0.0,
        max_rel_error: 0.0,
        underestimate_fraction: 0.0,
        total_ops: OpCount::ZERO,
    };
    let (mut err_sum, mut under) = (0.0, 0usize);
    for &(a, b) in pairs {
        let exact = a * b;
        let mut ops = OpCount::ZERO;
        let approx = match kernel.mul_scaled(a, b, scales, &mut ops) {
            Ok(v) => v,
            Err(e) if e.is_overflow() => {
                row.overflows += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if exact == 0.0 {
            continue;
        }
        let rel = (approx - exact).abs() / exact.abs();
        err_sum += rel;
        row.max_rel_error = row.max_rel_error.max(rel);
        if approx.abs() < exact.abs() {
            under += 1;
        }
        row.total_ops += ops;
        row.evaluated += 1;
    }
    if row.evaluated > 0 {
        row.mean_rel_error = err_sum / row.evaluated as f64;
        row.underestimate_fraction = under as f64 / row.evaluated as f64;
    }
    Ok(row)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let [m, a, sh, x, l] = r.avg_ops();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.kernel,
            r.samples,
            r.evaluated,
            r.overflows,
            r.mean_rel_error,
            r.max_rel_error,
            r.underestimate_fraction,
            m,
            a,
            sh,
            x,
            l
        )
        .expect("writing to a String");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_row_has_no_error() {
        let rows = cmd_bench_kernels(2000, (-10.0, 10.0), 3, &[MulKernel::EXACT]).unwrap();
        assert_eq!(rows[0].mean_rel_error, 0.0);
        assert_eq!(rows[0].max_rel_error, 0.0);
        assert_eq!(rows[0].avg_ops()[0], 1.0);
    }

    #[test]
    fn mitchell_bound() {
        let rows = cmd_bench_kernels(20_000, (1.0, 256.0), 5, &[MulKernel::LNS]).unwrap();
        assert!(rows[0].max_rel_error <= 0.1113);
        assert_eq!(rows[0].underestimate_fraction, 1.0);
    }

    #[test]
    fn deterministic_csv() {
        let a = bench_csv(&cmd_bench_kernels(1000, (-100.0, 100.0), 9, &MulKernel::CANONICAL).unwrap());
        let b = bench_csv(&cmd_bench_kernels(1000, (-100.0, 100.0), 9, &MulKernel::CANONICAL).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 13);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(cmd_bench_kernels(999, (0.0, 1.0), 0, &[MulKernel::EXACT]).is_err());
        assert!(cmd_bench_kernels(1000, (1.0, 1.0), 0, &[MulKernel::EXACT]).is_err());
    }
}
