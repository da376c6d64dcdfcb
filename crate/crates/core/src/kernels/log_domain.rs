//! Kernels that work on binary exponents: nearest-power-of-two rounding and
//! Mitchell's logarithmic multiplication.
//!
//! Both detect a zero operand up front and return 0 without counting any
//! operation.

use crate::error::Result;
use crate::kernels::{check_finite, pow2, product_sign, split_binary};
use crate::ops::OpCount;

/// Replaces each magnitude by its nearest power of two in the log domain
/// (significands from sqrt 2 up round to the larger power) and adds the
/// exponents. Each operand moves by a factor within `[1/sqrt 2, sqrt 2]`,
/// so the product stays within a factor 2 of exact.
pub fn mul_rounded_pow2(a: f64, b: f64) -> Result<f64> {
    rounded_pow2(a, b, &mut OpCount::default())
}

/// Mitchell approximation: `log2(2^k (1+f)) ~ k + f`, sum the two logs,
/// decode `2^n (1+g)`. Never overestimates the magnitude.
pub fn mul_lns_mitchell(a: f64, b: f64) -> Result<f64> {
    lns_mitchell(a, b, &mut OpCount::default())
}

fn nearest_pow2_exponent(x: f64) -> i32 {
    let (k, f) = split_binary(x);
    // SQRT_2 is the f64 just above sqrt 2, so this rounds up exactly when
    // 1+f exceeds the geometric midpoint
    if 1.0 + f < std::f64::consts::SQRT_2 {
        k
    } else {
        k + 1
    }
}

pub(crate) fn rounded_pow2(a: f64, b: f64, ops: &mut OpCount) -> Result<f64> {
    check_finite(a, b)?;
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    let e = nearest_pow2_exponent(a.abs()) + nearest_pow2_exponent(b.abs());
    *ops += OpCount { log2: 2, add: 1, shift: 1, ..OpCount::ZERO };
    Ok(product_sign(a, b) * pow2(e))
}

pub(crate) fn lns_mitchell(a: f64, b: f64, ops: &mut OpCount) -> Result<f64> {
    check_finite(a, b)?;
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    let (ka, fa) = split_binary(a.abs());
    let (kb, fb) = split_binary(b.abs());
    // integer and fractional parts of the log sum kept apart for precision
    let mut n = ka + kb;
    let mut g = fa + fb;
    if g >= 1.0 {
        n += 1;
        g -= 1.0;
    }
    *ops += OpCount { log2: 2, add: 1, shift: 1, ..OpCount::ZERO };
    Ok(product_sign(a, b) * (1.0 + g) * pow2(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounded_fixtures() {
        // 23.3 = 16 * 1.456 rounds up, 4.2 = 4 * 1.05 rounds down
        assert_eq!(mul_rounded_pow2(23.3, 4.2).unwrap(), 128.0);
        assert_eq!(mul_rounded_pow2(22.0, 4.2).unwrap(), 64.0);
        assert_eq!(mul_rounded_pow2(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(mul_rounded_pow2(0.0, 9.9).unwrap(), 0.0);
        assert_eq!(mul_rounded_pow2(-3.0, 1.0).unwrap(), -4.0);
    }

    #[test]
    fn rounded_midpoint_is_geometric() {
        let s = std::f64::consts::SQRT_2;
        assert_eq!(nearest_pow2_exponent(s), 1);
        assert_eq!(nearest_pow2_exponent(f64::from_bits(s.to_bits() - 1)), 0);
        assert_eq!(nearest_pow2_exponent(1.45), 1);
        assert_eq!(nearest_pow2_exponent(0.71), 0);
        assert_eq!(nearest_pow2_exponent(0.7), -1);
        assert_eq!(nearest_pow2_exponent(0.5), -1);
    }

    #[test]
    fn mitchell_fixtures() {
        let p = mul_lns_mitchell(23.3, 4.2).unwrap();
        assert!((p - 96.4).abs() < 1e-12, "{p}");
        assert_eq!(mul_lns_mitchell(2.0, 2.0).unwrap(), 4.0);
        assert_eq!(mul_lns_mitchell(0.0, 3.3).unwrap(), 0.0);
        assert_eq!(mul_lns_mitchell(-2.0, 0.5).unwrap(), -1.0);
    }

    #[test]
    fn mitchell_worst_case_near_one_and_a_half() {
        // error peaks at f = 0.5 for both operands: 2.25 exact vs 2.0
        let p = mul_lns_mitchell(1.5, 1.5).unwrap();
        assert_eq!(p, 2.0);
    }

    #[test]
    fn zero_operands_cost_nothing() {
        let mut ops = OpCount::ZERO;
        rounded_pow2(0.0, 2.0, &mut ops).unwrap();
        lns_mitchell(3.0, 0.0, &mut ops).unwrap();
        assert!(ops.is_zero());
        lns_mitchell(3.0, 1.0, &mut ops).unwrap();
        assert_eq!(ops, OpCount { log2: 2, add: 1, shift: 1, ..OpCount::ZERO });
    }
}
