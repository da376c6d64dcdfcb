//! Truncated-integer, rounded-decimal multiplication.
//!
//! The larger-magnitude operand is the multiplicand `x`, the other the
//! multiplier `y`. Each splits into an integer and a fractional part.
//!
//! * Integer term: the multiplicand's integer part is truncated to its most
//!   significant decimal digit `m` (at decimal position `L`), and
//!   `m * digit_j(iy) * 10^(L+j)` is summed over every decimal digit of the
//!   multiplier's integer part.
//! * Fractional term: each nonzero fraction is rounded up to a power of two,
//!   so the fractional product becomes `2^(ceil(log2 dx) + ceil(log2 dy))`.
//!   It is zero when either fraction is zero.
//!
//! Cross terms `ix*dy` and `dx*iy` are not computed. The product sign is
//! applied to the sum of both terms.

use crate::error::{Error, Result};
use crate::kernels::{check_finite, pow2, product_sign, signed, split_binary};
use crate::ops::OpCount;

/// Operands at or above this magnitude raise [`Error::Overflow`]: the
/// decimal expansion no longer fits the integer accumulator.
pub const TIRUD_MAX_MAGNITUDE: f64 = 1e15;

pub fn mul_tirud(a: f64, b: f64) -> Result<f64> {
    let mut ops = OpCount::ZERO;
    tirud(a, b, &mut ops)
}

/// The integer term alone, on magnitudes, after the operand swap.
pub fn tirud_integer_term(a: f64, b: f64) -> Result<u128> {
    let (x, y) = ordered_magnitudes(a, b)?;
    Ok(integer_term(x.floor() as u64, y.floor() as u64, &mut OpCount::default()))
}

pub(crate) fn tirud(a: f64, b: f64, ops: &mut OpCount) -> Result<f64> {
    let (x, y) = ordered_magnitudes(a, b)?;
    let mut cost = OpCount::ZERO;

    let ix = x.floor();
    let iy = y.floor();
    let dx = x - ix;
    let dy = y - iy;

    if dx > 0.0 {
        cost.log2 += 1;
    }
    if dy > 0.0 {
        cost.log2 += 1;
    }
    let fractional = if dx > 0.0 && dy > 0.0 {
        cost.add += 1;
        cost.shift += 1;
        pow2(ceil_log2(dx) + ceil_log2(dy))
    } else {
        0.0
    };

    let integer = integer_term(ix as u64, iy as u64, &mut cost);
    cost.add += 1;

    *ops += cost;
    Ok(signed(product_sign(a, b), integer as f64 + fractional))
}

fn ordered_magnitudes(a: f64, b: f64) -> Result<(f64, f64)> {
    check_finite(a, b)?;
    let (x, y) = if a.abs() >= b.abs() { (a.abs(), b.abs()) } else { (b.abs(), a.abs()) };
    if x >= TIRUD_MAX_MAGNITUDE {
        return Err(Error::Overflow(format!("tirud operand {x} at or above {TIRUD_MAX_MAGNITUDE}")));
    }
    Ok((x, y))
}

fn integer_term(ix: u64, iy: u64, cost: &mut OpCount) -> u128 {
    if ix == 0 {
        return 0;
    }
    let mut msd = ix;
    let mut position = 0u32;
    while msd >= 10 {
        msd /= 10;
        position += 1;
    }
    let msd = msd as u128;

    let mut rest = iy;
    let mut place = 10u128.pow(position);
    let mut sum = 0u128;
    let mut first = true;
    loop {
        let digit = (rest % 10) as u128;
        sum += msd * digit * place;
        cost.mul += 1;
        if !first {
            cost.add += 1;
        }
        first = false;
        rest /= 10;
        if rest == 0 {
            break;
        }
        place *= 10;
    }
    sum
}

/// `ceil(log2 d)` for positive `d`, exact.
fn ceil_log2(d: f64) -> i32 {
    let (k, f) = split_binary(d);
    if f == 0.0 {
        k
    } else {
        k + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_traced_fixtures() {
        assert_eq!(mul_tirud(23.3, 4.2).unwrap(), 80.125);
        assert_eq!(mul_tirud(9.0, 7.0).unwrap(), 63.0);
        assert_eq!(mul_tirud(0.0, 5.7).unwrap(), 0.0);
        assert_eq!(mul_tirud(46.0, 23.0).unwrap(), 920.0);
        assert_eq!(mul_tirud(-23.3, 4.2).unwrap(), -80.125);
    }

    #[test]
    fn swap_makes_order_irrelevant() {
        assert_eq!(mul_tirud(4.2, 23.3).unwrap(), 80.125);
        assert_eq!(mul_tirud(23.0, 46.0).unwrap(), 920.0);
    }

    #[test]
    fn sub_unit_operands_keep_only_the_power_of_two() {
        // 0.3 -> 2^-1, 0.2 -> 2^-2
        assert_eq!(mul_tirud(0.3, 0.2).unwrap(), 0.125);
        assert_eq!(mul_tirud(0.5, 0.5).unwrap(), 0.25);
        // a whole operand zeroes the fractional term
        assert_eq!(mul_tirud(1.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn ceil_log2_at_powers_of_two() {
        assert_eq!(ceil_log2(0.5), -1);
        assert_eq!(ceil_log2(0.25), -2);
        assert_eq!(ceil_log2(0.3), -1);
        assert_eq!(ceil_log2(0.26), -1);
        assert_eq!(ceil_log2(0.24), -2);
    }

    #[test]
    fn cost_depends_on_digits_and_fractions() {
        let mut ops = OpCount::ZERO;
        tirud(46.0, 23.0, &mut ops).unwrap();
        // two multiplier digits, one accumulation, one final add
        assert_eq!(ops, OpCount { mul: 2, add: 2, ..OpCount::ZERO });

        let mut ops = OpCount::ZERO;
        tirud(0.3, 0.2, &mut ops).unwrap();
        assert_eq!(ops, OpCount { add: 2, shift: 1, log2: 2, ..OpCount::ZERO });

        let mut ops = OpCount::ZERO;
        tirud(5.5, 2.0, &mut ops).unwrap();
        assert_eq!(ops, OpCount { mul: 1, add: 1, log2: 1, ..OpCount::ZERO });
    }

    #[test]
    fn errors() {
        assert!(matches!(mul_tirud(f64::NAN, 1.0), Err(Error::InvalidOperand(_))));
        assert!(matches!(mul_tirud(1e16, 1.0), Err(Error::Overflow(_))));
        let mut ops = OpCount::ZERO;
        assert!(tirud(f64::INFINITY, 1.0, &mut ops).is_err());
        assert!(ops.is_zero());
    }

    #[test]
    fn integer_term_fixtures() {
        assert_eq!(tirud_integer_term(23.3, 4.2).unwrap(), 80);
        assert_eq!(tirud_integer_term(46.0, 23.0).unwrap(), 920);
        assert_eq!(tirud_integer_term(0.9, 0.9).unwrap(), 0);
    }
}
