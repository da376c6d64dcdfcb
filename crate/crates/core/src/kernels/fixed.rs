//! Integer-domain kernels: symmetric quantization, fixed-point (FAMM),
//! shift-and-add, shift-and-xor, and static/dynamic segment multipliers.
//!
//! The shift and segment kernels encode magnitudes as unsigned Q8.8 words:
//! `floor(|v| * 2^8)`, which must fit in 15 bits (`|v| < 128`). Signs are
//! carried separately and applied to the result.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_finite, pow2, product_sign, signed};
use crate::ops::OpCount;

pub const Q8_8_FRAC_BITS: u32 = 8;
const Q8_8_LIMIT: f64 = 128.0;
const Q8_8_WORD_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    /// Segment at a fixed position: the top `m` bits of the 16-bit word.
    Static,
    /// Segment of `m` bits starting at the operand's leading one.
    Dynamic,
}

/// Per-tensor symmetric scale: `max|v| / (2^(bits-1) - 1)`, or 1 for an
/// all-zero tensor.
pub fn quantize_scale(values: &[f64], bits: u32) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        1.0
    } else {
        max / q_max(bits)
    }
}

fn q_max(bits: u32) -> f64 {
    ((1i64 << (bits - 1)) - 1) as f64
}

fn quantize_value(v: f64, scale: f64, bits: u32) -> f64 {
    let limit = q_max(bits);
    (v / scale).round().clamp(-limit, limit)
}

pub fn mul_quantized(a: f64, b: f64, scale_a: f64, scale_b: f64, bits: u32) -> Result<f64> {
    quantized(a, b, scale_a, scale_b, bits, &mut OpCount::default())
}

/// The rescale by `scale_a * scale_b` is shared by a whole dot product, so
/// only the integer multiply is counted.
pub(crate) fn quantized(a: f64, b: f64, scale_a: f64, scale_b: f64, bits: u32, ops: &mut OpCount) -> Result<f64> {
    check_finite(a, b)?;
    if !(scale_a > 0.0 && scale_b > 0.0 && scale_a.is_finite() && scale_b.is_finite()) {
        return Err(Error::InvalidParam(format!("quantization scales must be positive, got ({scale_a}, {scale_b})")));
    }
    if !(2..=16).contains(&bits) {
        return Err(Error::InvalidParam(format!("quantize bit-width {bits} outside [2,16]")));
    }
    let qa = quantize_value(a, scale_a, bits);
    let qb = quantize_value(b, scale_b, bits);
    ops.mul += 1;
    Ok(qa * qb * scale_a * scale_b)
}

pub fn mul_fixed_point(a: f64, b: f64, frac_bits: u32) -> Result<f64> {
    fixed_point(a, b, frac_bits, &mut OpCount::default())
}

/// Operands become `floor(|v| * 2^frac)` in a 32-bit signed word; the
/// integer product is shifted right by `frac` before rescaling.
pub(crate) fn fixed_point(a: f64, b: f64, frac_bits: u32, ops: &mut OpCount) -> Result<f64> {
    check_finite(a, b)?;
    if !(4..=24).contains(&frac_bits) {
        return Err(Error::InvalidParam(format!("fixed-point fraction bits {frac_bits} outside [4,24]")));
    }
    let encode = |v: f64| -> Result<u64> {
        let scaled = (v.abs() * pow2(frac_bits as i32)).floor();
        if scaled >= 2f64.powi(31) {
            return Err(Error::Overflow(format!("{v} exceeds the Q{}.{frac_bits} range", 32 - frac_bits)));
        }
        Ok(scaled as u64)
    };
    let fa = encode(a)?;
    let fb = encode(b)?;
    let product = (fa * fb) >> frac_bits;
    ops.mul += 1;
    ops.shift += 1;
    Ok(signed(product_sign(a, b), product as f64 * pow2(-(frac_bits as i32))))
}

fn encode_q8_8(v: f64) -> Result<u64> {
    let m = v.abs();
    if m >= Q8_8_LIMIT {
        return Err(Error::Overflow(format!("{v} outside the Q8.8 range (|v| < 128)")));
    }
    Ok((m * pow2(Q8_8_FRAC_BITS as i32)).floor() as u64)
}

pub fn mul_shift_add(a: f64, b: f64) -> Result<f64> {
    shift_add(a, b, &mut OpCount::default())
}

/// One shifted copy of `|a|` per set bit of the Q8.8 multiplier `b`; each
/// costs a shift and an add.
pub(crate) fn shift_add(a: f64, b: f64, ops: &mut OpCount) -> Result<f64> {
    check_finite(a, b)?;
    let y = encode_q8_8(b)?;
    let magnitude = a.abs();
    let mut sum = 0.0;
    let mut bits = y;
    while bits != 0 {
        let i = bits.trailing_zeros() as i32;
        sum += magnitude * pow2(i - Q8_8_FRAC_BITS as i32);
        bits &= bits - 1;
    }
    let set = y.count_ones() as u64;
    ops.shift += set;
    ops.add += set;
    Ok(signed(product_sign(a, b), sum))
}

pub fn mul_shift_xor(a: f64, b: f64) -> Result<f64> {
    shift_xor(a, b, &mut OpCount::default())
}

/// Like shift-and-add on Q8.8 operands, but partial products are combined
/// with XOR, so carries are lost.
pub(crate) fn shift_xor(a: f64, b: f64, ops: &mut OpCount) -> Result<f64> {
    check_finite(a, b)?;
    let x = encode_q8_8(a)?;
    let y = encode_q8_8(b)?;
    let mut acc = 0u64;
    let mut bits = y;
    while bits != 0 {
        acc ^= x << bits.trailing_zeros();
        bits &= bits - 1;
    }
    let set = y.count_ones() as u64;
    ops.shift += set;
    ops.xor += set;
    Ok(signed(product_sign(a, b), acc as f64 * pow2(-2 * Q8_8_FRAC_BITS as i32)))
}

pub fn mul_segment(a: f64, b: f64, width: u32, mode: SegmentMode) -> Result<f64> {
    segment(a, b, width, mode, &mut OpCount::default())
}

/// Returns `(segment, dropped_low_bits)` for a Q8.8 word.
fn take_segment(word: u64, width: u32, mode: SegmentMode) -> (u64, u32) {
    let drop = match mode {
        SegmentMode::Static => Q8_8_WORD_BITS - width,
        SegmentMode::Dynamic => {
            let span = 64 - word.leading_zeros();
            span.saturating_sub(width)
        }
    };
    (word >> drop, drop)
}

/// Static: `{mul:1, shift:3}` (two extractions, one shift back). Dynamic
/// adds two leading-one detections, counted as log2, and the add of the two
/// drop amounts. A zero operand is detected up front and costs nothing.
pub(crate) fn segment(a: f64, b: f64, width: u32, mode: SegmentMode, ops: &mut OpCount) -> Result<f64> {
    check_finite(a, b)?;
    if !(2..Q8_8_WORD_BITS).contains(&width) {
        return Err(Error::InvalidParam(format!("segment width {width} outside [2,15]")));
    }
    let x = encode_q8_8(a)?;
    let y = encode_q8_8(b)?;
    if x == 0 || y == 0 {
        return Ok(0.0);
    }
    let (sx, dx) = take_segment(x, width, mode);
    let (sy, dy) = take_segment(y, width, mode);
    let product = (sx * sy) << (dx + dy);
    *ops += match mode {
        SegmentMode::Static => OpCount { mul: 1, shift: 3, ..OpCount::ZERO },
        SegmentMode::Dynamic => OpCount { mul: 1, shift: 3, log2: 2, add: 1, ..OpCount::ZERO },
    };
    Ok(signed(product_sign(a, b), product as f64 * pow2(-2 * Q8_8_FRAC_BITS as i32)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_fixtures() {
        assert_eq!(mul_quantized(3.0, 4.0, 1.0, 1.0, 8).unwrap(), 12.0);
        assert_eq!(mul_quantized(0.5, 0.5, 0.25, 0.25, 8).unwrap(), 0.25);
        assert_eq!(mul_quantized(200.0, 1.0, 1.0, 1.0, 8).unwrap(), 127.0);
        assert_eq!(mul_quantized(-200.0, 1.0, 1.0, 1.0, 8).unwrap(), -127.0);
        assert!(matches!(mul_quantized(1.0, 1.0, 0.0, 1.0, 8), Err(Error::InvalidParam(_))));
        assert!(matches!(mul_quantized(1.0, 1.0, 1.0, -1.0, 8), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn quantize_scale_per_tensor() {
        assert_eq!(quantize_scale(&[0.5, -1.27, 0.1], 8), 0.01);
        assert_eq!(quantize_scale(&[0.0, 0.0], 8), 1.0);
    }

    #[test]
    fn fixed_point_fixtures() {
        assert_eq!(mul_fixed_point(1.5, 2.0, 16).unwrap(), 3.0);
        assert_eq!(mul_fixed_point(0.0, 8.8, 16).unwrap(), 0.0);
        assert_eq!(mul_fixed_point(2f64.powi(-20), 2f64.powi(-20), 16).unwrap(), 0.0);
        assert_eq!(mul_fixed_point(-1.5, 2.0, 16).unwrap(), -3.0);
        assert!(matches!(mul_fixed_point(40000.0, 1.0, 16), Err(Error::Overflow(_))));
        assert!(mul_fixed_point(32767.0, 1.0, 16).is_ok());
        assert!(matches!(mul_fixed_point(1.0, 1.0, 3), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn shift_add_fixtures() {
        assert_eq!(mul_shift_add(3.0, 2.0).unwrap(), 6.0);
        assert_eq!(mul_shift_add(1.0, 0.5).unwrap(), 0.5);
        assert_eq!(mul_shift_add(4.4, 0.0).unwrap(), 0.0);
        assert_eq!(mul_shift_add(-3.0, 3.0).unwrap(), -9.0);
        assert!(matches!(mul_shift_add(1.0, 128.0), Err(Error::Overflow(_))));
        // the multiplicand is not range-limited
        assert_eq!(mul_shift_add(1000.0, 2.0).unwrap(), 2000.0);
    }

    #[test]
    fn shift_xor_fixtures() {
        assert_eq!(mul_shift_xor(3.0, 2.0).unwrap(), 6.0);
        assert_eq!(mul_shift_xor(3.0, 3.0).unwrap(), 5.0);
        assert_eq!(mul_shift_xor(0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(mul_shift_xor(200.0, 1.0), Err(Error::Overflow(_))));
        let mut ops = OpCount::ZERO;
        shift_xor(3.0, 3.0, &mut ops).unwrap();
        assert_eq!(ops, OpCount { shift: 2, xor: 2, ..OpCount::ZERO });
    }

    #[test]
    fn segment_fixtures() {
        assert_eq!(mul_segment(3.0, 2.0, 8, SegmentMode::Dynamic).unwrap(), 6.0);
        assert_eq!(mul_segment(3.0, 2.0, 4, SegmentMode::Static).unwrap(), 0.0);
        assert_eq!(mul_segment(0.0, 5.0, 8, SegmentMode::Dynamic).unwrap(), 0.0);
        // 100.0 = 0x6400: top 8 bits 0x64, 2.0 = 0x0200: top 8 bits 0x02
        assert_eq!(mul_segment(100.0, 2.0, 8, SegmentMode::Static).unwrap(), 200.0);
        assert!(matches!(mul_segment(128.0, 1.0, 8, SegmentMode::Static), Err(Error::Overflow(_))));
    }

    #[test]
    fn dynamic_segment_truncates_low_bits() {
        // 1.9921875 = 0x01FE spans 9 bits; with m = 4 only 0x1E0 survives -> 1.875
        assert_eq!(mul_segment(1.9921875, 1.0, 4, SegmentMode::Dynamic).unwrap(), 1.875);
    }
}
