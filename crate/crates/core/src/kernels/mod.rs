//! Scalar approximate-multiplication kernels.
//!
//! Every kernel works on `f64` operands and reports the primitive operations
//! it performed through an [`OpCount`]. Kernels are pure: the same operands
//! always produce the same product and the same cost.

mod fixed;
mod log_domain;
mod tirud;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::OpCount;

pub use fixed::{
    mul_fixed_point, mul_quantized, mul_segment, mul_shift_add, mul_shift_xor, quantize_scale, SegmentMode,
    Q8_8_FRAC_BITS,
};
pub use log_domain::{mul_lns_mitchell, mul_rounded_pow2};
pub use tirud::{mul_tirud, tirud_integer_term, TIRUD_MAX_MAGNITUDE};

/// Identity of a multiplication strategy, independent of its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelId {
    Exact,
    Tirud,
    RoundedPow2,
    LnsMitchell,
    Quantize,
    FixedPointFamm,
    ShiftAdd,
    ShiftXor,
    Ssm,
    Dsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Exact,
    Tirud,
    RoundedPow2,
    LnsMitchell,
    Quantize { bits: u32 },
    FixedPoint { frac_bits: u32 },
    ShiftAdd,
    ShiftXor,
    Segment { width: u32, mode: SegmentMode },
}

/// Per-operand scales. Only the quantizing kernel reads them; every other
/// kernel ignores them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub a: f64,
    pub b: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Scales { a: 1.0, b: 1.0 }
    }
}

/// A validated multiplication kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MulKernel(Kind);

pub const DEFAULT_QUANTIZE_BITS: u32 = 8;
pub const DEFAULT_FAMM_FRAC_BITS: u32 = 16;

impl MulKernel {
    pub const EXACT: MulKernel = MulKernel(Kind::Exact);
    pub const TIRUD: MulKernel = MulKernel(Kind::Tirud);
    pub const ROUNDED: MulKernel = MulKernel(Kind::RoundedPow2);
    pub const LNS: MulKernel = MulKernel(Kind::LnsMitchell);
    pub const QUANTIZE: MulKernel = MulKernel(Kind::Quantize { bits: DEFAULT_QUANTIZE_BITS });
    pub const FAMM: MulKernel = MulKernel(Kind::FixedPoint { frac_bits: DEFAULT_FAMM_FRAC_BITS });
    pub const SHIFT_ADD: MulKernel = MulKernel(Kind::ShiftAdd);
    pub const SHIFT_XOR: MulKernel = MulKernel(Kind::ShiftXor);
    pub const SSM4: MulKernel = MulKernel(Kind::Segment { width: 4, mode: SegmentMode::Static });
    pub const SSM8: MulKernel = MulKernel(Kind::Segment { width: 8, mode: SegmentMode::Static });
    pub const DSM4: MulKernel = MulKernel(Kind::Segment { width: 4, mode: SegmentMode::Dynamic });
    pub const DSM8: MulKernel = MulKernel(Kind::Segment { width: 8, mode: SegmentMode::Dynamic });

    /// The twelve kernels with canonical identifiers, in a fixed order.
    pub const CANONICAL: [MulKernel; 12] = [
        Self::EXACT,
        Self::TIRUD,
        Self::ROUNDED,
        Self::LNS,
        Self::QUANTIZE,
        Self::FAMM,
        Self::SHIFT_ADD,
        Self::SHIFT_XOR,
        Self::SSM4,
        Self::SSM8,
        Self::DSM4,
        Self::DSM8,
    ];

    pub fn quantize(bits: u32) -> Result<MulKernel> {
        if !(2..=16).contains(&bits) {
            return Err(Error::InvalidParam(format!("quantize bit-width {bits} outside [2,16]")));
        }
        Ok(MulKernel(Kind::Quantize { bits }))
    }

    pub fn fixed_point(frac_bits: u32) -> Result<MulKernel> {
        if !(4..=24).contains(&frac_bits) {
            return Err(Error::InvalidParam(format!("fixed-point fraction bits {frac_bits} outside [4,24]")));
        }
        Ok(MulKernel(Kind::FixedPoint { frac_bits }))
    }

    /// Segment multiplier over Q8.8 operands; the segment must be narrower
    /// than the 16-bit word.
    pub fn segment(width: u32, mode: SegmentMode) -> Result<MulKernel> {
        if !(2..16).contains(&width) {
            return Err(Error::InvalidParam(format!("segment width {width} outside [2,15]")));
        }
        Ok(MulKernel(Kind::Segment { width, mode }))
    }

    pub fn id(&self) -> KernelId {
        match self.0 {
            Kind::Exact => KernelId::Exact,
            Kind::Tirud => KernelId::Tirud,
            Kind::RoundedPow2 => KernelId::RoundedPow2,
            Kind::LnsMitchell => KernelId::LnsMitchell,
            Kind::Quantize { .. } => KernelId::Quantize,
            Kind::FixedPoint { .. } => KernelId::FixedPointFamm,
            Kind::ShiftAdd => KernelId::ShiftAdd,
            Kind::ShiftXor => KernelId::ShiftXor,
            Kind::Segment { mode: SegmentMode::Static, .. } => KernelId::Ssm,
            Kind::Segment { mode: SegmentMode::Dynamic, .. } => KernelId::Dsm,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.0, Kind::Exact)
    }

    /// Bit-width of the quantizing kernel, `None` for every other kernel.
    pub fn quantize_bits(&self) -> Option<u32> {
        match self.0 {
            Kind::Quantize { bits } => Some(bits),
            _ => None,
        }
    }

    /// Multiplies with unit scales.
    pub fn mul(&self, a: f64, b: f64, ops: &mut OpCount) -> Result<f64> {
        self.mul_scaled(a, b, Scales::default(), ops)
    }

    /// Multiplies `a` by `b`, adding the primitive operations performed to
    /// `ops`. On error `ops` is left untouched.
    #[inline]
    pub fn mul_scaled(&self, a: f64, b: f64, scales: Scales, ops: &mut OpCount) -> Result<f64> {
        match self.0 {
            Kind::Exact => {
                check_finite(a, b)?;
                ops.mul += 1;
                Ok(a * b)
            }
            Kind::Tirud => tirud::tirud(a, b, ops),
            Kind::RoundedPow2 => log_domain::rounded_pow2(a, b, ops),
            Kind::LnsMitchell => log_domain::lns_mitchell(a, b, ops),
            Kind::Quantize { bits } => fixed::quantized(a, b, scales.a, scales.b, bits, ops),
            Kind::FixedPoint { frac_bits } => fixed::fixed_point(a, b, frac_bits, ops),
            Kind::ShiftAdd => fixed::shift_add(a, b, ops),
            Kind::ShiftXor => fixed::shift_xor(a, b, ops),
            Kind::Segment { width, mode } => fixed::segment(a, b, width, mode, ops),
        }
    }
}

impl fmt::Display for MulKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Kind::Exact => f.write_str("exact"),
            Kind::Tirud => f.write_str("tirud"),
            Kind::RoundedPow2 => f.write_str("rounded"),
            Kind::LnsMitchell => f.write_str("lns"),
            Kind::Quantize { bits: DEFAULT_QUANTIZE_BITS } => f.write_str("quantize"),
            Kind::Quantize { bits } => write!(f, "quantize{bits}"),
            Kind::FixedPoint { frac_bits: DEFAULT_FAMM_FRAC_BITS } => f.write_str("famm"),
            Kind::FixedPoint { frac_bits } => write!(f, "famm{frac_bits}"),
            Kind::ShiftAdd => f.write_str("shift_add"),
            Kind::ShiftXor => f.write_str("shift_xor"),
            Kind::Segment { width, mode: SegmentMode::Static } => write!(f, "ssm{width}"),
            Kind::Segment { width, mode: SegmentMode::Dynamic } => write!(f, "dsm{width}"),
        }
    }
}

impl FromStr for MulKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<MulKernel> {
        let s = s.trim();
        let simple = match s {
            "exact" => Some(Self::EXACT),
            "tirud" => Some(Self::TIRUD),
            "rounded" => Some(Self::ROUNDED),
            "lns" => Some(Self::LNS),
            "quantize" => Some(Self::QUANTIZE),
            "famm" => Some(Self::FAMM),
            "shift_add" => Some(Self::SHIFT_ADD),
            "shift_xor" => Some(Self::SHIFT_XOR),
            _ => None,
        };
        if let Some(k) = simple {
            return Ok(k);
        }
        let unknown = || Error::InvalidParam(format!("unknown kernel id `{s}`"));
        let numeric = |prefix: &str| -> Option<Result<u32>> {
            let digits = s.strip_prefix(prefix)?;
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            Some(digits.parse::<u32>().map_err(|_| unknown()))
        };
        if let Some(bits) = numeric("quantize") {
            return MulKernel::quantize(bits?);
        }
        if let Some(bits) = numeric("famm") {
            return MulKernel::fixed_point(bits?);
        }
        if let Some(w) = numeric("ssm") {
            return MulKernel::segment(w?, SegmentMode::Static);
        }
        if let Some(w) = numeric("dsm") {
            return MulKernel::segment(w?, SegmentMode::Dynamic);
        }
        Err(unknown())
    }
}

impl Serialize for MulKernel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MulKernel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Native product.
pub fn mul_exact(a: f64, b: f64) -> Result<f64> {
    let mut ops = OpCount::ZERO;
    MulKernel::EXACT.mul(a, b, &mut ops)
}

/// The primitive operations `kernel` performs on `(a, b)` with unit scales.
pub fn kernel_cost(kernel: MulKernel, a: f64, b: f64) -> Result<OpCount> {
    let mut ops = OpCount::ZERO;
    kernel.mul(a, b, &mut ops)?;
    Ok(ops)
}

pub(crate) fn check_finite(a: f64, b: f64) -> Result<()> {
    if a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidOperand(format!("non-finite operand ({a}, {b})")))
    }
}

/// Sign of the product as +1 or -1.
#[inline]
pub(crate) fn product_sign(a: f64, b: f64) -> f64 {
    if (a < 0.0) != (b < 0.0) {
        -1.0
    } else {
        1.0
    }
}

/// Applies a sign to a non-negative magnitude; zero stays +0.
#[inline]
pub(crate) fn signed(sign: f64, magnitude: f64) -> f64 {
    if magnitude == 0.0 {
        0.0
    } else {
        sign * magnitude
    }
}

/// Splits a positive finite `x` into `(k, f)` with `x = 2^k * (1 + f)` and
/// `f` in `[0, 1)`. Exact: read from the binary representation.
pub(crate) fn split_binary(x: f64) -> (i32, f64) {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    if exp_field == 0 {
        // subnormal: renormalize
        let (k, f) = split_binary(x * 2f64.powi(64));
        return (k - 64, f);
    }
    let mantissa = bits & ((1u64 << 52) - 1);
    (exp_field - 1023, mantissa as f64 / (1u64 << 52) as f64)
}

/// `2^e`, built directly from the bit pattern. Saturates to 0 and infinity
/// outside the representable range.
#[inline]
pub(crate) fn pow2(e: i32) -> f64 {
    match e {
        -1022..=1023 => f64::from_bits(((e + 1023) as u64) << 52),
        -1074..=-1023 => f64::from_bits(1u64 << (e + 1074)),
        i32::MIN..=-1075 => 0.0,
        _ => f64::INFINITY,
    }
}
