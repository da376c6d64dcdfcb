//! Primitive-operation counters.

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Counts of the primitive operations a computation performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCount {
    pub mul: u64,
    pub add: u64,
    pub shift: u64,
    pub xor: u64,
    pub log2: u64,
}

impl OpCount {
    pub const ZERO: OpCount = OpCount { mul: 0, add: 0, shift: 0, xor: 0, log2: 0 };

    pub fn merge(self, other: OpCount) -> OpCount {
        OpCount {
            mul: self.mul + other.mul,
            add: self.add + other.add,
            shift: self.shift + other.shift,
            xor: self.xor + other.xor,
            log2: self.log2 + other.log2,
        }
    }

    /// Weighted sum of all counters.
    pub fn total(&self, weights: &OpWeights) -> f64 {
        self.mul as f64 * weights.mul
            + self.add as f64 * weights.add
            + self.shift as f64 * weights.shift
            + self.xor as f64 * weights.xor
            + self.log2 as f64 * weights.log2
    }

    /// Unweighted sum of all counters.
    pub fn count(&self) -> u64 {
        self.mul + self.add + self.shift + self.xor + self.log2
    }

    pub fn is_zero(&self) -> bool {
        *self == OpCount::ZERO
    }
}

impl Add for OpCount {
    type Output = OpCount;

    fn add(self, rhs: OpCount) -> OpCount {
        self.merge(rhs)
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, rhs: OpCount) {
        *self = self.merge(rhs);
    }
}

impl Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::ZERO, OpCount::merge)
    }
}

/// Per-primitive cost weights. All ones by default: every operation costs
/// the same.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpWeights {
    pub mul: f64,
    pub add: f64,
    pub shift: f64,
    pub xor: f64,
    pub log2: f64,
}

impl Default for OpWeights {
    fn default() -> Self {
        OpWeights { mul: 1.0, add: 1.0, shift: 1.0, xor: 1.0, log2: 1.0 }
    }
}

impl OpWeights {
    /// Parses overrides of the form `mul=2,add=0.5`. Unnamed primitives keep
    /// weight 1.
    pub fn parse(s: &str) -> crate::Result<OpWeights> {
        let mut w = OpWeights::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| crate::Error::InvalidParam(format!("op weight `{part}` is not key=value")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| crate::Error::InvalidParam(format!("op weight `{part}` is not a number")))?;
            if !value.is_finite() || value < 0.0 {
                return Err(crate::Error::InvalidParam(format!("op weight `{part}` must be finite and >= 0")));
            }
            match key.trim() {
                "mul" => w.mul = value,
                "add" => w.add = value,
                "shift" => w.shift = value,
                "xor" => w.xor = value,
                "log2" => w.log2 = value,
                other => return Err(crate::Error::InvalidParam(format!("unknown primitive `{other}`"))),
            }
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_counts() -> Vec<OpCount> {
        let mut v = Vec::new();
        for mul in 0..2 {
            for add in 0..2 {
                for shift in 0..2 {
                    for xor in 0..2 {
                        for log2 in 0..2 {
                            v.push(OpCount { mul, add, shift, xor, log2 });
                        }
                    }
                }
            }
        }
        v
    }

    #[test]
    fn merge_is_commutative_associative_with_zero_identity() {
        let all = small_counts();
        for a in &all {
            assert_eq!(a.merge(OpCount::ZERO), *a);
            for b in &all {
                assert_eq!(a.merge(*b), b.merge(*a));
                for c in &all {
                    assert_eq!(a.merge(*b).merge(*c), a.merge(b.merge(*c)));
                }
            }
        }
    }

    #[test]
    fn default_weights_sum_counters() {
        let c = OpCount { mul: 3, add: 4, shift: 5, xor: 6, log2: 7 };
        assert_eq!(c.total(&OpWeights::default()), 25.0);
        assert_eq!(c.count(), 25);
    }

    #[test]
    fn parse_weights() {
        let w = OpWeights::parse("mul=2, log2=0.5").unwrap();
        assert_eq!(w.mul, 2.0);
        assert_eq!(w.add, 1.0);
        assert_eq!(w.log2, 0.5);
        assert!(OpWeights::parse("div=1").is_err());
        assert!(OpWeights::parse("mul").is_err());
        assert!(OpWeights::parse("mul=-1").is_err());
    }
}
