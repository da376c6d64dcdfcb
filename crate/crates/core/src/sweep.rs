//! Enumeration of layer-wise kernel combinations from precision patterns
//! and sweeps over them.
//!
//! A pattern such as `LHH` assigns a low-precision kernel to conv layer 1
//! and high-precision kernels to layers 2 and 3. Conv layer 4 and the dense
//! layers stay exact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_in, EvalConfig, EvalReport, Precision, PrecisionClass};
use crate::kernels::MulKernel;
use crate::network::{LayerAssignment, NetworkSpec};

/// Kernel pools for the pattern letters `H` and `L`. `E` always means
/// exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pools {
    pub high: Vec<MulKernel>,
    pub low: Vec<MulKernel>,
}

impl Default for Pools {
    /// Split of the baseline kernels at 80% average accuracy on the traffic
    /// sign network.
    fn default() -> Self {
        Pools {
            high: vec![MulKernel::FAMM, MulKernel::QUANTIZE, MulKernel::LNS, MulKernel::SHIFT_ADD, MulKernel::TIRUD],
            low: vec![MulKernel::ROUNDED, MulKernel::SHIFT_XOR],
        }
    }
}

impl From<&PrecisionClass> for Pools {
    fn from(pc: &PrecisionClass) -> Pools {
        Pools { high: pc.members(Precision::High), low: pc.members(Precision::Low) }
    }
}

impl Pools {
    fn for_letter(&self, letter: u8) -> Vec<MulKernel> {
        match letter {
            b'H' => self.high.clone(),
            b'L' => self.low.clone(),
            _ => vec![MulKernel::EXACT],
        }
    }
}

impl FromStr for Pools {
    type Err = Error;

    /// `H=lns,famm;L=rounded`. Omitted letters are empty.
    fn from_str(s: &str) -> Result<Pools> {
        let mut pools = Pools { high: Vec::new(), low: Vec::new() };
        let mut seen = [false; 2];
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (letter, list) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidParam(format!("pool `{part}` is not LETTER=kernels")))?;
            let (slot, idx) = match letter.trim() {
                "H" | "h" => (&mut pools.high, 0),
                "L" | "l" => (&mut pools.low, 1),
                other => return Err(Error::InvalidParam(format!("unknown pool letter `{other}`"))),
            };
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::InvalidParam(format!("pool `{}` given twice", letter.trim())));
            }
            for id in list.split(',').map(str::trim).filter(|k| !k.is_empty()) {
                let k: MulKernel = id.parse()?;
                if !slot.contains(&k) {
                    slot.push(k);
                }
            }
        }
        Ok(pools)
    }
}

impl fmt::Display for Pools {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[MulKernel]| v.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "H={};L={}", join(&self.high), join(&self.low))
    }
}

/// Checks a pattern of 2 or 3 letters from `L`, `H`, `E`; returns it
/// upper-cased.
pub fn parse_pattern(pattern: &str) -> Result<String> {
    let p = pattern.trim().to_ascii_uppercase();
    if !(2..=3).contains(&p.len()) || !p.bytes().all(|b| matches!(b, b'L' | b'H' | b'E')) {
        return Err(Error::InvalidParam(format!("pattern `{pattern}` must be 2-3 letters from L, H, E")));
    }
    Ok(p)
}

/// `LHH` becomes `Low-High-High`.
pub fn pattern_label(pattern: &str) -> String {
    pattern
        .bytes()
        .map(|b| match b {
            b'L' => "Low",
            b'H' => "High",
            _ => "Exact",
        })
        .collect::<Vec<_>>()
        .join("-")
}

/// Every assignment matching `pattern`: the cartesian product of the pools
/// over conv layers `1..=len`, with the first layer varying slowest.
pub fn enumerate_assignments(pattern: &str, pools: &Pools) -> Result<Vec<LayerAssignment>> {
    let p = parse_pattern(pattern)?;
    let choices: Vec<Vec<MulKernel>> = p.bytes().map(|b| pools.for_letter(b)).collect();
    if let Some(i) = choices.iter().position(Vec::is_empty) {
        return Err(Error::InvalidParam(format!("pool for `{}` in pattern {p} is empty", p.as_bytes()[i] as char)));
    }
    let mut out = vec![Vec::new()];
    for options in &choices {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<MulKernel>| {
                options.iter().map(move |&k| {
                    let mut next = prefix.clone();
                    next.push(k);
                    next
                })
            })
            .collect();
    }
    Ok(out.iter().map(|ks| LayerAssignment::from_conv(ks)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pattern: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub pattern: String,
    pub label: String,
    pub assignments: usize,
    pub avg_accuracy: f64,
    pub max_accuracy: f64,
    pub min_accuracy: f64,
    pub avg_aoc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Ranked by AoC, highest first.
    pub rows: Vec<SweepRow>,
    /// One entry per requested pattern, in request order.
    pub pattern_stats: Vec<PatternStats>,
}

/// Evaluates every assignment of every pattern.
pub fn sweep(
    net: &NetworkSpec,
    data: &Dataset,
    patterns: &[String],
    pools: &Pools,
    cfg: &EvalConfig,
) -> Result<SweepReport> {
    let mut plan = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for raw in patterns {
        let p = parse_pattern(raw)?;
        if names.contains(&p) {
            return Err(Error::InvalidParam(format!("pattern {p} requested twice")));
        }
        for a in enumerate_assignments(&p, pools)? {
            plan.push((p.clone(), a));
        }
        names.push(p);
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pool = cfg.pool()?;
    let mut rows = Vec::with_capacity(plan.len());
    for (pattern, assign) in plan {
        let report = evaluate_in(&pool, net, &assign, data, &cfg.weights)?;
        rows.push(SweepRow { pattern, report });
    }
    let pattern_stats = names.iter().map(|p| pattern_stats(p, &rows)).collect();
    rank_rows(&mut rows);
    Ok(SweepReport { rows, pattern_stats })
}

/// AoC descending; ties by assignment id, then pattern.
pub fn rank_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|x, y| {
        y.report
            .aoc
            .total_cmp(&x.report.aoc)
            .then_with(|| x.report.assignment.id().cmp(&y.report.assignment.id()))
            .then_with(|| x.pattern.cmp(&y.pattern))
    });
}

/// Statistics over the rows belonging to `pattern`; all zero when it has
/// none.
pub fn pattern_stats(pattern: &str, rows: &[SweepRow]) -> PatternStats {
    let mine: Vec<&EvalReport> = rows.iter().filter(|r| r.pattern == pattern).map(|r| &r.report).collect();
    let mut stats = PatternStats {
        pattern: pattern.to_string(),
        label: pattern_label(pattern),
        assignments: mine.len(),
        avg_accuracy: 0.0,
        max_accuracy: 0.0,
        min_accuracy: 0.0,
        avg_aoc: 0.0,
    };
    if mine.is_empty() {
        return stats;
    }
    let n = mine.len() as f64;
    stats.max_accuracy = mine.iter().map(|r| r.accuracy_percent).fold(f64::NEG_INFINITY, f64::max);
    stats.min_accuracy = mine.iter().map(|r| r.accuracy_percent).fold(f64::INFINITY, f64::min);
    // summation rounding can otherwise leave the mean an ulp outside the range
    stats.avg_accuracy =
        (mine.iter().map(|r| r.accuracy_percent).sum::<f64>() / n).clamp(stats.min_accuracy, stats.max_accuracy);
    stats.avg_aoc = mine.iter().map(|r| r.aoc).sum::<f64>() / n;
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::CONV_LAYERS;

    #[test]
    fn product_sizes() {
        let pools: Pools = "L=rounded,shift_xor;H=lns,famm,tirud".parse().unwrap();
        assert_eq!(enumerate_assignments("LH", &pools).unwrap().len(), 6);
        assert_eq!(enumerate_assignments("LHH", &Pools::default()).unwrap().len(), 50);
        assert_eq!(enumerate_assignments("EE", &Pools::default()).unwrap(), vec![LayerAssignment::exact()]);
    }

    #[test]
    fn order_is_lexicographic_and_layer4_exact() {
        let pools: Pools = "L=rounded,shift_xor;H=lns,famm".parse().unwrap();
        let all = enumerate_assignments("LHH", &pools).unwrap();
        assert_eq!(all[0].id(), "rounded/lns/lns/exact");
        assert_eq!(all[1].id(), "rounded/lns/famm/exact");
        assert_eq!(all[7].id(), "shift_xor/famm/famm/exact");
        for a in &all {
            assert_eq!(a.conv_kernel(CONV_LAYERS), MulKernel::EXACT);
            assert!(a.dense_kernel().is_exact());
        }
    }

    #[test]
    fn invalid_requests() {
        let no_low: Pools = "H=lns".parse().unwrap();
        assert!(matches!(enumerate_assignments("LH", &no_low), Err(Error::InvalidParam(_))));
        assert!(enumerate_assignments("HH", &no_low).is_ok());
        for bad in ["H", "HHHH", "HX", ""] {
            assert!(parse_pattern(bad).is_err(), "{bad}");
        }
        assert!("H=nope".parse::<Pools>().is_err());
        assert!("Q=lns".parse::<Pools>().is_err());
        assert!("H=lns;H=famm".parse::<Pools>().is_err());
    }

    #[test]
    fn pools_text_round_trip() {
        let p = Pools::default();
        assert_eq!(p.to_string().parse::<Pools>().unwrap(), p);
        assert_eq!(pattern_label("LHE"), "Low-High-Exact");
    }
}
