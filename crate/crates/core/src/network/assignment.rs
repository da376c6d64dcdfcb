use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MulKernel;

/// Number of convolution layers in the reference architectures.
pub const CONV_LAYERS: usize = 4;
const MAX_CONV_LAYERS: usize = 16;

/// Which multiplication kernel each layer uses.
///
/// Convolution layers are indexed from 1. Layers without an explicit kernel,
/// including layer 4, run exact. Dense layers share one kernel, exact unless
/// overridden.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerAssignment {
    conv: Vec<MulKernel>,
    dense: MulKernel,
}

impl Default for LayerAssignment {
    fn default() -> Self {
        LayerAssignment { conv: vec![MulKernel::EXACT; CONV_LAYERS], dense: MulKernel::EXACT }
    }
}

impl LayerAssignment {
    pub fn exact() -> LayerAssignment {
        LayerAssignment::default()
    }

    /// Kernels for conv layers `1..=kernels.len()`; the rest run exact.
    pub fn from_conv(kernels: &[MulKernel]) -> LayerAssignment {
        let mut a = LayerAssignment::default();
        for (i, &k) in kernels.iter().enumerate() {
            a.set_conv(i + 1, k).expect("index within bounds");
        }
        a
    }

    /// Only conv layer `layer` uses `kernel`.
    pub fn single(layer: usize, kernel: MulKernel) -> Result<LayerAssignment> {
        let mut a = LayerAssignment::default();
        a.set_conv(layer, kernel)?;
        Ok(a)
    }

    pub fn set_conv(&mut self, layer: usize, kernel: MulKernel) -> Result<()> {
        if layer == 0 || layer > MAX_CONV_LAYERS {
            return Err(Error::InvalidParam(format!("conv layer index {layer} outside 1..={MAX_CONV_LAYERS}")));
        }
        if self.conv.len() < layer {
            self.conv.resize(layer, MulKernel::EXACT);
        }
        self.conv[layer - 1] = kernel;
        Ok(())
    }

    pub fn with_dense(mut self, kernel: MulKernel) -> LayerAssignment {
        self.dense = kernel;
        self
    }

    pub fn conv_kernel(&self, layer: usize) -> MulKernel {
        layer.checked_sub(1).and_then(|i| self.conv.get(i)).copied().unwrap_or(MulKernel::EXACT)
    }

    pub fn conv_kernels(&self) -> &[MulKernel] {
        &self.conv
    }

    pub fn dense_kernel(&self) -> MulKernel {
        self.dense
    }

    /// Identifier used for ordering and deduplication, e.g.
    /// `rounded/tirud/famm/exact`.
    pub fn id(&self) -> String {
        let mut s = self.conv.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("/");
        if !self.dense.is_exact() {
            s.push_str("+dense=");
            s.push_str(&self.dense.to_string());
        }
        s
    }

    /// Parses `1=rounded,2=tirud,3=famm,4=exact` (unlisted conv layers run
    /// exact; `dense=<id>` sets the dense kernel), or a label such as `RTF` /
    /// `R/T/F` that assigns conv layers in order. `exact` and the empty
    /// string mean every layer exact.
    pub fn parse(spec: &str) -> Result<LayerAssignment> {
        let spec = spec.trim();
        if spec == "exact" {
            return Ok(LayerAssignment::exact());
        }
        if !spec.contains('=') && !spec.is_empty() {
            return Ok(LayerAssignment::from_conv(&parse_label(spec)?));
        }
        let mut a = LayerAssignment::default();
        let mut seen = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, id) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidParam(format!("assignment `{part}` is not layer=kernel")))?;
            let kernel: MulKernel = id.parse()?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::InvalidParam(format!("layer `{key}` assigned twice")));
            }
            seen.push(key);
            if key == "dense" {
                a.dense = kernel;
                continue;
            }
            let layer: usize =
                key.parse().map_err(|_| Error::InvalidParam(format!("`{key}` is not a conv layer index")))?;
            a.set_conv(layer, kernel)?;
        }
        Ok(a)
    }
}

/// Short labels: R rounding, L LNS, F FAMM, Q quantize, T TIRuD, E exact,
/// SA shift-and-add, SX shift-and-xor.
fn parse_label(label: &str) -> Result<Vec<MulKernel>> {
    let compact: String = label.chars().filter(|c| *c != '/' && !c.is_whitespace()).collect();
    let bytes = compact.as_bytes();
    let mut kernels = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let two = bytes.get(i..i + 2);
        let (kernel, width) = match (bytes[i], two) {
            (_, Some(b"SA")) => (MulKernel::SHIFT_ADD, 2),
            (_, Some(b"SX")) => (MulKernel::SHIFT_XOR, 2),
            (b'R', _) => (MulKernel::ROUNDED, 1),
            (b'L', _) => (MulKernel::LNS, 1),
            (b'F', _) => (MulKernel::FAMM, 1),
            (b'Q', _) => (MulKernel::QUANTIZE, 1),
            (b'T', _) => (MulKernel::TIRUD, 1),
            (b'E', _) => (MulKernel::EXACT, 1),
            _ => return Err(Error::InvalidParam(format!("unknown kernel id or label `{label}`"))),
        };
        kernels.push(kernel);
        i += width;
    }
    if kernels.len() > MAX_CONV_LAYERS {
        return Err(Error::InvalidParam(format!("label `{label}` names too many layers")));
    }
    Ok(kernels)
}

impl fmt::Display for LayerAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.conv.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}={k}", i + 1)?;
        }
        if !self.dense.is_exact() {
            write!(f, ",dense={}", self.dense)?;
        }
        Ok(())
    }
}

impl FromStr for LayerAssignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<LayerAssignment> {
        LayerAssignment::parse(s)
    }
}

impl Serialize for LayerAssignment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerAssignment {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unspecified_layers_default_to_exact() {
        assert_eq!(LayerAssignment::parse("exact").unwrap(), LayerAssignment::exact());
        assert_eq!(LayerAssignment::parse("").unwrap(), LayerAssignment::exact());
        let a = LayerAssignment::parse("1=rounded,3=famm").unwrap();
        assert_eq!(a.conv_kernel(1), MulKernel::ROUNDED);
        assert_eq!(a.conv_kernel(2), MulKernel::EXACT);
        assert_eq!(a.conv_kernel(3), MulKernel::FAMM);
        assert_eq!(a.conv_kernel(4), MulKernel::EXACT);
        assert_eq!(a.conv_kernel(9), MulKernel::EXACT);
        assert_eq!(a.dense_kernel(), MulKernel::EXACT);
        assert_eq!(a.to_string(), "1=rounded,2=exact,3=famm,4=exact");
    }

    #[test]
    fn layer_four_can_be_overridden_explicitly() {
        let a = LayerAssignment::parse("4=tirud").unwrap();
        assert_eq!(a.conv_kernel(4), MulKernel::TIRUD);
    }

    #[test]
    fn labels() {
        assert_eq!(LayerAssignment::parse("RTF").unwrap(), LayerAssignment::parse("1=rounded,2=tirud,3=famm").unwrap());
        assert_eq!(LayerAssignment::parse("R/T/L").unwrap().conv_kernel(3), MulKernel::LNS);
        let a = LayerAssignment::parse("SARF").unwrap();
        assert_eq!(a.conv_kernels()[..3], [MulKernel::SHIFT_ADD, MulKernel::ROUNDED, MulKernel::FAMM]);
        assert!(LayerAssignment::parse("RZ").is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(LayerAssignment::parse("1=warp").is_err());
        assert!(LayerAssignment::parse("0=exact").is_err());
        assert!(LayerAssignment::parse("x=exact").is_err());
        assert!(LayerAssignment::parse("1=exact,1=tirud").is_err());
        assert!(LayerAssignment::parse("1").is_err());
    }

    #[test]
    fn display_parse_round_trip() {
        let a = LayerAssignment::parse("2=dsm4,dense=lns").unwrap();
        assert_eq!(a.to_string().parse::<LayerAssignment>().unwrap(), a);
        assert_eq!(a.id(), "exact/dsm4/exact/exact+dense=lns");
        assert_eq!(LayerAssignment::parse("").unwrap(), LayerAssignment::exact());
    }
}
