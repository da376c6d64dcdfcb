//! Model persistence: a JSON manifest describing the layers plus a raw
//! little-endian f32 blob holding every weight and bias.
//!
//! Each parameter tensor's byte range is recorded in the manifest. The
//! ranges must tile the blob with no gaps or overlaps. Parameters are held
//! as f64 in memory and stored as f32, so a loaded model re-saves to
//! identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Conv2d, Dense, Layer, NetworkSpec};

pub const FORMAT_NAME: &str = "approxcnn-model";
pub const FORMAT_VERSION: u32 = 1;
const F32_BYTES: usize = 4;

/// Byte range of one tensor inside the blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRef {
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestLayer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: TensorRef,
        biases: TensorRef,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        weights: TensorRef,
        biases: TensorRef,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        window_h: usize,
        window_w: usize,
    },
    Relu,
    Flatten,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub dtype: String,
    pub name: String,
    pub input_shape: Vec<usize>,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub blob_bytes: usize,
    pub layers: Vec<ManifestLayer>,
}

/// A serialised model held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFile {
    pub manifest: String,
    pub blob: Vec<u8>,
}

fn push_tensor(blob: &mut Vec<u8>, values: &[f64]) -> Result<TensorRef> {
    let offset = blob.len();
    for &v in values {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::InvalidParam(format!("parameter {v} is not representable as f32")));
        }
        blob.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(TensorRef { offset, bytes: values.len() * F32_BYTES })
}

/// Serialises `net`; `blob_name` is recorded as the blob's file name.
pub fn encode_model(net: &NetworkSpec, blob_name: &str) -> Result<ModelFile> {
    net.layer_shapes()?;
    let mut blob = Vec::with_capacity(net.parameter_count() * F32_BYTES);
    let mut layers = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        layers.push(match layer {
            Layer::Conv2d(c) => ManifestLayer::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel_h: c.kernel_h,
                kernel_w: c.kernel_w,
                weights: push_tensor(&mut blob, &c.weights)?,
                biases: push_tensor(&mut blob, &c.biases)?,
            },
            Layer::Dense(d) => ManifestLayer::Dense {
                in_features: d.in_features,
                out_features: d.out_features,
                weights: push_tensor(&mut blob, &d.weights)?,
                biases: push_tensor(&mut blob, &d.biases)?,
            },
            Layer::MaxPool2d { window_h, window_w } => {
                ManifestLayer::MaxPool2d { window_h: *window_h, window_w: *window_w }
            }
            Layer::Relu => ManifestLayer::Relu,
            Layer::Flatten => ManifestLayer::Flatten,
            Layer::Softmax => ManifestLayer::Softmax,
        });
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        endianness: "little".into(),
        dtype: "f32".into(),
        name: net.name.clone(),
        input_shape: net.input_shape.clone(),
        blob: blob_name.into(),
        blob_bytes: blob.len(),
        layers,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    Ok(ModelFile { manifest: text, blob })
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.format != FORMAT_NAME {
        return Err(Error::Format(format!("format `{}` is not `{FORMAT_NAME}`", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!("version {} is not {FORMAT_VERSION}", manifest.version)));
    }
    if manifest.endianness != "little" || manifest.dtype != "f32" {
        return Err(Error::Format(format!("unsupported encoding {} {}", manifest.endianness, manifest.dtype)));
    }
    Ok(manifest)
}

/// Rebuilds the network from a manifest and its blob. Nothing is returned
/// unless every check passes.
pub fn decode_model(file: &ModelFile) -> Result<NetworkSpec> {
    let manifest = parse_manifest(&file.manifest)?;
    let blob = &file.blob;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Format(format!("blob has {} bytes, manifest declares {}", blob.len(), manifest.blob_bytes)));
    }

    let mut ranges = Vec::new();
    let read = |r: TensorRef, expected: usize, ranges: &mut Vec<TensorRef>| -> Result<Vec<f64>> {
        if r.bytes != expected * F32_BYTES {
            return Err(Error::Format(format!(
                "tensor at offset {} holds {} bytes, layer dims need {}",
                r.offset,
                r.bytes,
                expected * F32_BYTES
            )));
        }
        let end = r.offset.checked_add(r.bytes).filter(|&e| e <= blob.len()).ok_or_else(|| {
            Error::Format(format!("tensor at offset {} overruns the {}-byte blob", r.offset, blob.len()))
        })?;
        ranges.push(r);
        blob[r.offset..end]
            .chunks_exact(F32_BYTES)
            .map(|c| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v.is_finite() {
                    Ok(f64::from(v))
                } else {
                    Err(Error::Format(format!("non-finite parameter in tensor at offset {}", r.offset)))
                }
            })
            .collect()
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        layers.push(match *layer {
            ManifestLayer::Conv2d { in_channels, out_channels, kernel_h, kernel_w, weights, biases } => {
                let count = in_channels
                    .checked_mul(out_channels)
                    .and_then(|v| v.checked_mul(kernel_h))
                    .and_then(|v| v.checked_mul(kernel_w))
                    .ok_or_else(|| Error::Format("conv dims overflow".into()))?;
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    weights: read(weights, count, &mut ranges)?,
                    biases: read(biases, out_channels, &mut ranges)?,
                })
            }
            ManifestLayer::Dense { in_features, out_features, weights, biases } => {
                let count =
                    in_features.checked_mul(out_features).ok_or_else(|| Error::Format("dense dims overflow".into()))?;
                Layer::Dense(Dense {
                    in_features,
                    out_features,
                    weights: read(weights, count, &mut ranges)?,
                    biases: read(biases, out_features, &mut ranges)?,
                })
            }
            ManifestLayer::MaxPool2d { window_h, window_w } => Layer::MaxPool2d { window_h, window_w },
            ManifestLayer::Relu => Layer::Relu,
            ManifestLayer::Flatten => Layer::Flatten,
            ManifestLayer::Softmax => Layer::Softmax,
        });
    }

    ranges.sort_by_key(|r| r.offset);
    let mut cursor = 0;
    for r in &ranges {
        if r.offset != cursor {
            return Err(Error::Format(format!("tensor ranges leave a gap or overlap at byte {cursor}")));
        }
        cursor += r.bytes;
    }
    if cursor != blob.len() {
        return Err(Error::Format(format!("tensors cover {cursor} of {} blob bytes", blob.len())));
    }

    NetworkSpec::new(manifest.name, manifest.input_shape, layers).map_err(|e| Error::Format(e.to_string()))
}

/// Blob path that `save_model` pairs with `manifest_path`.
pub fn blob_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Saves `net` as `manifest_path` plus a sibling `.bin` blob. The blob is
/// written first; both writes are atomic.
pub fn save_model(net: &NetworkSpec, manifest_path: &Path) -> Result<()> {
    let blob_path = blob_path_for(manifest_path);
    let blob_name = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidParam(format!("bad model path {}", manifest_path.display())))?;
    let file = encode_model(net, blob_name)?;
    write_atomic(&blob_path, &file.blob)?;
    write_atomic(manifest_path, file.manifest.as_bytes())
}

pub fn load_model(manifest_path: &Path) -> Result<NetworkSpec> {
    let manifest = fs::read_to_string(manifest_path)?;
    let blob_name = parse_manifest(&manifest)?.blob;
    if Path::new(&blob_name).components().count() != 1 {
        return Err(Error::Format(format!("blob name `{blob_name}` must be a plain file name")));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let blob = fs::read(dir.join(&blob_name))?;
    decode_model(&ModelFile { manifest, blob })
}
