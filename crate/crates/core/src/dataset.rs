//! Labelled image collections and manifest ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{decode_ppm, resize_bilinear};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ingested,
    Synthetic { seed: u64 },
}

/// Images normalised to `[0, 1]` sharing one shape, with labels in
/// `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<Sample>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(items: Vec<Sample>, classes: usize, provenance: Provenance) -> Result<Dataset> {
        if let Some(first) = items.first() {
            let shape = first.image.shape();
            for (i, s) in items.iter().enumerate() {
                if s.image.shape() != shape {
                    return Err(Error::Shape(format!("item {i} has shape {:?}, expected {shape:?}", s.image.shape())));
                }
                if s.label >= classes {
                    return Err(Error::InvalidParam(format!("item {i} label {} >= classes {classes}", s.label)));
                }
            }
        }
        Ok(Dataset { items, classes, provenance })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.items.first().map(|s| s.image.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.items {
            counts[s.label] += 1;
        }
        counts
    }

    /// Seeded shuffle, then the first `round((1 - fraction) * N)` items
    /// become the training part and the rest the held-out part.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidParam(format!("split fraction {fraction} outside [0,1]")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let train_len = ((1.0 - fraction) * self.len() as f64).round() as usize;
        let pick = |idx: &[usize]| Dataset {
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
            classes: self.classes,
            provenance: self.provenance.clone(),
        };
        Ok((pick(&order[..train_len]), pick(&order[train_len..])))
    }
}

/// Loads a `path,label` manifest (paths relative to the manifest's
/// directory). Every image is decoded, resized to `size x size`, and kept in
/// manifest order. Blank lines and `#` comments are ignored. The class count
/// is the largest label plus one unless `classes` is given.
pub fn load_dataset(manifest: &Path, size: usize, classes: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(manifest)
        .map_err(|e| Error::IngestPath { path: manifest.to_path_buf(), reason: e.to_string() })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut entries: Vec<(PathBuf, usize)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (path, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::IngestLine { line: n + 1, reason: "expected `path,label`".into() })?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::IngestLine { line: n + 1, reason: format!("bad label `{}`", label.trim()) })?;
        if classes.is_some_and(|c| label >= c) {
            return Err(Error::IngestLine { line: n + 1, reason: format!("label {label} out of range") });
        }
        entries.push((base.join(path.trim()), label));
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let items = entries
        .par_iter()
        .map(|(path, label)| {
            let ingest_err = |reason: String| Error::IngestPath { path: path.clone(), reason };
            let bytes = fs::read(path).map_err(|e| ingest_err(e.to_string()))?;
            let image = decode_ppm(&bytes).map_err(|e| ingest_err(e.to_string()))?;
            let image = resize_bilinear(&image, size, size)?;
            Ok(Sample { image, label: *label })
        })
        .collect::<Result<Vec<_>>>()?;
    let classes = classes.unwrap_or_else(|| entries.iter().map(|(_, l)| l + 1).max().unwrap_or(0));
    Dataset::new(items, classes, Provenance::Ingested)
}
