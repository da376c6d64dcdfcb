//! Deterministic synthetic glyph datasets.
//!
//! Each class is a (shape, colour) pair drawn over a noisy grey background,
//! with jittered position, scale, and rotation. Shapes cycle through twelve
//! outlines; colours through four palettes, offset so that every class below
//! 48 gets a distinct pair.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Provenance, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_CLASSES: usize = 43;
const SHAPES: usize = 12;
const PALETTE: [[f64; 3]; 4] = [[0.9, 0.1, 0.1], [0.1, 0.25, 0.9], [0.95, 0.85, 0.1], [0.95, 0.95, 0.95]];

/// Renders `per_class` images of each of `classes` glyph classes at
/// `size x size`. Items are interleaved by class: item `i` has label
/// `i % classes`.
pub fn gen_synthetic_dataset(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if !(2..=MAX_CLASSES).contains(&classes) {
        return Err(Error::InvalidParam(format!("classes {classes} outside [2,{MAX_CLASSES}]")));
    }
    if size < 8 {
        return Err(Error::InvalidParam(format!("image size {size} below 8")));
    }
    if per_class == 0 {
        return Err(Error::InvalidParam("per-class count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for label in 0..classes {
            items.push(Sample { image: render(label, size, &mut rng), label });
        }
    }
    Dataset::new(items, classes, Provenance::Synthetic { seed })
}

fn render(label: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let shape = label % SHAPES;
    let colour = PALETTE[(label + label / SHAPES) % PALETTE.len()];
    let s = size as f64;

    let cx = s / 2.0 + rng.random_range(-0.1..0.1) * s;
    let cy = s / 2.0 + rng.random_range(-0.1..0.1) * s;
    let radius = 0.4 * s * rng.random_range(0.75..1.0);
    let angle: f64 = rng.random_range(-0.15..0.15);
    let (sin, cos) = angle.sin_cos();
    let background: f64 = rng.random_range(0.1..0.4);
    let brightness: f64 = rng.random_range(0.85..1.0);

    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / radius;
            let dy = (y as f64 + 0.5 - cy) / radius;
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let on = inside(shape, u, v);
            for c in 0..3 {
                let base = if on { colour[c] * brightness } else { background };
                let noise: f64 = rng.random_range(-0.08..0.08);
                data[c * plane + y * size + x] = (base + noise).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_parts(vec![3, size, size], data)
}

fn inside(shape: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    let along = (u - v) * FRAC_1_SQRT_2;
    let across = (u + v) * FRAC_1_SQRT_2;
    let slash = across.abs() <= 0.25 && along.abs() <= 0.95;
    let backslash = along.abs() <= 0.25 && across.abs() <= 0.95;
    match shape {
        0 => r2 <= 1.0,
        1 => (0.3..=1.0).contains(&r2),
        2 => v <= 0.7 && u.abs() <= 0.9 * (v + 1.0) / 1.7,
        3 => -v <= 0.7 && u.abs() <= 0.9 * (1.0 - v) / 1.7,
        4 => u.abs() <= 0.75 && v.abs() <= 0.75,
        5 => (u.abs() <= 0.25 && v.abs() <= 0.9) || (v.abs() <= 0.25 && u.abs() <= 0.9),
        6 => v.abs() <= 0.3 && u.abs() <= 0.95,
        7 => u.abs() <= 0.3 && v.abs() <= 0.95,
        8 => slash,
        9 => backslash,
        10 => u.abs() + v.abs() <= 1.0,
        _ => slash || backslash,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_arguments() {
        let a = gen_synthetic_dataset(8, 5, 16, 7).unwrap();
        let b = gen_synthetic_dataset(8, 5, 16, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counts_per_label() {
        let ds = gen_synthetic_dataset(8, 50, 16, 7).unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(ds.class_counts(), vec![50; 8]);
        assert_eq!(ds.image_shape().unwrap(), &[3, 16, 16]);
        assert!(ds.items.iter().flat_map(|s| s.image.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn seeds_differ() {
        let a = gen_synthetic_dataset(4, 2, 8, 1).unwrap();
        let b = gen_synthetic_dataset(4, 2, 8, 2).unwrap();
        assert_ne!(a.items, b.items);
    }

    #[test]
    fn argument_validation() {
        assert!(gen_synthetic_dataset(1, 5, 16, 0).is_err());
        assert!(gen_synthetic_dataset(44, 5, 16, 0).is_err());
        assert!(gen_synthetic_dataset(8, 5, 7, 0).is_err());
        assert!(gen_synthetic_dataset(8, 0, 16, 0).is_err());
        assert!(gen_synthetic_dataset(43, 1, 8, 0).is_ok());
    }

    #[test]
    fn shapes_have_distinct_footprints() {
        let masks: Vec<Vec<bool>> = (0..SHAPES)
            .map(|s| {
                (0..400).map(|i| inside(s, (i % 20) as f64 / 10.0 - 0.95, (i / 20) as f64 / 10.0 - 0.95)).collect()
            })
            .collect();
        for i in 0..SHAPES {
            assert!(masks[i].iter().any(|&b| b));
            for j in i + 1..SHAPES {
                assert_ne!(masks[i], masks[j], "shapes {i} and {j}");
            }
        }
    }
}
