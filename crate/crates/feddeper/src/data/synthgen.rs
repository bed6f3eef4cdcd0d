//! Deterministic synthetic digit images in the MNIST IDX layout.
//!
//! This environment has no network egress for datasets, so the harness ships
//! a generator instead: each class is a hand-laid stroke glyph for one digit,
//! and each sample renders that glyph under a seeded random affine transform
//! (shift, rotation, shear, scale), control-point wobble, stroke-thickness
//! and brightness jitter, and pixel noise. The output files are bit-exact
//! IDX and load through the same parser as the real dataset.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

use super::idx::{write_idx_images, write_idx_labels};
use crate::error::Result;
use crate::numerics::{Purpose, RngStream};

pub const IMAGE_SIDE: usize = 28;

/// Generation parameters.
#[derive(Clone, Debug)]
pub struct DigitGenConfig {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    /// Std of additive per-pixel Gaussian noise (pixel scale 0..1).
    pub noise: f64,
}

impl Default for DigitGenConfig {
    fn default() -> Self {
        Self {
            train: 60_000,
            test: 10_000,
            seed: 1,
            noise: 0.12,
        }
    }
}

/// Polyline control points per digit, in unit coordinates (y down).
fn glyph(digit: usize) -> Vec<Vec<(f64, f64)>> {
    fn ring(cx: f64, cy: f64, rx: f64, ry: f64, points: usize) -> Vec<(f64, f64)> {
        (0..=points)
            .map(|i| {
                let t = i as f64 / points as f64 * std::f64::consts::TAU;
                (cx + rx * t.cos(), cy + ry * t.sin())
            })
            .collect()
    }
    match digit {
        0 => vec![ring(0.5, 0.5, 0.21, 0.31, 12)],
        1 => vec![
            vec![(0.36, 0.3), (0.54, 0.17)],
            vec![(0.54, 0.17), (0.54, 0.83)],
        ],
        2 => vec![vec![
            (0.3, 0.33),
            (0.38, 0.2),
            (0.56, 0.17),
            (0.69, 0.27),
            (0.67, 0.42),
            (0.42, 0.62),
            (0.3, 0.8),
            (0.72, 0.8),
        ]],
        3 => vec![vec![
            (0.32, 0.22),
            (0.52, 0.16),
            (0.68, 0.27),
            (0.52, 0.44),
            (0.7, 0.58),
            (0.56, 0.81),
            (0.32, 0.77),
        ]],
        4 => vec![
            vec![(0.6, 0.16), (0.28, 0.58), (0.78, 0.58)],
            vec![(0.63, 0.3), (0.63, 0.84)],
        ],
        5 => vec![vec![
            (0.7, 0.18),
            (0.36, 0.18),
            (0.33, 0.45),
            (0.56, 0.41),
            (0.71, 0.56),
            (0.62, 0.77),
            (0.32, 0.79),
        ]],
        6 => vec![
            vec![(0.63, 0.15), (0.42, 0.37), (0.33, 0.6)],
            ring(0.5, 0.65, 0.17, 0.17, 10),
        ],
        7 => vec![vec![(0.29, 0.2), (0.72, 0.2), (0.44, 0.82)]],
        8 => vec![
            ring(0.5, 0.32, 0.15, 0.15, 10),
            ring(0.5, 0.66, 0.19, 0.18, 10),
        ],
        9 => vec![
            ring(0.5, 0.34, 0.17, 0.17, 10),
            vec![(0.66, 0.38), (0.62, 0.82)],
        ],
        _ => unreachable!("digit classes are 0..10"),
    }
}

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Render one sample of `digit` into a 28x28 u8 buffer.
fn render_sample(digit: usize, rng: &mut rand_chacha::ChaCha8Rng, noise: f64) -> Vec<u8> {
    let side = IMAGE_SIDE as f64;
    let rotation: f64 = rng.gen_range(-0.30..0.30);
    let scale: f64 = rng.gen_range(0.78..1.18);
    let shear: f64 = rng.gen_range(-0.25..0.25);
    let shift_x: f64 = rng.gen_range(-2.8..2.8);
    let shift_y: f64 = rng.gen_range(-2.8..2.8);
    let thickness: f64 = rng.gen_range(0.8..1.7);
    let brightness: f64 = rng.gen_range(0.6..1.0);
    let wobble = 0.035;

    let (sin, cos) = rotation.sin_cos();
    let transform = |x: f64, y: f64| -> (f64, f64) {
        // Center, wobbled control point -> shear -> rotate -> scale -> shift.
        let (x, y) = (x - 0.5, y - 0.5);
        let x = x + shear * y;
        let (x, y) = (cos * x - sin * y, sin * x + cos * y);
        (
            (x * scale + 0.5) * side + shift_x,
            (y * scale + 0.5) * side + shift_y,
        )
    };

    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for stroke in glyph(digit) {
        let warped: Vec<(f64, f64)> = stroke
            .iter()
            .map(|&(x, y)| {
                let wx = x + wobble * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                let wy = y + wobble * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                transform(wx, wy)
            })
            .collect();
        for pair in warped.windows(2) {
            segments.push((pair[0], pair[1]));
        }
    }

    let mut pixels = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    let inv_two_sigma_sq = 1.0 / (2.0 * thickness * thickness);
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut min_dist = f64::INFINITY;
            for &(a, b) in &segments {
                let d = dist_to_segment(px, py, a, b);
                if d < min_dist {
                    min_dist = d;
                }
            }
            let ink = brightness * (-min_dist * min_dist * inv_two_sigma_sq).exp();
            let noisy =
                ink + noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            pixels.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    pixels
}

/// Generate one split: `(pixels, labels)` with `count` samples, classes
/// cycling `0..10` so counts stay balanced.
pub fn generate_split(count: usize, seed: u64, split_tag: u64, noise: f64) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = Vec::with_capacity(count * IMAGE_SIDE * IMAGE_SIDE);
    let mut labels = Vec::with_capacity(count);
    for index in 0..count {
        let digit = index % 10;
        let stream = RngStream::new(seed, Purpose::DataGen, split_tag, index as u64, 0);
        let mut rng = stream.rng();
        pixels.extend_from_slice(&render_sample(digit, &mut rng, noise));
        labels.push(digit as u8);
    }
    (pixels, labels)
}

/// Write a full train/test dataset in the standard IDX file layout.
pub fn write_digit_dataset(dir: &Path, cfg: &DigitGenConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (train_px, train_lb) = generate_split(cfg.train, cfg.seed, 0, cfg.noise);
    write_idx_images(
        &dir.join("train-images-idx3-ubyte"),
        IMAGE_SIDE,
        IMAGE_SIDE,
        &train_px,
    )?;
    write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &train_lb)?;
    let (test_px, test_lb) = generate_split(cfg.test, cfg.seed, 1, cfg.noise);
    write_idx_images(
        &dir.join("t10k-images-idx3-ubyte"),
        IMAGE_SIDE,
        IMAGE_SIDE,
        &test_px,
    )?;
    write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &test_lb)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_idx_dir, Split};

    #[test]
    fn generation_is_deterministic() {
        let (a, la) = generate_split(20, 7, 0, 0.1);
        let (b, lb) = generate_split(20, 7, 0, 0.1);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = generate_split(20, 8, 0, 0.1);
        assert_ne!(a, c);
    }

    #[test]
    fn labels_are_balanced() {
        let (_, labels) = generate_split(100, 1, 0, 0.1);
        let mut hist = [0usize; 10];
        for &l in &labels {
            hist[l as usize] += 1;
        }
        assert!(hist.iter().all(|&c| c == 10));
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DigitGenConfig {
            train: 40,
            test: 20,
            seed: 3,
            noise: 0.1,
        };
        write_digit_dataset(dir.path(), &cfg).unwrap();
        let train = load_idx_dir(dir.path(), Split::Train).unwrap();
        let test = load_idx_dir(dir.path(), Split::Test).unwrap();
        assert_eq!(train.count(), 40);
        assert_eq!(test.count(), 20);
        assert_eq!(train.feature_dim(), 784);
        assert_eq!(train.num_classes(), 10);
    }
}
