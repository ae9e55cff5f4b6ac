//! Procedural corpora for tests and desk-scale experiments.
//!
//! `shapes` images are piecewise-constant scenes of ellipses, rings and
//! rectangles over a smooth background, loosely resembling cross-sectional
//! scans. `textures` images are sums of oriented sinusoids, standing in for
//! natural-image pretraining data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::save_image;
use crate::error::Result;
use crate::image::{Image, RangeTag};
use crate::nn::stream_seed;

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Ring { cy: f64, cx: f64, outer: f64, inner: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Ring { cy, cx, outer, inner } => {
                let r = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                r <= outer && r >= inner
            }
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
        }
    }
}

/// One shapes scene.
pub fn shapes_image(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let n = size as f64;
    let base = rng.gen_range(0.05..0.25);
    let (gy, gx) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let mut shapes = Vec::new();
    for _ in 0..rng.gen_range(3..=7) {
        let cy = rng.gen_range(0.1..0.9) * n;
        let cx = rng.gen_range(0.1..0.9) * n;
        let shape = match rng.gen_range(0..3) {
            0 => Shape::Ellipse {
                cy,
                cx,
                ry: rng.gen_range(0.06..0.3) * n,
                rx: rng.gen_range(0.06..0.3) * n,
                angle: rng.gen_range(0.0..PI),
            },
            1 => {
                let outer = rng.gen_range(0.1..0.3) * n;
                Shape::Ring {
                    cy,
                    cx,
                    outer,
                    inner: outer * rng.gen_range(0.4..0.8),
                }
            }
            _ => {
                let (hh, hw) = (rng.gen_range(0.05..0.25) * n, rng.gen_range(0.05..0.25) * n);
                Shape::Rect {
                    y0: cy - hh,
                    x0: cx - hw,
                    y1: cy + hh,
                    x1: cx + hw,
                }
            }
        };
        shapes.push((shape, rng.gen_range(0.3..0.95)));
    }
    let mut px = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let mut v = base + gy * y / n + gx * x / n;
            for (shape, level) in &shapes {
                if shape.contains(y, x) {
                    v = *level;
                }
            }
            px.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(size, size, px, RangeTag::Unit).expect("values clamped to unit range")
}

/// One texture image.
pub fn texture_image(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let freq = rng.gen_range(0.03..0.35);
            let theta = rng.gen_range(0.0..PI);
            (freq * theta.cos(), freq * theta.sin(), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.2..1.0))
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.3).sum();
    let mut px = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let s: f64 = waves
                .iter()
                .map(|&(fy, fx, phase, amp)| amp * (2.0 * PI * (fy * i as f64 + fx * j as f64) + phase).sin())
                .sum();
            px.push((0.5 + 0.45 * s / total) as f32);
        }
    }
    Image::new(size, size, px, RangeTag::Unit).expect("values within unit range")
}

fn corpus(n: usize, size: usize, seed: u64, kind: &str, make: fn(usize, &mut ChaCha8Rng) -> Image) -> Vec<Image> {
    (0..n)
        .map(|i| make(size, &mut ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("{kind}{i}")))))
        .collect()
}

/// `n` shapes scenes of `size x size`, image `i` depending only on `(seed, i)`.
pub fn synthetic_shapes(n: usize, size: usize, seed: u64) -> Vec<Image> {
    corpus(n, size, seed, "shapes", shapes_image)
}

/// `n` texture images of `size x size`.
pub fn synthetic_textures(n: usize, size: usize, seed: u64) -> Vec<Image> {
    corpus(n, size, seed, "textures", texture_image)
}

/// Writes images as `<prefix>_NNN.png` and returns the paths.
pub fn write_corpus(dir: &Path, images: &[Image], prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("{prefix}_{i:03}.png"));
            save_image(img, &p)?;
            Ok(p)
        })
        .collect()
}
