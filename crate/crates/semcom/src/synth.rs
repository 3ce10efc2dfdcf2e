//! Procedural image corpora.
//!
//! Two deterministic 10-class generators stand in for handwritten-digit and
//! natural-image sources: `glyphs` renders jittered stroke shapes on a 28×28
//! grayscale canvas, `textures` renders tinted 32×32 RGB patterns whose
//! classes stay separable after the luma collapse in canonicalization.
//! Pixels are quantized to the u8 grid (k/255) so fixtures written through
//! the binary loaders round-trip bit-identically.
//!
//! Per-sample RNG streams derive from (seed, sample index), so any slice of
//! a corpus is independent of how much of it is generated.

use crate::data::Dataset;
use crate::error::Result;
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const GLYPH_SIDE: usize = 28;
const TEXTURE_SIDE: usize = 32;

fn seg_dist(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn ring_dist(px: f64, py: f64, r: f64) -> f64 {
    ((px * px + py * py).sqrt() - r).abs()
}

/// Stroke skeleton per class, in a [−1,1]² canonical frame.
fn glyph_dist(class: u32, x: f64, y: f64) -> f64 {
    let seg = |a: (f64, f64), b: (f64, f64)| seg_dist(x, y, a.0, a.1, b.0, b.1);
    match class {
        0 => ring_dist(x, y, 0.55),
        1 => seg((0.0, -0.6), (0.0, 0.6)),
        2 => seg((-0.6, 0.0), (0.6, 0.0)),
        3 => seg((0.0, -0.6), (0.0, 0.6)).min(seg((-0.6, 0.0), (0.6, 0.0))),
        4 => seg((-0.5, -0.5), (0.5, 0.5)).min(seg((-0.5, 0.5), (0.5, -0.5))),
        5 => seg((-0.5, -0.5), (0.5, -0.5))
            .min(seg((0.5, -0.5), (0.5, 0.5)))
            .min(seg((0.5, 0.5), (-0.5, 0.5)))
            .min(seg((-0.5, 0.5), (-0.5, -0.5))),
        6 => seg((0.0, -0.6), (0.55, 0.45))
            .min(seg((0.55, 0.45), (-0.55, 0.45)))
            .min(seg((-0.55, 0.45), (0.0, -0.6))),
        7 => seg((-0.5, -0.5), (0.5, -0.5)).min(seg((0.0, -0.5), (0.0, 0.6))),
        8 => seg((-0.4, -0.6), (-0.4, 0.5)).min(seg((-0.4, 0.5), (0.45, 0.5))),
        _ => seg((-0.3, -0.55), (-0.3, 0.55)).min(seg((0.3, -0.55), (0.3, 0.55))),
    }
}

fn quantize_u8<F: Scalar>(v: f64) -> F {
    let q = (v.clamp(0.0, 1.0) * 255.0).round();
    F::of(q / 255.0)
}

fn render_glyph<F: Scalar>(class: u32, rng: &mut ChaCha8Rng, out: &mut Vec<F>) {
    let rot: f64 = rng.random_range(-0.30..0.30);
    let scale: f64 = rng.random_range(0.80..1.10);
    let tx: f64 = rng.random_range(-0.15..0.15);
    let ty: f64 = rng.random_range(-0.15..0.15);
    let half_width: f64 = rng.random_range(0.10..0.16);
    let amp: f64 = rng.random_range(0.85..1.0);
    let (sin_r, cos_r) = rot.sin_cos();
    let half = GLYPH_SIDE as f64 / 2.0;
    for py in 0..GLYPH_SIDE {
        for px in 0..GLYPH_SIDE {
            // Pixel → canonical frame (inverse of translate∘rotate∘scale).
            let ux = (px as f64 + 0.5 - half) / (half * 0.78) - tx;
            let uy = (py as f64 + 0.5 - half) / (half * 0.78) - ty;
            let cx = (cos_r * ux + sin_r * uy) / scale;
            let cy = (-sin_r * ux + cos_r * uy) / scale;
            let d = glyph_dist(class, cx, cy);
            let ink = ((half_width - d) / 0.08).clamp(0.0, 1.0) * amp;
            let noise: f64 = rng.random_range(-0.04..0.04);
            out.push(quantize_u8(ink + noise));
        }
    }
}

/// 28×28 grayscale stroke shapes, 10 balanced classes (label = i mod 10).
pub fn glyphs<F: Scalar>(n: usize, seed: u64) -> Result<Dataset<F>> {
    let mut data = Vec::with_capacity(n * GLYPH_SIDE * GLYPH_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u32;
        let mut rng = rng::substream(seed, &[tag::SYNTH, 0, i as u64]);
        render_glyph(class, &mut rng, &mut data);
        labels.push(class);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, GLYPH_SIDE, GLYPH_SIDE], data)?,
        labels,
        "glyphs",
        0,
        10,
    )
}

/// Grayscale structure per texture class; (x, y) are pixel coordinates.
fn texture_signal(class: u32, x: f64, y: f64, phase: f64, stretch: f64) -> f64 {
    let wave = |t: f64, period: f64| (2.0 * PI * (t + phase) / (period * stretch)).sin();
    match class {
        0 => wave(y, 8.0),
        1 => wave(x, 8.0),
        2 => wave(y, 3.0),
        3 => wave(x, 3.0),
        4 => wave(x, 8.0) * wave(y, 8.0),
        5 => wave(x, 3.0) * wave(y, 3.0),
        6 => {
            let r = ((x - 16.0).powi(2) + (y - 16.0).powi(2)).sqrt();
            wave(r, 5.0)
        }
        7 => wave(x + y, 6.0),
        8 => (x + phase.rem_euclid(32.0)).rem_euclid(32.0) / 16.0 - 1.0,
        _ => {
            let bump = |t: f64| {
                let m = (t + phase).rem_euclid(8.0) - 4.0;
                (-m * m / 3.0).exp()
            };
            2.0 * bump(x) * bump(y) - 1.0
        }
    }
}

fn render_texture<F: Scalar>(class: u32, rng: &mut ChaCha8Rng, out: &mut Vec<F>) {
    let phase: f64 = rng.random_range(0.0..8.0);
    let stretch: f64 = rng.random_range(0.88..1.12);
    let amp: f64 = rng.random_range(0.32..0.45);
    let gains = [
        rng.random_range(0.65..1.0),
        rng.random_range(0.65..1.0),
        rng.random_range(0.65..1.0),
    ];
    let mut gray = [0.0f64; TEXTURE_SIDE * TEXTURE_SIDE];
    for (p, g) in gray.iter_mut().enumerate() {
        let (x, y) = ((p % TEXTURE_SIDE) as f64, (p / TEXTURE_SIDE) as f64);
        let s = texture_signal(class, x, y, phase, stretch);
        let noise: f64 = rng.random_range(-0.04..0.04);
        *g = 0.5 + amp * s + noise;
    }
    for gain in gains {
        for &g in gray.iter() {
            out.push(quantize_u8::<F>(g * gain));
        }
    }
}

/// 32×32 RGB patterns, 10 balanced classes (label = i mod 10). Class
/// structure is carried by luminance, so it survives grayscale collapse.
pub fn textures<F: Scalar>(n: usize, seed: u64) -> Result<Dataset<F>> {
    let mut data = Vec::with_capacity(n * 3 * TEXTURE_SIDE * TEXTURE_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u32;
        let mut rng = rng::substream(seed, &[tag::SYNTH, 1, i as u64]);
        render_texture(class, &mut rng, &mut data);
        labels.push(class);
    }
    Dataset::new(
        Tensor::new(vec![n, 3, TEXTURE_SIDE, TEXTURE_SIDE], data)?,
        labels,
        "textures",
        0,
        10,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::canonicalize;

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let a: Dataset<f32> = glyphs(20, 7).unwrap();
        let b: Dataset<f32> = glyphs(20, 7).unwrap();
        assert_eq!(a.images().data(), b.images().data());
        // A shorter run is a prefix of a longer one.
        let c: Dataset<f32> = glyphs(10, 7).unwrap();
        assert_eq!(
            &a.images().data()[..c.images().numel()],
            c.images().data()
        );
        let d: Dataset<f32> = glyphs(20, 8).unwrap();
        assert_ne!(a.images().data(), d.images().data());
    }

    #[test]
    fn labels_are_balanced_round_robin() {
        let ds: Dataset<f32> = textures(40, 1).unwrap();
        for (i, &l) in ds.labels().iter().enumerate() {
            assert_eq!(l, (i % 10) as u32);
        }
    }

    #[test]
    fn pixels_live_on_u8_grid() {
        let g: Dataset<f64> = glyphs(10, 3).unwrap();
        let t: Dataset<f64> = textures(10, 3).unwrap();
        for ds in [&g, &t] {
            for &v in ds.images().data() {
                let scaled = v * 255.0;
                assert!((scaled - scaled.round()).abs() < 1e-9);
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn glyph_classes_have_distinct_means() {
        let ds: Dataset<f64> = glyphs(200, 5).unwrap();
        let px = 28 * 28;
        let mut means = vec![vec![0.0f64; px]; 10];
        for i in 0..ds.len() {
            let img = &ds.images().data()[i * px..(i + 1) * px];
            for (m, &v) in means[ds.label(i) as usize].iter_mut().zip(img) {
                *m += v / 20.0;
            }
        }
        // Mean images of different classes should disagree substantially.
        for a in 0..10 {
            for b in a + 1..10 {
                let diff: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    / px as f64;
                assert!(diff > 1e-3, "classes {a} and {b} look alike ({diff})");
            }
        }
    }

    #[test]
    fn textures_stay_distinct_after_luma_collapse() {
        let ds: Dataset<f64> = textures(200, 5).unwrap();
        let canon = canonicalize(&ds).unwrap();
        assert_eq!(canon.sample_shape(), [1, 28, 28]);
        let px = 28 * 28;
        let mut means = vec![vec![0.0f64; px]; 10];
        for i in 0..canon.len() {
            let img = &canon.images().data()[i * px..(i + 1) * px];
            for (m, &v) in means[canon.label(i) as usize].iter_mut().zip(img) {
                *m += v / 20.0;
            }
        }
        for a in 0..10 {
            for b in a + 1..10 {
                let diff: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    / px as f64;
                assert!(diff > 1e-4, "classes {a} and {b} collapse ({diff})");
            }
        }
    }

    #[test]
    fn glyphs_have_ink() {
        let ds: Dataset<f32> = glyphs(10, 1).unwrap();
        let px = 28 * 28;
        for i in 0..10 {
            let img = &ds.images().data()[i * px..(i + 1) * px];
            let mean: f32 = img.iter().sum::<f32>() / px as f32;
            assert!(mean > 0.02 && mean < 0.6, "class {i} mean {mean}");
        }
    }
}
