//! Synthetic handwritten-style digits for hermetic tests and demos.
//!
//! Each digit is a set of strokes (polylines, with rings and arcs
//! pre-sampled into polylines) in a unit box, rasterized with an
//! anti-aliased distance-to-segment test. Per-sample jitter (rotation,
//! scale, translation, stroke thickness, brightness) gives intra-class
//! variation while classes stay visually distinct, so models trained on
//! these digits behave like models trained on small MNIST subsets without
//! any file dependency.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DonnError, Result};

use super::LabeledImageSet;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, n: usize) -> Stroke {
    (0..=n)
        .map(|i| {
            let a = a0 + (a1 - a0) * i as f64 / n as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn ring(cx: f64, cy: f64, rx: f64, ry: f64) -> Stroke {
    arc(cx, cy, rx, ry, 0.0, std::f64::consts::TAU, 24)
}

/// Stroke table per digit, unit coordinates (x right, y down).
fn strokes_for(digit: u8) -> Vec<Stroke> {
    use std::f64::consts::PI;
    match digit {
        0 => vec![ring(0.5, 0.5, 0.22, 0.32)],
        1 => vec![
            vec![(0.52, 0.12), (0.52, 0.88)],
            vec![(0.38, 0.26), (0.52, 0.12)],
        ],
        2 => vec![
            arc(0.5, 0.3, 0.2, 0.18, -PI, 0.0, 10),
            vec![(0.7, 0.3), (0.3, 0.86)],
            vec![(0.3, 0.86), (0.72, 0.86)],
        ],
        3 => vec![
            arc(0.46, 0.31, 0.19, 0.19, -0.85 * PI, 0.5 * PI, 12),
            arc(0.46, 0.69, 0.19, 0.19, -0.5 * PI, 0.85 * PI, 12),
        ],
        4 => vec![
            vec![(0.6, 0.12), (0.28, 0.6)],
            vec![(0.28, 0.6), (0.78, 0.6)],
            vec![(0.6, 0.12), (0.6, 0.88)],
        ],
        5 => vec![
            vec![(0.68, 0.14), (0.32, 0.14)],
            vec![(0.32, 0.14), (0.32, 0.46)],
            arc(0.46, 0.64, 0.2, 0.21, -0.55 * PI, 0.75 * PI, 12),
        ],
        6 => vec![
            vec![(0.62, 0.12), (0.44, 0.36), (0.32, 0.58)],
            ring(0.47, 0.64, 0.19, 0.21),
        ],
        7 => vec![
            vec![(0.28, 0.16), (0.72, 0.16)],
            vec![(0.72, 0.16), (0.42, 0.86)],
        ],
        8 => vec![ring(0.5, 0.31, 0.16, 0.17), ring(0.5, 0.68, 0.19, 0.2)],
        9 => vec![
            ring(0.52, 0.36, 0.18, 0.2),
            vec![(0.7, 0.42), (0.66, 0.64), (0.58, 0.88)],
        ],
        _ => Vec::new(),
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// One jittered sample of `digit` on a `side`x`side` canvas, values in
/// [0, 1] with bright strokes on a dark background.
pub fn synthetic_digit<R: Rng + ?Sized>(digit: u8, side: usize, rng: &mut R) -> Result<Array2<f32>> {
    if digit > 9 {
        return Err(DonnError::Dataset(format!("digit {digit} outside 0-9")));
    }
    if side < 8 {
        return Err(DonnError::Dataset(format!(
            "canvas side {side} too small for strokes (need >= 8)"
        )));
    }
    let theta: f64 = rng.gen_range(-0.12..0.12);
    let scale: f64 = rng.gen_range(0.88..1.08);
    let tx: f64 = rng.gen_range(-0.05..0.05);
    let ty: f64 = rng.gen_range(-0.05..0.05);
    let thickness: f64 = rng.gen_range(0.05..0.075);
    let stroke_level: f64 = rng.gen_range(0.82..0.97);
    let (sin, cos) = theta.sin_cos();
    let place = |(x, y): (f64, f64)| -> (f64, f64) {
        let (dx, dy) = (x - 0.5, y - 0.5);
        (
            0.5 + scale * (cos * dx - sin * dy) + tx,
            0.5 + scale * (sin * dx + cos * dy) + ty,
        )
    };
    let strokes: Vec<Stroke> = strokes_for(digit)
        .into_iter()
        .map(|s| s.into_iter().map(place).collect())
        .collect();

    let px = (side - 1) as f64;
    let edge = 0.9 / px; // ~1 pixel of anti-aliased falloff
    let mut canvas = Array2::zeros((side, side));
    for r in 0..side {
        for c in 0..side {
            let p = (c as f64 / px, r as f64 / px);
            let mut d = f64::INFINITY;
            for stroke in &strokes {
                for pair in stroke.windows(2) {
                    d = d.min(dist_to_segment(p, pair[0], pair[1]));
                }
            }
            let ink = ((thickness + edge - d) / edge).clamp(0.0, 1.0);
            let background: f64 = rng.gen_range(0.0..0.08);
            let v = (stroke_level * ink).max(background);
            canvas[(r, c)] = v.min(1.0) as f32;
        }
    }
    Ok(canvas)
}

/// A balanced labeled set: `per_label` jittered samples of every requested
/// label, round-robin interleaved. Deterministic in `seed`.
pub fn synthetic_set(
    labels: &[u8],
    per_label: usize,
    side: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    if labels.is_empty() || per_label == 0 {
        return Err(DonnError::Dataset("empty synthetic set requested".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(labels.len() * per_label);
    let mut out_labels = Vec::with_capacity(labels.len() * per_label);
    for _ in 0..per_label {
        for &label in labels {
            images.push(synthetic_digit(label, side, &mut rng)?);
            out_labels.push(label);
        }
    }
    LabeledImageSet::new(
        images,
        out_labels,
        format!("synthetic digits (seed {seed}, {side}x{side})"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canvases_are_in_range_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for digit in 0..=9u8 {
            let img = synthetic_digit(digit, 28, &mut rng).unwrap();
            assert_eq!(img.dim(), (28, 28));
            assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // some ink, but not a flood fill
            let bright = img.iter().filter(|&&v| v > 0.5).count();
            assert!(
                bright > 20 && bright < 280,
                "digit {digit}: {bright} bright pixels of 784"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        let a = synthetic_set(&[0, 1, 7], 4, 28, 5).unwrap();
        let b = synthetic_set(&[0, 1, 7], 4, 28, 5).unwrap();
        for (x, y) in a.images().iter().zip(b.images().iter()) {
            assert_eq!(x, y);
        }
        let c = synthetic_set(&[0, 1, 7], 4, 28, 6).unwrap();
        assert_ne!(a.images()[0], c.images()[0], "different seed, different jitter");
    }

    #[test]
    fn labels_are_balanced_round_robin() {
        let set = synthetic_set(&[0, 1, 7], 3, 16, 0).unwrap();
        assert_eq!(set.len(), 9);
        assert_eq!(set.labels(), &[0, 1, 7, 0, 1, 7, 0, 1, 7]);
    }

    #[test]
    fn rejections() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synthetic_digit(10, 28, &mut rng).is_err());
        assert!(synthetic_digit(3, 4, &mut rng).is_err());
        assert!(synthetic_set(&[], 5, 28, 0).is_err());
        assert!(synthetic_set(&[1], 0, 28, 0).is_err());
    }

    /// Nearest-centroid classification on the binarized canvases: the
    /// classes must stay separable under jitter, or downstream training
    /// tests would chase noise.
    #[test]
    fn digit_classes_are_linearly_separable_enough() {
        let labels = [0u8, 1, 7];
        let train = synthetic_set(&labels, 20, 28, 11).unwrap();
        let test = synthetic_set(&labels, 10, 28, 12).unwrap();

        let binarize = |img: &Array2<f32>| img.mapv(|v| if v > 0.5 { 1.0f64 } else { 0.0 });
        let mut centroids: Vec<(u8, Array2<f64>)> = labels
            .iter()
            .map(|&l| (l, Array2::zeros((28, 28))))
            .collect();
        for (img, &label) in train.images().iter().zip(train.labels()) {
            let b = binarize(img);
            for (l, c) in centroids.iter_mut() {
                if *l == label {
                    *c += &b;
                }
            }
        }
        for (_, c) in centroids.iter_mut() {
            *c /= 20.0;
        }

        let mut correct = 0;
        for (img, &label) in test.images().iter().zip(test.labels()) {
            let b = binarize(img);
            let best = centroids
                .iter()
                .map(|(l, c)| {
                    let d: f64 = (&b - c).mapv(|v| v * v).sum();
                    (*l, d)
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0;
            if best == label {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / test.len() as f64;
        assert!(
            accuracy >= 0.9,
            "nearest-centroid accuracy only {accuracy} on synthetic {{0,1,7}}"
        );
    }
}
