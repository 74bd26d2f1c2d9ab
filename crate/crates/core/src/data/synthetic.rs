//! Class-conditional Gaussian-blob images.
//!
//! A class index is read as a binary code of `ceil(log2 classes)` attributes.
//! Every attribute owns a pair of opposite anchor points on a ring around the
//! image centre; the attribute's bit decides which anchor carries a blob.
//! Position, amplitude and width are jittered per sample and pixel noise is
//! added on top.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{Shape3, Tensor};
use crate::rng::{rng_for, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub samples: usize,
    /// Std-dev of per-pixel additive noise.
    pub noise: f64,
    /// Std-dev of blob centre jitter, in pixels.
    pub jitter: f64,
}

impl SyntheticSpec {
    pub fn new(seed: u64, samples: usize) -> Self {
        Self {
            seed,
            samples,
            noise: 0.6,
            jitter: 1.5,
        }
    }
}

fn attribute_count(classes: usize) -> usize {
    (usize::BITS - (classes.max(2) - 1).leading_zeros()) as usize
}

/// Anchor `(y, x)` for attribute `a` with bit `bit`.
fn anchor(a: usize, bit: usize, attrs: usize, shape: Shape3) -> (f64, f64) {
    let slot = a + bit * attrs;
    let angle = std::f64::consts::TAU * slot as f64 / (2 * attrs) as f64;
    let radius = 0.3 * shape.h.min(shape.w) as f64;
    let cy = (shape.h as f64 - 1.0) / 2.0;
    let cx = (shape.w as f64 - 1.0) / 2.0;
    (cy + radius * angle.sin(), cx + radius * angle.cos())
}

pub fn synthetic_dataset(spec: &SyntheticSpec, shape: Shape3, classes: usize) -> Result<Vec<Sample>> {
    if classes < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 classes"));
    }
    if spec.samples < classes {
        return Err(Error::InsufficientSamples(format!(
            "{} samples cannot cover {classes} classes",
            spec.samples
        )));
    }
    let mut rng = rng_for(spec.seed, &[stream::DATASET]);
    let attrs = attribute_count(classes);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = Normal::new(0.0, spec.jitter.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let blob_sigma = 0.07 * shape.h.min(shape.w) as f64;

    // Exactly balanced labels, in random order.
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);

    let mut out = Vec::with_capacity(spec.samples);
    let mut canvas = vec![0.0f64; shape.h * shape.w];
    for label in labels {
        canvas.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..attrs {
            let bit = (label >> a) & 1;
            let (ay, ax) = anchor(a, bit, attrs, shape);
            let cy = ay + jitter.sample(&mut rng);
            let cx = ax + jitter.sample(&mut rng);
            let amp = rng.random_range(0.7..1.3);
            let sigma = blob_sigma * rng.random_range(0.8..1.25);
            let inv = 1.0 / (2.0 * sigma * sigma);
            for y in 0..shape.h {
                for x in 0..shape.w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    canvas[y * shape.w + x] += amp * (-d2 * inv).exp();
                }
            }
        }
        let gains: Vec<f64> = (0..shape.c).map(|_| rng.random_range(0.8..1.2)).collect();
        let mut values = Vec::with_capacity(shape.len());
        for &v in &canvas {
            for g in &gains {
                values.push((v * g + noise.sample(&mut rng)) as f32);
            }
        }
        out.push(Sample {
            features: Tensor::new(vec![shape.h, shape.w, shape.c], values)?,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SyntheticSpec::new(1, 4000);
        let s = Shape3::new(32, 32, 1);
        let a = synthetic_dataset(&spec, s, 8).unwrap();
        let b = synthetic_dataset(&spec, s, 8).unwrap();
        assert_eq!(a, b);
        let counts = crate::data::class_counts(a.iter().map(|x| x.label), 8);
        assert!(counts.iter().all(|&c| (c as f64 - 500.0).abs() <= 50.0));
    }

    #[test]
    fn attribute_bits() {
        assert_eq!(attribute_count(2), 1);
        assert_eq!(attribute_count(8), 3);
        assert_eq!(attribute_count(9), 4);
    }
}
