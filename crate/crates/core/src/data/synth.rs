//! Synthetic segmentation data: faint foreground shapes on a textured, noisy
//! background.
//!
//! Difficulty comes from three knobs: the foreground/background `contrast`,
//! additive Gaussian `noise`, and an optional low-frequency background
//! `texture` whose amplitude is comparable to the contrast. Defaults are
//! chosen so a desk-scale network segments the test split imperfectly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::Tensor;

/// Accepted foreground fraction per sample.
pub const MIN_FOREGROUND: f64 = 0.03;
pub const MAX_FOREGROUND: f64 = 0.60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// Unions of one to three rotated ellipses.
    Ellipses,
    /// Thresholded sums of Gaussian bumps: irregular, lobed outlines.
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Total samples, split into train and test.
    pub count: usize,
    pub image_size: usize,
    pub shapes: ShapeFamily,
    pub contrast: f64,
    pub noise: f64,
    pub texture: bool,
    /// Fraction of `count` assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 320,
            image_size: 64,
            shapes: ShapeFamily::Ellipses,
            contrast: 0.15,
            noise: 0.2,
            texture: true,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::Config(format!("image_size {} is below 8", self.image_size)));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::Config(format!("contrast {} outside (0, 1]", self.contrast)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be a finite non-negative std", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!(
                "train_fraction {} outside [0, 1]",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        (self.count as f64 * self.train_fraction).round() as usize
    }
}

/// Generated train/test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generates the dataset. Sample `i` draws from its own ChaCha stream, so
/// output is bit-reproducible from `seed`. Images are quantised to 8 bits so
/// a PGM round trip is lossless.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let n_train = cfg.train_count();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(cfg.count - n_train);
    for i in 0..cfg.count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let (image, mask) = sample_pair(cfg, &mut rng);
        if i < n_train {
            train.push(Sample {
                id: format!("train-{i:05}"),
                image,
                mask,
            });
        } else {
            test.push(Sample {
                id: format!("test-{:05}", i - n_train),
                image,
                mask,
            });
        }
    }
    Ok(SynthDataset { train, test })
}

fn sample_pair(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Tensor, LabelMap) {
    let n = cfg.image_size;
    let mask = loop {
        let m = match cfg.shapes {
            ShapeFamily::Ellipses => ellipse_mask(n, rng),
            ShapeFamily::Blobs => blob_mask(n, rng),
        };
        let frac = m.fraction(1);
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            break m;
        }
    };

    let background = rng.random_range(0.3..0.5);
    let texture = if cfg.texture {
        (0..3)
            .map(|_| {
                let freq = rng.random_range(1.0..4.0) * 2.0 * PI / n as f64;
                let angle: f64 = rng.random_range(0.0..PI);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = cfg.contrast * rng.random_range(0.2..0.5);
                (freq * angle.cos(), freq * angle.sin(), phase, amp)
            })
            .collect()
    } else {
        Vec::new()
    };
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid std");

    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let mut v = background;
            if mask.get(y, x) == 1 {
                v += cfg.contrast;
            }
            for &(fx, fy, phase, amp) in &texture {
                v += amp * (fx * x as f64 + fy * y as f64 + phase).sin();
            }
            if cfg.noise > 0.0 {
                v += noise.sample(rng);
            }
            data.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }
    (Tensor::from_parts(vec![1, n, n], data), mask)
}

fn ellipse_mask(n: usize, rng: &mut ChaCha8Rng) -> LabelMap {
    let count = rng.random_range(1..=3);
    let nf = n as f64;
    let shapes: Vec<_> = (0..count)
        .map(|_| {
            let a = rng.random_range(0.08..0.28) * nf;
            let b = rng.random_range(0.08..0.28) * nf;
            let margin = a.max(b) * 0.5;
            let cx = rng.random_range(margin..nf - margin);
            let cy = rng.random_range(margin..nf - margin);
            let theta: f64 = rng.random_range(0.0..PI);
            (cx, cy, a, b, theta.cos(), theta.sin())
        })
        .collect();
    let labels = (0..n * n)
        .map(|p| {
            let (x, y) = ((p % n) as f64 + 0.5, (p / n) as f64 + 0.5);
            let inside = shapes.iter().any(|&(cx, cy, a, b, c, s)| {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            });
            u8::from(inside)
        })
        .collect();
    LabelMap::new(n, n, labels).expect("n*n labels")
}

fn blob_mask(n: usize, rng: &mut ChaCha8Rng) -> LabelMap {
    let nf = n as f64;
    let bumps: Vec<_> = (0..rng.random_range(3..=6))
        .map(|_| {
            let cx = rng.random_range(0.2..0.8) * nf;
            let cy = rng.random_range(0.2..0.8) * nf;
            let sigma = rng.random_range(0.06..0.14) * nf;
            (cx, cy, sigma)
        })
        .collect();
    let threshold = rng.random_range(0.4..0.7);
    let labels = (0..n * n)
        .map(|p| {
            let (x, y) = ((p % n) as f64 + 0.5, (p / n) as f64 + 0.5);
            let field: f64 = bumps
                .iter()
                .map(|&(cx, cy, s)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            u8::from(field >= threshold)
        })
        .collect();
    LabelMap::new(n, n, labels).expect("n*n labels")
}
