//! Synthetic 2D benchmark: Gaussian class blobs placed on a circle, with an
//! out-of-distribution ring around them.

use std::f64::consts::TAU;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{unit_f64, unit_f64_open_low, SeededRng};
use crate::trainer::LabeledSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub classes: usize,
    pub train_points: usize,
    pub test_points: usize,
    pub ood_points: usize,
    /// Distance of each blob center from the origin.
    pub blob_radius: f64,
    pub blob_stddev: f64,
    /// OOD points are uniform in angle with radius uniform in
    /// `[ring_inner, ring_outer]`.
    pub ring_inner: f64,
    pub ring_outer: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            train_points: 600,
            test_points: 300,
            ood_points: 300,
            blob_radius: 2.0,
            blob_stddev: 0.35,
            ring_inner: 3.5,
            ring_outer: 4.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub ood: Vec<Vec<f64>>,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("toy data needs >= 2 classes, got {}", self.classes)));
        }
        if self.train_points < self.classes || self.test_points == 0 || self.ood_points == 0 {
            return Err(Error::Config("toy train/test/ood point counts too small".into()));
        }
        let positive = [self.blob_radius, self.blob_stddev, self.ring_inner, self.ring_outer];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.ring_outer < self.ring_inner {
            return Err(Error::Config("toy geometry must be positive with ring_inner <= ring_outer".into()));
        }
        Ok(())
    }

    pub fn center(&self, class: usize) -> [f64; 2] {
        let angle = TAU * class as f64 / self.classes as f64;
        [self.blob_radius * angle.cos(), self.blob_radius * angle.sin()]
    }

    /// Points are split round-robin over classes.
    fn blobs(&self, count: usize, rng: &SeededRng) -> Result<LabeledSet> {
        let mut g = rng.generator();
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for k in 0..count {
            let class = k % self.classes;
            let c = self.center(class);
            let (gx, gy) = gaussian_pair(&mut g);
            inputs.push(vec![c[0] + self.blob_stddev * gx, c[1] + self.blob_stddev * gy]);
            labels.push(class);
        }
        LabeledSet::new(inputs, labels)
    }

    fn ring(&self, rng: &SeededRng) -> Vec<Vec<f64>> {
        let mut g = rng.generator();
        (0..self.ood_points)
            .map(|_| {
                let angle = TAU * unit_f64(&mut g);
                let r = self.ring_inner + (self.ring_outer - self.ring_inner) * unit_f64(&mut g);
                vec![r * angle.cos(), r * angle.sin()]
            })
            .collect()
    }

    pub fn generate(&self, rng: &SeededRng) -> Result<Dataset> {
        self.validate()?;
        Ok(Dataset {
            train: self.blobs(self.train_points, &rng.derive_label("toy-train"))?,
            test: self.blobs(self.test_points, &rng.derive_label("toy-test"))?,
            ood: self.ring(&rng.derive_label("toy-ood")),
        })
    }
}

fn gaussian_pair(g: &mut impl RngCore) -> (f64, f64) {
    let r = (-2.0 * unit_f64_open_low(g).ln()).sqrt();
    let t = TAU * unit_f64(g);
    (r * t.cos(), r * t.sin())
}
