//! Source measures the transport partition is built over.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{unit_f64, unit_f64_open_low, SeededRng};

/// Continuous source measure.
///
/// Sample `k` of a stream always occupies the same words of the generator,
/// so `sample(m)` is a prefix of `sample(m')` for `m' >= m`:
/// - `UniformBox`: one `u64` per coordinate, `lo + u * (hi - lo)`, `u` in `[0, 1)`.
/// - `Gaussian`: two `u64` per coordinate, Box-Muller cosine branch.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseMeasure {
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Gaussian { mean: Vec<f64>, stddev: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Uniform,
    Gaussian,
}

const SAMPLE_CHUNK: usize = 4096;

impl BaseMeasure {
    pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let m = BaseMeasure::UniformBox { lo, hi };
        m.validate()?;
        Ok(m)
    }

    pub fn gaussian(mean: Vec<f64>, stddev: f64) -> Result<Self> {
        let m = BaseMeasure::Gaussian { mean, stddev };
        m.validate()?;
        Ok(m)
    }

    /// Axis-aligned bounding box of `points` (row-major, `dim` columns),
    /// expanded by `margin` times the extent on each side.
    ///
    /// An axis with zero extent is centred on its value with half-width
    /// `(0.5 + margin)` times the largest extent over all axes (or 1.0 when
    /// every axis is degenerate).
    pub fn bounding_box(points: &[f64], dim: usize, margin: f64) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::Config("bounding box needs a non-empty point set".into()));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::Config(format!("box margin must be >= 0, got {margin}")));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in points.chunks_exact(dim) {
            for k in 0..dim {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
        let widest = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| h - l)
            .fold(0.0_f64, f64::max);
        let fallback = if widest > 0.0 { widest } else { 1.0 };
        for k in 0..dim {
            let extent = hi[k] - lo[k];
            let pad = if extent > 0.0 {
                margin * extent
            } else {
                (0.5 + margin) * fallback
            };
            lo[k] -= pad;
            hi[k] += pad;
        }
        Self::uniform_box(lo, hi)
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseMeasure::UniformBox { lo, .. } => lo.len(),
            BaseMeasure::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseMeasure::UniformBox { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::Config(format!(
                        "box bounds must be non-empty and equal length ({} vs {})",
                        lo.len(),
                        hi.len()
                    )));
                }
                for (k, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if !(l.is_finite() && h.is_finite() && l < h) {
                        return Err(Error::Config(format!(
                            "box axis {k}: need lo < hi, got [{l}, {h}]"
                        )));
                    }
                }
            }
            BaseMeasure::Gaussian { mean, stddev } => {
                if mean.is_empty() || mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Config("gaussian mean must be a finite non-empty vector".into()));
                }
                if !(*stddev > 0.0 && stddev.is_finite()) {
                    return Err(Error::Config(format!("gaussian stddev must be > 0, got {stddev}")));
                }
            }
        }
        Ok(())
    }

    fn words_per_sample(&self) -> u128 {
        match self {
            BaseMeasure::UniformBox { lo, .. } => 2 * lo.len() as u128,
            BaseMeasure::Gaussian { mean, .. } => 4 * mean.len() as u128,
        }
    }

    /// Writes samples `start..start + out.len() / dim` of the stream into `out`.
    pub fn sample_range_into(&self, rng: &SeededRng, start: usize, out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(out.len() % d, 0);
        let mut g = rng.generator_at(start as u128 * self.words_per_sample());
        for row in out.chunks_exact_mut(d) {
            self.draw_one(&mut g, row);
        }
    }

    /// Draws `count` points as a flat row-major buffer. Chunks are filled in
    /// parallel; the result does not depend on the thread count.
    pub fn sample_flat(&self, rng: &SeededRng, count: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if count == 0 {
            return Err(Error::Config("sample count must be >= 1".into()));
        }
        let d = self.dim();
        let mut out = vec![0.0; count * d];
        out.par_chunks_mut(SAMPLE_CHUNK * d)
            .enumerate()
            .for_each(|(c, chunk)| self.sample_range_into(rng, c * SAMPLE_CHUNK, chunk));
        Ok(out)
    }

    /// Draws `count` points.
    pub fn sample(&self, rng: &SeededRng, count: usize) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        Ok(self
            .sample_flat(rng, count)?
            .chunks_exact(d)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Sequential single draws from a running generator; used for rejection
    /// sampling where the number of draws is not known in advance.
    pub fn draw_one(&self, g: &mut impl rand::RngCore, out: &mut [f64]) {
        match self {
            BaseMeasure::UniformBox { lo, hi } => {
                for k in 0..out.len() {
                    let u = unit_f64(g);
                    out[k] = (lo[k] + u * (hi[k] - lo[k])).clamp(lo[k], hi[k]);
                }
            }
            BaseMeasure::Gaussian { mean, stddev } => {
                for k in 0..out.len() {
                    let u1 = unit_f64_open_low(g);
                    let u2 = unit_f64(g);
                    let r = (-2.0 * u1.ln()).sqrt();
                    out[k] = mean[k] + stddev * r * (std::f64::consts::TAU * u2).cos();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> BaseMeasure {
        BaseMeasure::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn same_seed_same_points() {
        let rng = SeededRng::new(7);
        assert_eq!(square().sample(&rng, 3).unwrap(), square().sample(&rng, 3).unwrap());
    }

    #[test]
    fn uniform_stays_in_box() {
        let pts = square().sample_flat(&SeededRng::new(11), 100_000).unwrap();
        assert!(pts.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn gaussian_mean_within_clt_band() {
        let g = BaseMeasure::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let m = 100_000;
        let pts = g.sample_flat(&SeededRng::new(3), m).unwrap();
        let band = 4.0 / (m as f64).sqrt();
        for k in 0..2 {
            let mean: f64 = pts.iter().skip(k).step_by(2).sum::<f64>() / m as f64;
            assert!(mean.abs() < band, "axis {k} mean {mean} outside ±{band}");
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(BaseMeasure::uniform_box(vec![1.0], vec![1.0]).is_err());
        assert!(BaseMeasure::uniform_box(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(BaseMeasure::gaussian(vec![0.0], 0.0).is_err());
        assert!(BaseMeasure::gaussian(vec![0.0], -1.0).is_err());
        assert!(square().sample(&SeededRng::new(0), 0).is_err());
    }

    #[test]
    fn bounding_box_expands_each_side() {
        let pts = [0.0, 0.0, 2.0, 1.0];
        let BaseMeasure::UniformBox { lo, hi } = BaseMeasure::bounding_box(&pts, 2, 0.1).unwrap() else {
            unreachable!()
        };
        assert!((lo[0] + 0.2).abs() < 1e-15 && (hi[0] - 2.2).abs() < 1e-15);
        assert!((lo[1] + 0.1).abs() < 1e-15 && (hi[1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn bounding_box_degenerate_axis_gets_width() {
        let pts = [1.0, 0.0, -1.0, 0.0];
        let m = BaseMeasure::bounding_box(&pts, 2, 0.1).unwrap();
        let BaseMeasure::UniformBox { lo, hi } = m else { unreachable!() };
        assert!(lo[1] < 0.0 && hi[1] > 0.0);
    }

    #[test]
    fn gaussian_variance_within_band() {
        let g = BaseMeasure::gaussian(vec![1.0], 2.0).unwrap();
        let m = 40_000;
        let pts = g.sample_flat(&SeededRng::new(5), m).unwrap();
        let mean = pts.iter().sum::<f64>() / m as f64;
        let var = pts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        // var of the sample variance for a normal is 2σ⁴/(m-1)
        let band = 4.0 * (2.0 * 16.0 / (m as f64 - 1.0)).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * 2.0 / (m as f64).sqrt());
        assert!((var - 4.0).abs() < band, "var {var}");
    }
}
