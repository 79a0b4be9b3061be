//! Semi-discrete transport from a continuous measure onto a [`PointCloud`].
//!
//! The Brenier potential is the upper envelope `u(z) = max_i <y_i, z> + h_i`.
//! Its Laguerre cells `W_i = { z : i attains the max }` partition the source
//! support, and the transport map sends all of `W_i` to `y_i`. The offsets `h`
//! are fitted so that every cell carries the target weight `w_i`; cell masses
//! are estimated by Monte Carlo on samples of the source measure.
//!
//! Exact potential ties go to the lowest index everywhere in this module.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_measure::BaseMeasure;
use crate::cloud::{dot, PointCloud};
use crate::error::{check_dim, Error, Result};
use crate::rng::SeededRng;

/// Samples per reduction chunk. Fixed so that centroid sums do not depend on
/// the thread count.
pub const REDUCE_CHUNK: usize = 4096;

/// Scalar offsets `h` of the Brenier potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PotentialOffsets(Vec<f64>);

impl PotentialOffsets {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn new(h: Vec<f64>) -> Self {
        Self(h)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Subtracts the mean so that `Σ h_i = 0`.
    pub fn project(&mut self) {
        let mean = self.0.iter().sum::<f64>() / self.0.len() as f64;
        for h in &mut self.0 {
            *h -= mean;
        }
    }
}

/// Persisted form of a solve: `{"n", "h", "energy", "seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetsFile {
    pub n: usize,
    pub h: Vec<f64>,
    pub energy: f64,
    pub seed: u64,
}

/// Best cell for one source sample, the runner-up, and the potential gap
/// between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub cell: usize,
    pub runner_up: usize,
    pub margin: f64,
}

/// Monte Carlo cell masses and mass centres.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub volume: Vec<f64>,
    /// Row-major `n x d`; rows of empty cells are NaN.
    pub centroid: Vec<f64>,
    pub sample_count: Vec<usize>,
    pub total_samples: usize,
    dim: usize,
}

impl CellStats {
    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }

    pub fn is_cell_empty(&self, i: usize) -> bool {
        self.sample_count[i] == 0
    }

    /// Mass centre of cell `i`, `None` when no sample landed in it.
    pub fn centroid(&self, i: usize) -> Option<&[f64]> {
        (!self.is_cell_empty(i)).then(|| &self.centroid[i * self.dim..(i + 1) * self.dim])
    }

    /// Builds stats from raw counts and per-cell coordinate sums.
    pub fn from_sums(dim: usize, counts: Vec<usize>, sums: Vec<f64>) -> Self {
        let total: usize = counts.iter().sum();
        let volume = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let mut centroid = sums;
        for (i, &c) in counts.iter().enumerate() {
            let row = &mut centroid[i * dim..(i + 1) * dim];
            if c == 0 {
                row.fill(f64::NAN);
            } else {
                row.iter_mut().for_each(|v| *v /= c as f64);
            }
        }
        Self {
            volume,
            centroid,
            sample_count: counts,
            total_samples: total,
            dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub final_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub energy_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub mc_samples: usize,
    pub step_size: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub resample_each_iter: bool,
    pub log_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mc_samples: 100_000,
            step_size: 0.5,
            max_iters: 2000,
            tolerance: 1e-4,
            resample_each_iter: false,
            log_every: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mc_samples > 0
            && self.step_size > 0.0
            && self.step_size.is_finite()
            && self.max_iters > 0
            && self.tolerance > 0.0
            && self.log_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("solver settings must all be positive: {self:?}")))
        }
    }
}

fn check_offsets(cloud: &PointCloud, offsets: &PotentialOffsets) -> Result<()> {
    if offsets.len() != cloud.len() {
        return Err(Error::Config(format!(
            "{} offsets for {} target points",
            offsets.len(),
            cloud.len()
        )));
    }
    Ok(())
}

/// `max_i <y_i, z> + h_i` and its (lowest) maximizing index.
pub fn potential_value(cloud: &PointCloud, offsets: &PotentialOffsets, z: &[f64]) -> Result<(f64, usize)> {
    check_dim(cloud.dim(), z.len())?;
    check_offsets(cloud, offsets)?;
    let a = assign_one(cloud, offsets.as_slice(), z);
    let value = dot(cloud.point(a.cell), z) + offsets.as_slice()[a.cell];
    Ok((value, a.cell))
}

#[inline]
pub(crate) fn assign_one(cloud: &PointCloud, h: &[f64], z: &[f64]) -> Assignment {
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut second = (f64::NEG_INFINITY, 0usize);
    for (i, (y, hi)) in cloud.points_flat().chunks_exact(cloud.dim()).zip(h).enumerate() {
        let v = dot(y, z) + hi;
        if v > best.0 {
            second = best;
            best = (v, i);
        } else if v > second.0 {
            second = (v, i);
        }
    }
    Assignment {
        cell: best.1,
        runner_up: second.1,
        margin: best.0 - second.0,
    }
}

/// Assigns each sample to its Laguerre cell. Output order matches input.
pub fn assign(cloud: &PointCloud, offsets: &PotentialOffsets, samples: &[Vec<f64>]) -> Result<Vec<Assignment>> {
    check_offsets(cloud, offsets)?;
    if samples.is_empty() {
        return Err(Error::Config("assign needs at least one sample".into()));
    }
    for s in samples {
        check_dim(cloud.dim(), s.len())?;
    }
    Ok(samples
        .par_iter()
        .map(|z| assign_one(cloud, offsets.as_slice(), z))
        .collect())
}

/// [`assign`] over a flat row-major sample buffer.
pub fn assign_flat(cloud: &PointCloud, offsets: &PotentialOffsets, samples: &[f64]) -> Result<Vec<Assignment>> {
    check_offsets(cloud, offsets)?;
    let d = cloud.dim();
    if samples.is_empty() || !samples.len().is_multiple_of(d) {
        return Err(Error::Shape {
            expected: d,
            got: samples.len() % d,
        });
    }
    Ok(samples
        .par_chunks(d)
        .map(|z| assign_one(cloud, offsets.as_slice(), z))
        .collect())
}

fn cell_counts(cloud: &PointCloud, h: &[f64], pool: &[f64]) -> Vec<usize> {
    let n = cloud.len();
    let d = cloud.dim();
    pool.par_chunks(REDUCE_CHUNK * d)
        .map(|chunk| {
            let mut counts = vec![0usize; n];
            for z in chunk.chunks_exact(d) {
                counts[assign_one(cloud, h, z).cell] += 1;
            }
            counts
        })
        .reduce(
            || vec![0usize; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Cell statistics of a fixed sample pool (flat, row-major).
pub fn stats_from_pool(cloud: &PointCloud, offsets: &PotentialOffsets, pool: &[f64]) -> Result<CellStats> {
    check_offsets(cloud, offsets)?;
    let n = cloud.len();
    let d = cloud.dim();
    if pool.is_empty() || !pool.len().is_multiple_of(d) {
        return Err(Error::Config("sample pool is empty or ragged".into()));
    }
    let h = offsets.as_slice();
    // Per-chunk partials collected in order, then folded sequentially.
    let partials: Vec<(Vec<usize>, Vec<f64>)> = pool
        .par_chunks(REDUCE_CHUNK * d)
        .map(|chunk| {
            let mut counts = vec![0usize; n];
            let mut sums = vec![0.0; n * d];
            for z in chunk.chunks_exact(d) {
                let c = assign_one(cloud, h, z).cell;
                counts[c] += 1;
                sums[c * d..(c + 1) * d].iter_mut().zip(z).for_each(|(s, v)| *s += v);
            }
            (counts, sums)
        })
        .collect();
    let mut counts = vec![0usize; n];
    let mut sums = vec![0.0; n * d];
    for (c, s) in partials {
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    Ok(CellStats::from_sums(d, counts, sums))
}

/// Monte Carlo cell masses and centroids from `m` fresh draws of `measure`.
pub fn estimate_cells(
    cloud: &PointCloud,
    offsets: &PotentialOffsets,
    measure: &BaseMeasure,
    rng: &SeededRng,
    m: usize,
) -> Result<CellStats> {
    check_dim(cloud.dim(), measure.dim())?;
    if m < cloud.len() {
        return Err(Error::Config(format!(
            "{m} Monte Carlo samples cannot cover {} cells",
            cloud.len()
        )));
    }
    if m < 100 * cloud.len() {
        warn!("only {m} Monte Carlo samples for {} cells; estimates will be noisy", cloud.len());
    }
    let pool = measure.sample_flat(rng, m)?;
    stats_from_pool(cloud, offsets, &pool)
}

/// `Σ_i (μ̂(W_i) − w_i)²`.
pub fn energy(stats: &CellStats, cloud: &PointCloud) -> Result<f64> {
    if stats.len() != cloud.len() {
        return Err(Error::Config(format!(
            "stats for {} cells, cloud has {}",
            stats.len(),
            cloud.len()
        )));
    }
    Ok(volume_energy(&stats.volume, cloud.weights()))
}

fn volume_energy(volume: &[f64], weights: &[f64]) -> f64 {
    volume.iter().zip(weights).map(|(v, w)| (v - w) * (v - w)).sum()
}

/// The Monte Carlo pool the solver uses at iteration `iter`. With a fixed pool
/// every iteration shares pool 0, which is also the pool downstream stages
/// use for centroids.
pub fn solver_pool_rng(rng: &SeededRng, iter: usize) -> SeededRng {
    rng.derive(iter as u64)
}

/// Fits `h` by ascent on the dual direction `h_i += η (w_i − μ̂(W_i))`, with a
/// mean-zero projection after every step. Stops once the squared volume
/// discrepancy is at most the tolerance. Without convergence the best offsets
/// seen are returned with `converged = false`.
pub fn optimize_offsets(
    cloud: &PointCloud,
    measure: &BaseMeasure,
    rng: &SeededRng,
    config: &SolverConfig,
) -> Result<(PotentialOffsets, SolveReport)> {
    config.validate()?;
    measure.validate()?;
    check_dim(cloud.dim(), measure.dim())?;
    let n = cloud.len();
    let m = config.mc_samples;
    if m < n {
        return Err(Error::Config(format!("{m} Monte Carlo samples cannot cover {n} cells")));
    }
    if m < 100 * n {
        warn!("only {m} Monte Carlo samples for {n} cells; volume estimates will be noisy");
    }
    let weights = cloud.weights();
    let fixed_pool = if config.resample_each_iter {
        None
    } else {
        Some(measure.sample_flat(&solver_pool_rng(rng, 0), m)?)
    };

    let mut h = PotentialOffsets::zeros(n);
    let mut best = (f64::INFINITY, h.clone());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_energy = f64::INFINITY;

    for iter in 0..config.max_iters {
        let fresh;
        let pool = match &fixed_pool {
            Some(p) => p.as_slice(),
            None => {
                fresh = measure.sample_flat(&solver_pool_rng(rng, iter), m)?;
                fresh.as_slice()
            }
        };
        let counts = cell_counts(cloud, h.as_slice(), pool);
        let volume: Vec<f64> = counts.iter().map(|&c| c as f64 / m as f64).collect();
        let e = volume_energy(&volume, weights);
        iterations = iter + 1;
        last_energy = e;
        if e < best.0 {
            best = (e, h.clone());
        }
        if iter % config.log_every == 0 {
            debug!("iter {iter}: energy {e:.3e}");
            trace.push(e);
        }
        if e <= config.tolerance {
            converged = true;
            break;
        }
        for ((hi, w), v) in h.0.iter_mut().zip(weights).zip(&volume) {
            *hi += config.step_size * (w - v);
        }
        h.project();
    }

    let (final_energy, offsets) = if converged { (last_energy, h) } else { best };
    if trace.last() != Some(&final_energy) {
        trace.push(final_energy);
    }
    Ok((
        offsets,
        SolveReport {
            final_energy,
            iterations,
            converged,
            energy_trace: trace,
        },
    ))
}

/// `T(z) = y_{i*}`, the gradient of the envelope away from ties.
pub fn transport_point(cloud: &PointCloud, offsets: &PotentialOffsets, z: &[f64]) -> Result<Vec<f64>> {
    let (_, i) = potential_value(cloud, offsets, z)?;
    Ok(cloud.point(i).to_vec())
}
