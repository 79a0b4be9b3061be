//! Candidate transport boundaries and their singularity scores.
//!
//! Cells `i` and `j` meet on the hyperplane `<a, z> + b = 0` with
//! `a = y_i − y_j` and `b = h_i − h_j`. A boundary is scored by the angle
//! between its two targets; the highest-scoring fraction is kept.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{dot, norm, PointCloud};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::sdot::{Assignment, PotentialOffsets};

/// Slack on `ρ · |candidates|` before taking the ceiling, so that products
/// like `0.1 * 30` that land a few ulps above an integer are not rounded up.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub i: usize,
    pub j: usize,
    pub score: f64,
    pub a: Vec<f64>,
    pub b: f64,
    #[serde(rename = "adjacent")]
    pub empirically_adjacent: bool,
}

impl BoundaryRecord {
    /// Signed potential gap `<a, z> + b` between cells `i` and `j` at `z`.
    pub fn gap(&self, z: &[f64]) -> f64 {
        dot(&self.a, z) + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// Every pair `i < j`.
    AllPairs,
    /// Only pairs seen as (best, runner-up) for some Monte Carlo sample.
    Empirical,
}

impl std::str::FromStr for AdjacencyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allpairs" => Ok(AdjacencyMode::AllPairs),
            "empirical" => Ok(AdjacencyMode::Empirical),
            other => Err(Error::Config(format!("unknown adjacency mode {other:?}"))),
        }
    }
}

/// Top-scored boundaries, score-descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSet {
    pub records: Vec<BoundaryRecord>,
    pub fraction: f64,
}

/// Angle between `u` and `v`, in `[0, π]`.
pub fn boundary_score(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu = norm(u);
    if nu == 0.0 {
        return Err(Error::ZeroNorm { index: 0 });
    }
    let nv = norm(v);
    if nv == 0.0 {
        return Err(Error::ZeroNorm { index: 1 });
    }
    Ok(angle(u, v, nu, nv))
}

#[inline]
fn angle(u: &[f64], v: &[f64], nu: f64, nv: f64) -> f64 {
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// Builds the candidate boundary set. `assignments` must come from the same
/// cloud and offsets; it decides `empirically_adjacent` in both modes.
pub fn candidate_boundaries(
    cloud: &PointCloud,
    offsets: &PotentialOffsets,
    assignments: &[Assignment],
    mode: AdjacencyMode,
) -> Result<Vec<BoundaryRecord>> {
    let n = cloud.len();
    if offsets.len() != n {
        return Err(Error::Config(format!("{} offsets for {n} target points", offsets.len())));
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(cloud.point(i))).collect();
    if let Some(index) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNorm { index });
    }
    let adjacent: BTreeSet<(usize, usize)> = assignments
        .iter()
        .filter(|a| a.cell != a.runner_up)
        .map(|a| (a.cell.min(a.runner_up), a.cell.max(a.runner_up)))
        .collect();
    let pairs: Vec<(usize, usize)> = match mode {
        AdjacencyMode::AllPairs => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        AdjacencyMode::Empirical => adjacent.iter().copied().collect(),
    };
    let h = offsets.as_slice();
    Ok(pairs
        .par_iter()
        .map(|&(i, j)| {
            let (yi, yj) = (cloud.point(i), cloud.point(j));
            BoundaryRecord {
                i,
                j,
                score: angle(yi, yj, norms[i], norms[j]),
                a: yi.iter().zip(yj).map(|(p, q)| p - q).collect(),
                b: h[i] - h[j],
                empirically_adjacent: adjacent.contains(&(i, j)),
            }
        })
        .collect())
}

/// Score descending, then `(i, j)` ascending.
fn rank(a: &BoundaryRecord, b: &BoundaryRecord) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| (a.i, a.j).cmp(&(b.i, b.j)))
}

/// Number of records kept for fraction `rho`.
pub fn selection_count(total: usize, rho: f64) -> usize {
    ((rho * total as f64 - CEIL_SLACK).ceil() as usize).clamp(1, total)
}

/// Keeps the top `ceil(ρ · |candidates|)` boundaries by score.
pub fn select_singular(candidates: &[BoundaryRecord], rho: f64) -> Result<SingularSet> {
    if candidates.is_empty() {
        return Err(Error::Selection("no candidate boundaries".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Selection(format!("fraction must lie in (0, 1], got {rho}")));
    }
    let mut records = candidates.to_vec();
    records.sort_by(rank);
    records.truncate(selection_count(candidates.len(), rho));
    Ok(SingularSet { records, fraction: rho })
}

/// Uniform draw of `count` boundaries without replacement.
pub fn random_boundaries(candidates: &[BoundaryRecord], count: usize, rng: &SeededRng) -> Result<Vec<BoundaryRecord>> {
    if count > candidates.len() {
        return Err(Error::Selection(format!(
            "cannot draw {count} boundaries from {}",
            candidates.len()
        )));
    }
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    let mut g = rng.generator();
    let (picked, _) = idx.partial_shuffle(&mut g, count);
    Ok(picked.iter().map(|&k| candidates[k].clone()).collect())
}
