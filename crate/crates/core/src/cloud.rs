use std::path::Path;

use crate::error::{Error, Result};
use crate::io::PointTable;

/// Tolerance on `Σ w_i = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Two targets closer than this are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// The discrete target measure: `n >= 2` distinct points with positive
/// weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let table = PointTable::new(dim, points, weights)?;
        Self::from_table(table)
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        Self::from_table(PointTable::uniform(dim, points)?)
    }

    pub fn from_rows(rows: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let t = PointTable::from_rows(rows)?;
        Self::new(t.dim, t.points, weights)
    }

    pub fn from_table(table: PointTable) -> Result<Self> {
        let PointTable { dim, points, weights } = table;
        let n = weights.len();
        if n < 2 {
            return Err(Error::Cloud(format!("need at least 2 target points, got {n}")));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::Cloud(format!("non-finite coordinate in point {}", i / dim)));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Cloud(format!("weight {i} must be positive, got {}", weights[i])));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Cloud(format!("weights sum to {total}, expected 1")));
        }
        let cloud = Self { dim, points, weights };
        cloud.check_duplicates()?;
        Ok(cloud)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_table(PointTable::read(path)?)
    }

    fn check_duplicates(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                if dist(self.point(i), self.point(j)) <= DUPLICATE_TOL {
                    return Err(Error::DuplicatePoints { first: i, second: j });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_table(&self) -> PointTable {
        PointTable {
            dim: self.dim,
            points: self.points.clone(),
            weights: self.weights.clone(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_with_indices() {
        let err = PointCloud::uniform(2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DuplicatePoints { first: 0, second: 2 }));
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(PointCloud::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(PointCloud::new(1, vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(PointCloud::new(1, vec![0.0], vec![1.0]).is_err());
        assert!(PointCloud::new(1, vec![0.0, f64::NAN], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn accessors() {
        let c = PointCloud::new(2, vec![1.0, 0.0, -1.0, 0.0], vec![0.7, 0.3]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.point(1), &[-1.0, 0.0]);
        assert_eq!(c.weights(), &[0.7, 0.3]);
    }
}
