//! Discrete distributions: `n` support points in `R^d` with uniform
//! weights `1/n`.

use crate::error::{OtError, Result};

/// An empirical distribution with uniform weights. Points are stored
/// row-major; all points share the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    points: Vec<f64>,
    n: usize,
    dim: usize,
}

impl DiscreteDistribution {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(OtError::InvalidParameter(
                "a distribution needs at least one support point".into(),
            ));
        }
        let dim = points[0].len();
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(OtError::DimensionMismatch(dim, p.len()));
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(flat, dim)
    }

    /// Build from a row-major coordinate buffer.
    pub fn from_flat(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(OtError::InvalidParameter(format!(
                "flat buffer of length {} is not a multiple of dim {}",
                points.len(),
                dim
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(OtError::InvalidParameter(
                "support coordinates must be finite".into(),
            ));
        }
        let n = points.len() / dim;
        Ok(DiscreteDistribution { points, n, dim })
    }

    pub fn from_1d(xs: Vec<f64>) -> Result<Self> {
        Self::from_flat(xs, 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The uniform weight `1/n` carried by every support point.
    pub fn weight(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// The sub-distribution supported on the given indices (uniform weights
    /// `1/m` on the batch).
    pub fn restrict(&self, indices: &[usize]) -> DiscreteDistribution {
        let mut flat = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            flat.extend_from_slice(self.point(i));
        }
        DiscreteDistribution {
            points: flat,
            n: indices.len(),
            dim: self.dim,
        }
    }

    /// Diameter of the support: exact pairwise maximum up to 2000 points,
    /// bounding-box diagonal above that (conservative).
    pub fn diameter(&self) -> f64 {
        diameter_of(&[self])
    }
}

/// Diameter of the union of several supports, with the same exact/bounding-box
/// switch as [`DiscreteDistribution::diameter`].
pub fn diameter_of(dists: &[&DiscreteDistribution]) -> f64 {
    let total: usize = dists.iter().map(|d| d.n()).sum();
    let dim = dists[0].dim();
    if total <= 2000 {
        let points: Vec<&[f64]> = dists.iter().flat_map(|d| d.iter_points()).collect();
        let mut best = 0.0f64;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d2: f64 = points[i]
                    .iter()
                    .zip(points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.max(d2);
            }
        }
        best.sqrt()
    } else {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for d in dists {
            for p in d.iter_points() {
                for (c, &v) in p.iter().enumerate() {
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }
}
