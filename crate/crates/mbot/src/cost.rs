//! Ground costs: absolute difference (1D), Euclidean and squared Euclidean,
//! each with an analytic gradient in the second argument.

use crate::cloud::DiscreteDistribution;
use crate::error::{OtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// |x - y| on the line. Only valid for 1-dimensional supports.
    Abs,
    Euclidean,
    SqEuclidean,
}

impl CostKind {
    pub fn name(&self) -> &'static str {
        match self {
            CostKind::Abs => "abs",
            CostKind::Euclidean => "euclidean",
            CostKind::SqEuclidean => "sq_euclidean",
        }
    }

    pub fn parse(s: &str) -> Option<CostKind> {
        match s {
            "abs" => Some(CostKind::Abs),
            "euclidean" => Some(CostKind::Euclidean),
            "sq_euclidean" | "sq-euclidean" | "sqeuclidean" => Some(CostKind::SqEuclidean),
            _ => None,
        }
    }
}

/// A ground cost c(x, y): nonnegative, symmetric, zero on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostSpec {
    pub kind: CostKind,
}

impl CostSpec {
    pub fn abs() -> Self {
        CostSpec { kind: CostKind::Abs }
    }

    pub fn euclidean() -> Self {
        CostSpec { kind: CostKind::Euclidean }
    }

    pub fn sq_euclidean() -> Self {
        CostSpec { kind: CostKind::SqEuclidean }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.kind == CostKind::Abs && dim != 1 {
            return Err(OtError::CostRequires1d(dim));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.kind {
            CostKind::Abs => (x[0] - y[0]).abs(),
            CostKind::Euclidean => sq_dist(x, y).sqrt(),
            CostKind::SqEuclidean => sq_dist(x, y),
        }
    }

    /// Gradient of c(x, y) in y. The Euclidean and absolute costs are not
    /// differentiable at coincident points; the subgradient 0 is used there.
    pub fn grad_in_target(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self.kind {
            CostKind::Abs => {
                let d = y[0] - x[0];
                out[0] = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            CostKind::Euclidean => {
                let norm = sq_dist(x, y).sqrt();
                if norm == 0.0 {
                    out.fill(0.0);
                } else {
                    for (o, (yc, xc)) in out.iter_mut().zip(y.iter().zip(x)) {
                        *o = (yc - xc) / norm;
                    }
                }
            }
            CostKind::SqEuclidean => {
                for (o, (yc, xc)) in out.iter_mut().zip(y.iter().zip(x)) {
                    *o = 2.0 * (yc - xc);
                }
            }
        }
    }

    /// Upper bound on the cost over supports whose union has the given
    /// diameter.
    pub fn bound_for_diameter(&self, diam: f64) -> f64 {
        match self.kind {
            CostKind::Abs | CostKind::Euclidean => diam,
            CostKind::SqEuclidean => diam * diam,
        }
    }

    /// Dense row-major cost matrix between two supports.
    pub fn matrix(&self, a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<Vec<f64>> {
        if a.dim() != b.dim() {
            return Err(OtError::DimensionMismatch(a.dim(), b.dim()));
        }
        self.check_dim(a.dim())?;
        let mut out = Vec::with_capacity(a.n() * b.n());
        for x in a.iter_points() {
            for y in b.iter_points() {
                out.push(self.evaluate(x, y));
            }
        }
        Ok(out)
    }

    /// Cost matrix restricted to index batches of two supports.
    pub fn matrix_restricted(
        &self,
        a: &DiscreteDistribution,
        a_idx: &[usize],
        b: &DiscreteDistribution,
        b_idx: &[usize],
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(a_idx.len() * b_idx.len());
        for &i in a_idx {
            let x = a.point(i);
            for &j in b_idx {
                out.push(self.evaluate(x, b.point(j)));
            }
        }
        out
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
