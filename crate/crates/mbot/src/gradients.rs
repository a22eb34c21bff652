//! Position gradients of the entropic losses and the minibatch gradient
//! flow.
//!
//! Gradients are taken by the envelope route: the coupling returned by a
//! converged Sinkhorn solve is held fixed and the cost term is
//! differentiated through it, `grad(y_j) = sum_i P_ij grad_y c(x_i, y_j)`.
//! The exact loss is excluded (no usable derivative), so minibatch
//! gradients are defined for the entropic losses only.

use rayon::prelude::*;

use crate::cloud::DiscreteDistribution;
use crate::cost::{CostKind, CostSpec};
use crate::error::{OtError, Result};
use crate::minibatch::{sample_pair_asym, LossKind, MinibatchConfig};
use crate::rng::child_seed;
use crate::sinkhorn::{sinkhorn_on_cost, SinkhornParams, SinkhornResult};

/// Per-point gradient vectors with the same indexing as the distribution
/// whose points move. Points absent from every sampled batch keep exactly
/// zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GradField {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GradField {
    pub fn zeros(n: usize, dim: usize) -> Self {
        GradField { n, dim, data: vec![0.0; n * dim] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn add_scaled(&mut self, i: usize, v: &[f64], scale: f64) {
        let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
        for (r, &x) in row.iter_mut().zip(v) {
            *r += scale * x;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= s);
        self
    }
}

/// A position gradient together with the convergence status of the solves
/// behind it; a stale (non-converged) coupling still yields a gradient,
/// flagged here.
#[derive(Debug, Clone)]
pub struct PositionGradient {
    pub field: GradField,
    pub converged: bool,
}

fn check_differentiable_cost(cost: &CostSpec) -> Result<()> {
    if cost.kind == CostKind::Abs {
        return Err(OtError::InvalidParameter(
            "the abs cost has no usable position gradient; use euclidean or sq_euclidean".into(),
        ));
    }
    Ok(())
}

/// Gradient of the entropic loss in the positions of the moving (target)
/// cloud, with the coupling held fixed at the converged solution.
pub fn grad_entropic_positions(
    a_fixed: &DiscreteDistribution,
    b_moving: &DiscreteDistribution,
    cost: &CostSpec,
    params: &SinkhornParams,
) -> Result<PositionGradient> {
    check_differentiable_cost(cost)?;
    let res = crate::sinkhorn::sinkhorn(a_fixed, b_moving, cost, params)?;
    let field = cross_term_grad(a_fixed, b_moving, cost, &res);
    Ok(PositionGradient { field, converged: res.converged })
}

fn cross_term_grad(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
    res: &SinkhornResult,
) -> GradField {
    let mut field = GradField::zeros(b.n(), b.dim());
    let mut g = vec![0.0; b.dim()];
    for j in 0..b.n() {
        let y = b.point(j);
        for i in 0..a.n() {
            let p = res.plan.get(i, j);
            if p != 0.0 {
                cost.grad_in_target(a.point(i), y, &mut g);
                field.add_scaled(j, &g, p);
            }
        }
    }
    field
}

/// Gradient in the moving points of the self term `W_eps(b, b)`, which
/// sees the points through both marginals.
fn self_term_grad(b: &DiscreteDistribution, cost: &CostSpec, res: &SinkhornResult) -> GradField {
    let mut field = GradField::zeros(b.n(), b.dim());
    let mut g = vec![0.0; b.dim()];
    for j in 0..b.n() {
        let y = b.point(j);
        for i in 0..b.n() {
            // as the target of row i
            let p = res.plan.get(i, j);
            if p != 0.0 {
                cost.grad_in_target(b.point(i), y, &mut g);
                field.add_scaled(j, &g, p);
            }
            // as the source of column i; for symmetric costs the gradient in
            // the first slot is the target gradient with arguments swapped
            let q = res.plan.get(j, i);
            if q != 0.0 {
                cost.grad_in_target(b.point(i), y, &mut g);
                field.add_scaled(j, &g, q);
            }
        }
    }
    field
}

/// Gradient of the debiased divergence in the moving points:
/// `grad W_eps(a, b) - 0.5 grad_y W_eps(b, b)` (the `a` self term is
/// constant in `y`).
pub fn grad_divergence_positions(
    a_fixed: &DiscreteDistribution,
    b_moving: &DiscreteDistribution,
    cost: &CostSpec,
    params: &SinkhornParams,
) -> Result<PositionGradient> {
    check_differentiable_cost(cost)?;
    let cross = crate::sinkhorn::sinkhorn(a_fixed, b_moving, cost, params)?;
    let self_b = crate::sinkhorn::sinkhorn(b_moving, b_moving, cost, params)?;
    let mut field = cross_term_grad(a_fixed, b_moving, cost, &cross);
    let self_field = self_term_grad(b_moving, cost, &self_b);
    for i in 0..field.n {
        let row: Vec<f64> = self_field.row(i).to_vec();
        field.add_scaled(i, &row, -0.5);
    }
    Ok(PositionGradient { field, converged: cross.converged && self_b.converged })
}

/// Minibatch gradient with its loss estimate (the per-draw values come
/// for free from the same solves).
#[derive(Debug, Clone)]
pub struct MinibatchGradient {
    pub field: GradField,
    /// Subsampled loss estimate over the same draws.
    pub value: f64,
    /// Draws whose Sinkhorn solve hit the iteration cap.
    pub stale_draws: u64,
}

struct DrawGrad {
    target_idx: Vec<usize>,
    grads: Vec<f64>,
    value: f64,
    converged: bool,
}

/// Average over `k` sampled batch pairs of the per-batch position
/// gradient, scattered into full-size rows. Rows of never-sampled points
/// stay exactly zero.
pub fn grad_minibatch(
    a_fixed: &DiscreteDistribution,
    b_moving: &DiscreteDistribution,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
) -> Result<MinibatchGradient> {
    check_differentiable_cost(cost)?;
    if cfg.loss == LossKind::W {
        return Err(OtError::NonDifferentiableLoss("W".into()));
    }
    cfg.validate(a_fixed.n(), b_moving.n())?;
    let draws: Vec<DrawGrad> = (0..cfg.k)
        .into_par_iter()
        .map(|t| -> Result<DrawGrad> {
            let pair = sample_pair_asym(cfg.seed, t, a_fixed.n(), b_moving.n(), cfg.m);
            batch_grad(a_fixed, b_moving, cost, cfg, &pair.source, &pair.target)
        })
        .collect::<Result<_>>()?;
    let mut field = GradField::zeros(b_moving.n(), b_moving.dim());
    let scale = 1.0 / cfg.k as f64;
    let mut value = 0.0;
    let mut stale = 0;
    let dim = b_moving.dim();
    for d in &draws {
        value += d.value;
        if !d.converged {
            stale += 1;
        }
        for (p, &j) in d.target_idx.iter().enumerate() {
            field.add_scaled(j, &d.grads[p * dim..(p + 1) * dim], scale);
        }
    }
    Ok(MinibatchGradient { field, value: value * scale, stale_draws: stale })
}

/// Gradient of one batch loss in the batch's target positions.
fn batch_grad(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
    ai: &[usize],
    bi: &[usize],
) -> Result<DrawGrad> {
    let m = ai.len();
    let dim = b.dim();
    let cross_cost = cost.matrix_restricted(a, ai, b, bi);
    let cross = sinkhorn_on_cost(&cross_cost, m, &cfg.sinkhorn)?;
    let mut grads = vec![0.0; m * dim];
    let mut g = vec![0.0; dim];
    let mut value = cross.value;
    let mut converged = cross.converged;
    for (q, &j) in bi.iter().enumerate() {
        let y = b.point(j);
        for (p, &i) in ai.iter().enumerate() {
            let pw = cross.plan.get(p, q);
            if pw != 0.0 {
                cost.grad_in_target(a.point(i), y, &mut g);
                for c in 0..dim {
                    grads[q * dim + c] += pw * g[c];
                }
            }
        }
    }
    if cfg.loss == LossKind::SEps {
        let self_b_cost = cost.matrix_restricted(b, bi, b, bi);
        let self_b = sinkhorn_on_cost(&self_b_cost, m, &cfg.sinkhorn)?;
        let self_a_cost = cost.matrix_restricted(a, ai, a, ai);
        let self_a = sinkhorn_on_cost(&self_a_cost, m, &cfg.sinkhorn)?;
        value = cross.value - 0.5 * (self_a.value + self_b.value);
        converged = converged && self_b.converged && self_a.converged;
        for (q, &j) in bi.iter().enumerate() {
            let y = b.point(j);
            for (p, &i) in bi.iter().enumerate() {
                let both = self_b.plan.get(p, q) + self_b.plan.get(q, p);
                if both != 0.0 {
                    cost.grad_in_target(b.point(i), y, &mut g);
                    for c in 0..dim {
                        grads[q * dim + c] -= 0.5 * both * g[c];
                    }
                }
            }
        }
    }
    Ok(DrawGrad { target_idx: bi.to_vec(), grads, value, converged })
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Euler step size. Zero is allowed (the trajectory stays put).
    pub step_size: f64,
    pub iters: usize,
    pub cfg: MinibatchConfig,
    /// A snapshot is recorded every this many steps (plus the final state).
    pub record_every: usize,
    /// Multiply the gradient by the batch size `m`, compensating the `1/m`
    /// batch weights. On by default; disable to ablate.
    pub bias_correction: bool,
}

impl FlowConfig {
    pub fn new(cfg: MinibatchConfig) -> Self {
        FlowConfig { step_size: 0.05, iters: 750, cfg, record_every: 50, bias_correction: true }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    /// `(step, flat row-major coordinates)` at recorded steps, starting
    /// with step 0.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// Subsampled loss at every step, evaluated before that step's move.
    pub loss_trace: Vec<f64>,
    pub final_points: DiscreteDistribution,
}

/// Euler integration of the minibatch descent field: fresh batch pairs are
/// drawn each step from a per-step substream, so the whole trajectory is a
/// pure function of the flow seed. Aborts when the loss exceeds ten times
/// its initial value.
pub fn gradient_flow(
    b0: &DiscreteDistribution,
    a_target: &DiscreteDistribution,
    cost: &CostSpec,
    fc: &FlowConfig,
) -> Result<FlowTrajectory> {
    if fc.step_size < 0.0 {
        return Err(OtError::InvalidParameter("step_size must be nonnegative".into()));
    }
    if fc.iters == 0 || fc.record_every == 0 {
        return Err(OtError::InvalidParameter("iters and record_every must be at least 1".into()));
    }
    if b0.dim() != a_target.dim() {
        return Err(OtError::DimensionMismatch(b0.dim(), a_target.dim()));
    }
    let dim = b0.dim();
    let mut points = b0.points_flat().to_vec();
    let mut snapshots = vec![(0usize, points.clone())];
    let mut loss_trace = Vec::with_capacity(fc.iters);
    let mut initial = f64::INFINITY;
    let factor = fc.step_size * if fc.bias_correction { fc.cfg.m as f64 } else { 1.0 };
    for step in 0..fc.iters {
        let current = DiscreteDistribution::from_flat(points.clone(), dim)?;
        let mut step_cfg = fc.cfg.clone();
        step_cfg.seed = child_seed(fc.cfg.seed, step as u64);
        let grad = grad_minibatch(a_target, &current, cost, &step_cfg)?;
        if step == 0 {
            initial = grad.value;
        } else if grad.value > 10.0 * initial.abs() + 1e-9 {
            return Err(OtError::FlowDiverged { step, loss: grad.value, initial });
        }
        loss_trace.push(grad.value);
        for (p, g) in points.iter_mut().zip(grad.field.data()) {
            *p -= factor * g;
        }
        if (step + 1) % fc.record_every == 0 || step + 1 == fc.iters {
            snapshots.push((step + 1, points.clone()));
        }
    }
    let final_points = DiscreteDistribution::from_flat(points, dim)?;
    Ok(FlowTrajectory { snapshots, loss_trace, final_points })
}

/// Central-difference gradient of an arbitrary scalar function of the
/// point coordinates. Verification helper for the analytic gradients.
pub fn finite_difference_oracle<F>(points: &[f64], dim: usize, step: f64, mut f: F) -> GradField
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0);
    let n = points.len() / dim;
    let mut field = GradField::zeros(n, dim);
    let mut work = points.to_vec();
    for c in 0..points.len() {
        let orig = work[c];
        work[c] = orig + step;
        let plus = f(&work);
        work[c] = orig - step;
        let minus = f(&work);
        work[c] = orig;
        field.data[c] = (plus - minus) / (2.0 * step);
    }
    field
}
