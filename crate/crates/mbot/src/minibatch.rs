//! Minibatch OT estimators.
//!
//! For an OT loss `h` (exact, entropic, or the debiased divergence), the
//! complete estimator averages `h(A, B)` over all pairs of size-`m`
//! index subsets of the two supports; the subsampled estimator averages
//! over `k` pairs drawn uniformly at random. The matching transport plans
//! embed each batch-restricted coupling into the full index space and
//! average them the same way.
//!
//! Batches are drawn without replacement *within* a batch; by default the
//! `k` pairs themselves are drawn i.i.d. with replacement, which is the
//! regime the deviation bounds in [`crate::bounds`] describe.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::DiscreteDistribution;
use crate::comb::{binomial_u128, unrank_combination, Combinations};
use crate::cost::CostSpec;
use crate::error::{OtError, Result};
use crate::exact::{assignment_value, solve_exact_1d, solve_exact_assignment, AssignmentWorkspace};
use crate::plan::{SparsePlan, TransportPlan};
use crate::rng::stream_rng;
use crate::sinkhorn::{sinkhorn_divergence, sinkhorn_on_cost, SinkhornParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Exact Wasserstein cost.
    W,
    /// Entropic OT value.
    WEps,
    /// Debiased Sinkhorn divergence.
    SEps,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::W => "W",
            LossKind::WEps => "W_eps",
            LossKind::SEps => "S_eps",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        match s {
            "W" | "w" => Some(LossKind::W),
            "W_eps" | "w_eps" | "w-eps" => Some(LossKind::WEps),
            "S_eps" | "s_eps" | "s-eps" => Some(LossKind::SEps),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSampling {
    /// Pairs drawn independently with replacement across draws (default).
    IidWithReplacement,
    /// `k` distinct pairs; with `k` equal to the number of possible pairs
    /// this enumerates them all. Only available when the pair space is
    /// small enough to index.
    DistinctPairs,
}

#[derive(Debug, Clone)]
pub struct MinibatchConfig {
    pub m: usize,
    pub k: u64,
    pub seed: u64,
    pub loss: LossKind,
    /// Solver parameters for the entropic losses; ignored when `loss` is
    /// [`LossKind::W`].
    pub sinkhorn: SinkhornParams,
    pub pair_sampling: PairSampling,
    /// Refusal threshold for the exact (fully enumerated) paths, in subset
    /// pairs.
    pub enumeration_cap: u64,
}

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

impl MinibatchConfig {
    pub fn wasserstein(m: usize, k: u64, seed: u64) -> Self {
        MinibatchConfig {
            m,
            k,
            seed,
            loss: LossKind::W,
            sinkhorn: SinkhornParams::new(1.0),
            pair_sampling: PairSampling::IidWithReplacement,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn entropic(m: usize, k: u64, seed: u64, sinkhorn: SinkhornParams) -> Self {
        MinibatchConfig { loss: LossKind::WEps, sinkhorn, ..Self::wasserstein(m, k, seed) }
    }

    pub fn divergence(m: usize, k: u64, seed: u64, sinkhorn: SinkhornParams) -> Self {
        MinibatchConfig { loss: LossKind::SEps, sinkhorn, ..Self::wasserstein(m, k, seed) }
    }

    pub fn with_sampling(mut self, sampling: PairSampling) -> Self {
        self.pair_sampling = sampling;
        self
    }

    pub fn with_enumeration_cap(mut self, cap: u64) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub(crate) fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        let n = n_source.min(n_target);
        if self.m == 0 || self.m > n {
            return Err(OtError::BatchTooLarge { m: self.m, n });
        }
        if self.k == 0 {
            return Err(OtError::InvalidParameter("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// A sampled pair of index batches; indices are distinct within each batch
/// and stored sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Uniform random size-`m` subset of `0..n` (Floyd's algorithm), sorted.
pub(crate) fn sample_subset(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    if m > 128 {
        let mut set = std::collections::HashSet::with_capacity(m * 2);
        for j in (n - m)..n {
            let t = rng.random_range(0..=j);
            let pick = if set.contains(&t) { j } else { t };
            set.insert(pick);
            chosen.push(pick);
        }
    } else {
        for j in (n - m)..n {
            let t = rng.random_range(0..=j);
            let pick = if chosen.contains(&t) { j } else { t };
            chosen.push(pick);
        }
    }
    chosen.sort_unstable();
    chosen
}

pub(crate) fn sample_pair_asym(
    seed: u64,
    draw: u64,
    n_source: usize,
    n_target: usize,
    m: usize,
) -> BatchPair {
    let mut rng = stream_rng(seed, draw);
    let source = sample_subset(&mut rng, n_source, m);
    let target = sample_subset(&mut rng, n_target, m);
    BatchPair { source, target }
}

/// Draw `draw`-th batch pair for supports of size `n`. A pure function of
/// `(seed, draw)`: replaying a draw index always yields the same pair.
pub fn sample_pair(seed: u64, draw: u64, n: usize, m: usize) -> Result<BatchPair> {
    if m == 0 || m > n {
        return Err(OtError::BatchTooLarge { m, n });
    }
    Ok(sample_pair_asym(seed, draw, n, n, m))
}

/// The OT loss `h` evaluated on two full equal-size distributions.
pub fn ot_loss(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
    loss: LossKind,
    params: &SinkhornParams,
) -> Result<f64> {
    match loss {
        LossKind::W => {
            if a.dim() == 1 {
                Ok(solve_exact_1d(a, b, cost)?.0)
            } else {
                Ok(solve_exact_assignment(a, b, cost)?.0)
            }
        }
        LossKind::WEps => Ok(crate::sinkhorn::sinkhorn(a, b, cost, params)?.value),
        LossKind::SEps => sinkhorn_divergence(a, b, cost, params),
    }
}

/// Per-batch solver with reusable scratch space. The exact 1D case takes
/// the sort shortcut, which selects the order-preserving matching among
/// co-optimal assignments (the convention the closed-form coefficients
/// follow).
pub(crate) struct BatchKernel<'a> {
    a: &'a DiscreteDistribution,
    b: &'a DiscreteDistribution,
    cost: &'a CostSpec,
    loss: LossKind,
    params: SinkhornParams,
    ws: AssignmentWorkspace,
    cost_buf: Vec<f64>,
    sort_buf_a: Vec<(f64, u32)>,
    sort_buf_b: Vec<(f64, u32)>,
}

impl<'a> BatchKernel<'a> {
    pub fn new(
        a: &'a DiscreteDistribution,
        b: &'a DiscreteDistribution,
        cost: &'a CostSpec,
        cfg: &MinibatchConfig,
    ) -> Self {
        BatchKernel {
            a,
            b,
            cost,
            loss: cfg.loss,
            params: cfg.sinkhorn,
            ws: AssignmentWorkspace::new(cfg.m),
            cost_buf: Vec::new(),
            sort_buf_a: Vec::new(),
            sort_buf_b: Vec::new(),
        }
    }

    fn fill_cost(&mut self, ai: &[usize], bi: &[usize]) {
        self.cost_buf.clear();
        for &i in ai {
            let x = self.a.point(i);
            for &j in bi {
                self.cost_buf.push(self.cost.evaluate(x, self.b.point(j)));
            }
        }
    }

    /// The order-preserving 1D matching as a batch-local permutation plus
    /// its cost.
    fn solve_1d(&mut self, ai: &[usize], bi: &[usize]) -> (f64, Vec<usize>) {
        let m = ai.len();
        self.sort_buf_a.clear();
        self.sort_buf_b.clear();
        for (p, &i) in ai.iter().enumerate() {
            self.sort_buf_a.push((self.a.point(i)[0], p as u32));
        }
        for (q, &j) in bi.iter().enumerate() {
            self.sort_buf_b.push((self.b.point(j)[0], q as u32));
        }
        self.sort_buf_a.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        self.sort_buf_b.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut perm = vec![0usize; m];
        let mut total = 0.0;
        for r in 0..m {
            let (xa, p) = self.sort_buf_a[r];
            let (xb, q) = self.sort_buf_b[r];
            total += self.cost.evaluate(&[xa], &[xb]);
            perm[p as usize] = q as usize;
        }
        (total / m as f64, perm)
    }

    pub fn loss_value(&mut self, ai: &[usize], bi: &[usize]) -> Result<f64> {
        match self.loss {
            LossKind::W => {
                if self.a.dim() == 1 {
                    Ok(self.solve_1d(ai, bi).0)
                } else {
                    self.fill_cost(ai, bi);
                    let m = ai.len();
                    let cost_buf = std::mem::take(&mut self.cost_buf);
                    let sigma = self.ws.solve(&cost_buf, m, false);
                    let value = assignment_value(&cost_buf, m, &sigma);
                    self.cost_buf = cost_buf;
                    Ok(value)
                }
            }
            LossKind::WEps => {
                self.fill_cost(ai, bi);
                Ok(sinkhorn_on_cost(&self.cost_buf, ai.len(), &self.params)?.value)
            }
            LossKind::SEps => {
                let cross = {
                    self.fill_cost(ai, bi);
                    sinkhorn_on_cost(&self.cost_buf, ai.len(), &self.params)?.value
                };
                let self_a = {
                    self.fill_cost(ai, ai);
                    sinkhorn_on_cost(&self.cost_buf, ai.len(), &self.params)?.value
                };
                let self_b = {
                    let mut cost_bb = Vec::with_capacity(bi.len() * bi.len());
                    for &i in bi {
                        let x = self.b.point(i);
                        for &j in bi {
                            cost_bb.push(self.cost.evaluate(x, self.b.point(j)));
                        }
                    }
                    sinkhorn_on_cost(&cost_bb, bi.len(), &self.params)?.value
                };
                Ok(cross - 0.5 * (self_a + self_b))
            }
        }
    }

    /// Loss plus the coupling that enters the averaged plan. For the
    /// divergence the coupling of the cross term is used.
    pub fn loss_and_plan(&mut self, ai: &[usize], bi: &[usize]) -> Result<(f64, TransportPlan)> {
        match self.loss {
            LossKind::W => {
                if self.a.dim() == 1 {
                    let (value, perm) = self.solve_1d(ai, bi);
                    Ok((value, TransportPlan::from_permutation(perm, value)))
                } else {
                    self.fill_cost(ai, bi);
                    let m = ai.len();
                    let cost_buf = std::mem::take(&mut self.cost_buf);
                    let sigma = self.ws.solve(&cost_buf, m, false);
                    let value = assignment_value(&cost_buf, m, &sigma);
                    self.cost_buf = cost_buf;
                    Ok((value, TransportPlan::from_permutation(sigma, value)))
                }
            }
            LossKind::WEps => {
                self.fill_cost(ai, bi);
                let res = sinkhorn_on_cost(&self.cost_buf, ai.len(), &self.params)?;
                Ok((res.value, res.plan))
            }
            LossKind::SEps => {
                let value = self.loss_value(ai, bi)?;
                self.fill_cost(ai, bi);
                let res = sinkhorn_on_cost(&self.cost_buf, ai.len(), &self.params)?;
                Ok((value, res.plan))
            }
        }
    }
}

/// Number of subset pairs `C(n_a, m) * C(n_b, m)`, or an error when it
/// exceeds the cap.
fn enumerable_pairs(n_a: usize, n_b: usize, m: usize, cap: u64) -> Result<(u128, u128, u128)> {
    let count_a = binomial_u128(n_a as u64, m as u64)
        .ok_or_else(|| OtError::InvalidParameter("subset count overflows u128".into()))?;
    let count_b = binomial_u128(n_b as u64, m as u64)
        .ok_or_else(|| OtError::InvalidParameter("subset count overflows u128".into()))?;
    let pairs = count_a.checked_mul(count_b).ok_or(OtError::EnumerationCapExceeded {
        pairs: u128::MAX,
        cap,
    })?;
    if pairs > cap as u128 {
        return Err(OtError::EnumerationCapExceeded { pairs, cap });
    }
    Ok((count_a, count_b, pairs))
}

/// Complete estimator: the average of `h(A, B)` over every subset pair.
pub fn u_stat_exact(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
) -> Result<f64> {
    cfg.validate(a.n(), b.n())?;
    cost.check_dim(a.dim())?;
    let (_, _, pairs) = enumerable_pairs(a.n(), b.n(), cfg.m, cfg.enumeration_cap)?;
    let subsets_a: Vec<Vec<usize>> = Combinations::new(a.n(), cfg.m).collect();
    let subsets_b: Vec<Vec<usize>> = Combinations::new(b.n(), cfg.m).collect();
    let row_sums: Vec<f64> = subsets_a
        .par_iter()
        .map_init(
            || BatchKernel::new(a, b, cost, cfg),
            |kernel, ai| -> Result<f64> {
                let mut acc = 0.0;
                for bi in &subsets_b {
                    acc += kernel.loss_value(ai, bi)?;
                }
                Ok(acc)
            },
        )
        .collect::<Result<_>>()?;
    Ok(row_sums.iter().sum::<f64>() / pairs as f64)
}

/// Subsampled estimator: mean of `h` over `k` sampled pairs, together with
/// the per-draw values (draw order), which bound experiments reuse.
pub fn u_stat_subsampled(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate(a.n(), b.n())?;
    cost.check_dim(a.dim())?;
    let per_draw: Vec<f64> = match cfg.pair_sampling {
        PairSampling::IidWithReplacement => (0..cfg.k)
            .into_par_iter()
            .map_init(
                || BatchKernel::new(a, b, cost, cfg),
                |kernel, t| {
                    let pair = sample_pair_asym(cfg.seed, t, a.n(), b.n(), cfg.m);
                    kernel.loss_value(&pair.source, &pair.target)
                },
            )
            .collect::<Result<_>>()?,
        PairSampling::DistinctPairs => {
            let pairs = distinct_pairs(a.n(), b.n(), cfg)?;
            pairs
                .par_iter()
                .map_init(
                    || BatchKernel::new(a, b, cost, cfg),
                    |kernel, pair| kernel.loss_value(&pair.source, &pair.target),
                )
                .collect::<Result<_>>()?
        }
    };
    let value = per_draw.iter().sum::<f64>() / per_draw.len() as f64;
    Ok((value, per_draw))
}

fn distinct_pairs(n_a: usize, n_b: usize, cfg: &MinibatchConfig) -> Result<Vec<BatchPair>> {
    let count_a = binomial_u128(n_a as u64, cfg.m as u64)
        .ok_or_else(|| OtError::InvalidParameter("subset count overflows u128".into()))?;
    let count_b = binomial_u128(n_b as u64, cfg.m as u64)
        .ok_or_else(|| OtError::InvalidParameter("subset count overflows u128".into()))?;
    let total = count_a
        .checked_mul(count_b)
        .ok_or_else(|| OtError::InvalidParameter("pair space overflows u128".into()))?;
    if (cfg.k as u128) > total {
        return Err(OtError::InvalidParameter(format!(
            "distinct_pairs needs k <= {total}, got {}",
            cfg.k
        )));
    }
    let unrank = |rank: u128| {
        let ar = rank / count_b;
        let br = rank % count_b;
        BatchPair {
            source: unrank_combination(n_a, cfg.m, ar),
            target: unrank_combination(n_b, cfg.m, br),
        }
    };
    if cfg.k as u128 == total {
        return Ok((0..total).map(unrank).collect());
    }
    // Floyd's sampling over pair ranks, kept in insertion (draw) order
    let mut rng = stream_rng(cfg.seed, 0);
    let mut seen = std::collections::HashSet::new();
    let mut ranks = Vec::with_capacity(cfg.k as usize);
    for j in (total - cfg.k as u128)..total {
        let t = rng.random_range(0..=j);
        let pick = if seen.contains(&t) { j } else { t };
        seen.insert(pick);
        ranks.push(pick);
    }
    Ok(ranks.into_iter().map(unrank).collect())
}

/// The complete averaged plan: every batch coupling embedded at its
/// original indices and averaged over all subset pairs. An admissible
/// coupling of the full distributions (uniform marginals).
pub fn plan_averaged_exact(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
) -> Result<SparsePlan> {
    cfg.validate(a.n(), b.n())?;
    cost.check_dim(a.dim())?;
    let (_, _, pairs) = enumerable_pairs(a.n(), b.n(), cfg.m, cfg.enumeration_cap)?;
    let scale = 1.0 / pairs as f64;
    let mut kernel = BatchKernel::new(a, b, cost, cfg);
    let mut sp = SparsePlan::new(a.n(), b.n());
    for ai in Combinations::new(a.n(), cfg.m) {
        for bi in Combinations::new(b.n(), cfg.m) {
            let (_, plan) = kernel.loss_and_plan(&ai, &bi)?;
            sp.accumulate(&plan, &ai, &bi, scale);
        }
    }
    Ok(sp)
}

/// The subsampled plan: `k` batch couplings accumulated sparsely, so the
/// memory footprint is `O(min(k m^2, n^2))` and no dense `n x n` matrix is
/// ever materialized.
pub fn plan_subsampled(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
) -> Result<SparsePlan> {
    cfg.validate(a.n(), b.n())?;
    cost.check_dim(a.dim())?;
    let scale = 1.0 / cfg.k as f64;
    let mut sp = SparsePlan::new(a.n(), b.n());
    match cfg.pair_sampling {
        PairSampling::IidWithReplacement => {
            const CHUNK: u64 = 64;
            let mut start = 0;
            while start < cfg.k {
                let end = (start + CHUNK).min(cfg.k);
                let solved: Vec<(BatchPair, TransportPlan)> = (start..end)
                    .into_par_iter()
                    .map_init(
                        || BatchKernel::new(a, b, cost, cfg),
                        |kernel, t| {
                            let pair = sample_pair_asym(cfg.seed, t, a.n(), b.n(), cfg.m);
                            let (_, plan) = kernel.loss_and_plan(&pair.source, &pair.target)?;
                            Ok((pair, plan))
                        },
                    )
                    .collect::<Result<_>>()?;
                for (pair, plan) in &solved {
                    sp.accumulate(plan, &pair.source, &pair.target, scale);
                }
                start = end;
            }
        }
        PairSampling::DistinctPairs => {
            let pairs = distinct_pairs(a.n(), b.n(), cfg)?;
            let mut kernel = BatchKernel::new(a, b, cost, cfg);
            for pair in &pairs {
                let (_, plan) = kernel.loss_and_plan(&pair.source, &pair.target)?;
                sp.accumulate(&plan, &pair.source, &pair.target, scale);
            }
        }
    }
    Ok(sp)
}

/// Semi-discrete estimator: batches from the empirical source paired with
/// fresh i.i.d. samples from a continuous target model. Unbiased for the
/// semi-discrete minibatch loss.
pub fn u_stat_semidiscrete<F>(
    a: &DiscreteDistribution,
    beta_sampler: F,
    cost: &CostSpec,
    cfg: &MinibatchConfig,
    draws: u64,
) -> Result<f64>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    cfg.validate(a.n(), a.n())?;
    cost.check_dim(a.dim())?;
    if draws == 0 {
        return Err(OtError::InvalidParameter("draws must be at least 1".into()));
    }
    let values: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rng = stream_rng(cfg.seed, t);
            let ai = sample_subset(&mut rng, a.n(), cfg.m);
            let mut pts = Vec::with_capacity(cfg.m);
            for _ in 0..cfg.m {
                let y = beta_sampler(&mut rng);
                if y.len() != a.dim() {
                    return Err(OtError::DimensionMismatch(a.dim(), y.len()));
                }
                pts.push(y);
            }
            let da = a.restrict(&ai);
            let db = DiscreteDistribution::new(pts)?;
            ot_loss(&da, &db, cost, cfg.loss, &cfg.sinkhorn)
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / draws as f64)
}
