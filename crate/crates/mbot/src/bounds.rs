//! Concentration bounds for the minibatch estimators and the experiment
//! harness that checks them empirically.
//!
//! The per-batch loss is bounded by a constant `M_h` built from the
//! diameter of the support union; the complete estimator concentrates
//! around its expectation at rate `sqrt(1 / floor(n/m))` (two-sample
//! U-statistic) and the subsampled estimator adds a `sqrt(1/k)` term.
//! Row and column sums of the subsampled plan deviate from `1/n` by at
//! most `sqrt(2 ln(2/delta) / k)` with probability `1 - delta`.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cloud::DiscreteDistribution;
use crate::cost::CostSpec;
use crate::error::{OtError, Result};
use crate::minibatch::{
    sample_pair, u_stat_exact, u_stat_subsampled, LossKind, MinibatchConfig,
};
use crate::plan::format_float;
use crate::rng::{child_seed, stream_rng};
use crate::sinkhorn::SinkhornParams;

/// Uniform bound on the batch loss: the cost bound itself for the exact
/// loss, and `1.5 * (bound + eps * (2 log2(m) + 1))` for the entropic
/// losses, whose entropy term scales with `log2(m)`.
pub fn m_h(loss: LossKind, diam: f64, epsilon: f64, m: usize) -> f64 {
    match loss {
        LossKind::W => diam,
        LossKind::WEps | LossKind::SEps => {
            1.5 * (diam + epsilon * (2.0 * (m as f64).log2() + 1.0))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    pub n: usize,
    pub m: usize,
    pub k: u64,
    pub delta: f64,
    pub epsilon: f64,
    /// Bound on the ground cost over the union of the supports (the
    /// diameter for distance costs, its square for the squared cost).
    pub diam: f64,
    pub loss: LossKind,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(OtError::InvalidParameter(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.m == 0 || self.m > self.n || self.k == 0 || self.diam < 0.0 {
            return Err(OtError::InvalidParameter("bad bound inputs".into()));
        }
        Ok(())
    }

    pub fn m_h(&self) -> f64 {
        m_h(self.loss, self.diam, self.epsilon, self.m)
    }
}

/// Deviation of the complete estimator from its expectation at confidence
/// `1 - delta`: `M_h * sqrt(ln(2/delta) / (2 floor(n/m)))`.
pub fn u_statistic_bound(bi: &BoundInputs) -> f64 {
    let blocks = (bi.n / bi.m) as f64;
    bi.m_h() * ((2.0 / bi.delta).ln() / (2.0 * blocks)).sqrt()
}

/// Deviation of the subsampled estimator from the population expectation:
/// the U-statistic term plus the subsampling term
/// `M_h * sqrt(2 ln(2/delta) / k)`.
pub fn hoeffding_deviation(bi: &BoundInputs) -> f64 {
    let blocks = (bi.n / bi.m) as f64;
    let term_n = ((2.0 / bi.delta).ln() / (2.0 * blocks)).sqrt();
    let term_k = (2.0 * (2.0 / bi.delta).ln() / bi.k as f64).sqrt();
    bi.m_h() * (term_n + term_k)
}

/// Bernstein tail probability for a deviation of `eps_dev`:
/// `2 exp(-floor(n/m) eps^2 / (2 (sigma^2 + M_h eps / 3)))`, plus the
/// looser variant with the variance replaced by its bound `M_h^2`.
pub fn bernstein_tail(n: usize, m: usize, eps_dev: f64, sigma2: f64, m_h: f64) -> (f64, f64) {
    let blocks = (n / m) as f64;
    let tail = |var: f64| {
        (2.0f64) * (-(blocks * eps_dev * eps_dev) / (2.0 * (var + m_h * eps_dev / 3.0))).exp()
    };
    (tail(sigma2), tail(m_h * m_h))
}

/// Per-row marginal deviation bound of the subsampled plan at confidence
/// `1 - delta`: `sqrt(2 ln(2/delta) / k)`.
pub fn marginal_bound(k: u64, delta: f64) -> f64 {
    (2.0 * (2.0 / delta).ln() / k as f64).sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let den: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    num / den
}

/// Synthetic cloud generators with a known diameter bound, used by the
/// deviation experiments.
#[derive(Debug, Clone)]
pub enum GeneratorSpec {
    /// Uniform on the unit cube `[0,1]^dim`.
    Uniform { dim: usize },
    /// Equal-weight Gaussian mixture, clamped coordinatewise so the
    /// support stays inside a known box.
    GaussianMixture {
        centers: Vec<Vec<f64>>,
        std_dev: f64,
        clamp: (f64, f64),
    },
}

impl GeneratorSpec {
    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Uniform { dim } => *dim,
            GeneratorSpec::GaussianMixture { centers, .. } => centers[0].len(),
        }
    }

    /// Diameter of the box the generated support is guaranteed to lie in.
    pub fn diameter_bound(&self) -> f64 {
        match self {
            GeneratorSpec::Uniform { dim } => (*dim as f64).sqrt(),
            GeneratorSpec::GaussianMixture { clamp: (lo, hi), centers, .. } => {
                (centers[0].len() as f64).sqrt() * (hi - lo)
            }
        }
    }

    pub fn generate(&self, rng: &mut ChaCha8Rng, n: usize) -> DiscreteDistribution {
        let dim = self.dim();
        let mut flat = Vec::with_capacity(n * dim);
        match self {
            GeneratorSpec::Uniform { .. } => {
                for _ in 0..n * dim {
                    flat.push(rng.random_range(0.0..1.0));
                }
            }
            GeneratorSpec::GaussianMixture { centers, std_dev, clamp: (lo, hi) } => {
                let normal = Normal::new(0.0, *std_dev).expect("valid std dev");
                for _ in 0..n {
                    let c = &centers[rng.random_range(0..centers.len())];
                    for &cc in c {
                        let v: f64 = cc + normal.sample(rng);
                        flat.push(v.clamp(*lo, *hi));
                    }
                }
            }
        }
        DiscreteDistribution::from_flat(flat, dim).expect("generator produces valid clouds")
    }
}

/// One row of a deviation experiment.
#[derive(Debug, Clone)]
pub struct ExperimentRecord {
    pub n: usize,
    pub m: usize,
    pub k: u64,
    pub rep: u32,
    pub seed: u64,
    pub estimate: f64,
    pub reference: f64,
    pub abs_error: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// Checks the subsampled-estimator deviation bound on synthetic data. Per
/// grid point and repetition: draw fresh clouds, estimate with `k` pairs,
/// compare against the complete estimator (or a high-`k` surrogate with an
/// independent seed when enumeration is infeasible) and against the bound.
#[derive(Debug, Clone)]
pub struct DeviationExperiment {
    pub generator: GeneratorSpec,
    pub cost: CostSpec,
    pub loss: LossKind,
    pub sinkhorn: SinkhornParams,
    /// Grid of (n, m, k) triples.
    pub grid: Vec<(usize, usize, u64)>,
    pub delta: f64,
    pub reps: u32,
    pub seed: u64,
    pub enumeration_cap: u64,
    /// Smallest surrogate reference size; the actual surrogate uses
    /// `max(floor, 100 k)` draws.
    pub surrogate_k_floor: u64,
}

impl DeviationExperiment {
    pub fn new(generator: GeneratorSpec, cost: CostSpec, grid: Vec<(usize, usize, u64)>) -> Self {
        DeviationExperiment {
            generator,
            cost,
            loss: LossKind::W,
            sinkhorn: SinkhornParams::new(1.0),
            grid,
            delta: 0.1,
            reps: 200,
            seed: 0,
            enumeration_cap: crate::minibatch::DEFAULT_ENUMERATION_CAP,
            surrogate_k_floor: 100_000,
        }
    }

    pub fn run(&self) -> Result<Vec<ExperimentRecord>> {
        let jobs: Vec<(usize, (usize, usize, u64), u32)> = self
            .grid
            .iter()
            .enumerate()
            .flat_map(|(gi, &g)| (0..self.reps).map(move |rep| (gi, g, rep)))
            .collect();
        let mut records: Vec<ExperimentRecord> = jobs
            .par_iter()
            .map(|&(gi, (n, m, k), rep)| self.run_one(gi, n, m, k, rep))
            .collect::<Result<_>>()?;
        records.sort_by(|a, b| {
            (a.n, a.m, a.k, a.rep).cmp(&(b.n, b.m, b.k, b.rep))
        });
        Ok(records)
    }

    fn run_one(&self, gi: usize, n: usize, m: usize, k: u64, rep: u32) -> Result<ExperimentRecord> {
        let rec_seed = child_seed(self.seed, (gi as u64) << 32 | rep as u64);
        let mut data_rng = stream_rng(rec_seed, 0);
        let alpha = self.generator.generate(&mut data_rng, n);
        let beta = self.generator.generate(&mut data_rng, n);

        let mut cfg = MinibatchConfig::wasserstein(m, k, child_seed(rec_seed, 1));
        cfg.loss = self.loss;
        cfg.sinkhorn = self.sinkhorn;
        cfg.enumeration_cap = self.enumeration_cap;
        let (estimate, _) = u_stat_subsampled(&alpha, &beta, &self.cost, &cfg)?;

        let reference = match u_stat_exact(&alpha, &beta, &self.cost, &cfg) {
            Ok(v) => v,
            Err(OtError::EnumerationCapExceeded { .. }) => {
                let mut ref_cfg = cfg.clone();
                ref_cfg.seed = child_seed(rec_seed, 2);
                ref_cfg.k = self.surrogate_k_floor.max(100 * k);
                u_stat_subsampled(&alpha, &beta, &self.cost, &ref_cfg)?.0
            }
            Err(e) => return Err(e),
        };

        let bi = BoundInputs {
            n,
            m,
            k,
            delta: self.delta,
            epsilon: self.sinkhorn.epsilon,
            diam: self.cost.bound_for_diameter(self.generator.diameter_bound()),
            loss: self.loss,
        };
        bi.validate()?;
        let bound = hoeffding_deviation(&bi);
        let abs_error = (estimate - reference).abs();
        Ok(ExperimentRecord {
            n,
            m,
            k,
            rep,
            seed: rec_seed,
            estimate,
            reference,
            abs_error,
            bound,
            within_bound: abs_error <= bound,
        })
    }
}

/// CSV schema for deviation records.
pub fn write_records_csv<W: Write>(w: &mut W, records: &[ExperimentRecord]) -> Result<()> {
    writeln!(w, "n,m,k,rep,seed,estimate,reference,abs_error,bound,within_bound")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.m,
            r.k,
            r.rep,
            r.seed,
            format_float(r.estimate),
            format_float(r.reference),
            format_float(r.abs_error),
            format_float(r.bound),
            r.within_bound
        )?;
    }
    Ok(())
}

/// One row of a marginal-error experiment.
#[derive(Debug, Clone)]
pub struct MarginalRecord {
    pub m: usize,
    pub k: u64,
    pub rep: u32,
    pub seed: u64,
    pub mean_l1_row: f64,
    pub mean_l1_col: f64,
    pub max_row_dev: f64,
    pub max_col_dev: f64,
    /// Fraction of the 2n row/column sums within the per-row bound.
    pub within_bound_frac: f64,
}

/// Records plus the fitted log-log slope of the mean marginal error vs
/// `k`, one slope per batch size.
#[derive(Debug, Clone)]
pub struct MarginalExperimentResult {
    pub records: Vec<MarginalRecord>,
    pub slopes: Vec<(usize, f64)>,
}

/// Marginal error of the subsampled plan against the uniform marginal
/// `1/n`, over a grid of batch sizes and draw counts.
///
/// Uses the exact batch loss, whose restricted couplings have exactly
/// uniform marginals `1/m` on their batch; the accumulated row and column
/// sums therefore depend only on batch membership counts, which is what
/// is tallied here (positions enter only through size validation).
#[allow(clippy::too_many_arguments)] // mirrors the documented experiment signature
pub fn run_marginal_experiment(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    _cost: &CostSpec,
    m_list: &[usize],
    k_list: &[u64],
    reps: u32,
    seed: u64,
    delta: f64,
) -> Result<MarginalExperimentResult> {
    if a.n() != b.n() {
        return Err(OtError::SizeMismatch(a.n(), b.n()));
    }
    let n = a.n();
    let jobs: Vec<(usize, u64, u32)> = m_list
        .iter()
        .flat_map(|&m| {
            k_list
                .iter()
                .flat_map(move |&k| (0..reps).map(move |rep| (m, k, rep)))
        })
        .collect();
    let mut records: Vec<MarginalRecord> = jobs
        .par_iter()
        .map(|&(m, k, rep)| -> Result<MarginalRecord> {
            if m == 0 || m > n {
                return Err(OtError::BatchTooLarge { m, n });
            }
            let rec_seed = child_seed(seed, (m as u64) << 40 | k << 16 | rep as u64);
            let mut row_mass = vec![0.0f64; n];
            let mut col_mass = vec![0.0f64; n];
            let per_batch = 1.0 / (m as f64 * k as f64);
            for t in 0..k {
                let pair = sample_pair(rec_seed, t, n, m)?;
                for &i in &pair.source {
                    row_mass[i] += per_batch;
                }
                for &j in &pair.target {
                    col_mass[j] += per_batch;
                }
            }
            let target = 1.0 / n as f64;
            let bound = marginal_bound(k, delta);
            let mut within = 0usize;
            let mut sum_row = 0.0;
            let mut sum_col = 0.0;
            let mut max_row: f64 = 0.0;
            let mut max_col: f64 = 0.0;
            for &r in &row_mass {
                let d = (r - target).abs();
                sum_row += d;
                max_row = max_row.max(d);
                if d <= bound {
                    within += 1;
                }
            }
            for &c in &col_mass {
                let d = (c - target).abs();
                sum_col += d;
                max_col = max_col.max(d);
                if d <= bound {
                    within += 1;
                }
            }
            Ok(MarginalRecord {
                m,
                k,
                rep,
                seed: rec_seed,
                mean_l1_row: sum_row / n as f64,
                mean_l1_col: sum_col / n as f64,
                max_row_dev: max_row,
                max_col_dev: max_col,
                within_bound_frac: within as f64 / (2 * n) as f64,
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| (r.m, r.k, r.rep));

    // fitted log-log slope of the mean marginal error vs k, per batch size
    let mut slopes = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let points: Vec<(f64, f64)> = k_list
            .iter()
            .map(|&k| {
                let sel: Vec<&MarginalRecord> =
                    records.iter().filter(|r| r.m == m && r.k == k).collect();
                let mean = sel
                    .iter()
                    .map(|r| 0.5 * (r.mean_l1_row + r.mean_l1_col))
                    .sum::<f64>()
                    / sel.len() as f64;
                (k as f64, mean)
            })
            .collect();
        slopes.push((m, fit_loglog_slope(&points)));
    }
    Ok(MarginalExperimentResult { records, slopes })
}

pub fn write_marginal_csv<W: Write>(w: &mut W, records: &[MarginalRecord]) -> Result<()> {
    writeln!(
        w,
        "m,k,rep,seed,mean_l1_row,mean_l1_col,max_row_dev,max_col_dev,within_bound_frac"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.m,
            r.k,
            r.rep,
            r.seed,
            format_float(r.mean_l1_row),
            format_float(r.mean_l1_col),
            format_float(r.max_row_dev),
            format_float(r.max_col_dev),
            format_float(r.within_bound_frac)
        )?;
    }
    Ok(())
}
