//! Couplings: dense square transport plans and the sparse accumulated
//! plans produced by batch subsampling, plus the on-disk formats
//! (CSV triplets and the `MBOTPLAN` binary layout).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{OtError, Result};

/// A coupling between two equal-size uniform distributions, together with
/// the transport objective reached at that coupling. Exact solves store
/// only their permutation (`m` entries); entropic solves store the dense
/// matrix.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    size: usize,
    repr: PlanRepr,
    pub value: f64,
}

#[derive(Debug, Clone)]
enum PlanRepr {
    /// `(1/m) * P_sigma`: row `i` carries mass `1/m` at column `sigma[i]`.
    Permutation(Vec<usize>),
    /// Row-major dense entries.
    Dense(Vec<f64>),
}

impl TransportPlan {
    pub fn from_entries(size: usize, entries: Vec<f64>, value: f64) -> Self {
        debug_assert_eq!(entries.len(), size * size);
        TransportPlan { size, repr: PlanRepr::Dense(entries), value }
    }

    /// The plan `(1/m) * P_sigma` for a permutation `sigma`.
    pub fn from_permutation(perm: Vec<usize>, value: f64) -> Self {
        TransportPlan { size: perm.len(), repr: PlanRepr::Permutation(perm), value }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.repr {
            PlanRepr::Permutation(perm) => {
                if perm[i] == j {
                    1.0 / self.size as f64
                } else {
                    0.0
                }
            }
            PlanRepr::Dense(entries) => entries[i * self.size + j],
        }
    }

    /// Materialize the dense row-major matrix.
    pub fn to_dense_entries(&self) -> Vec<f64> {
        match &self.repr {
            PlanRepr::Permutation(perm) => {
                let m = self.size;
                let w = 1.0 / m as f64;
                let mut entries = vec![0.0; m * m];
                for (i, &j) in perm.iter().enumerate() {
                    entries[i * m + j] = w;
                }
                entries
            }
            PlanRepr::Dense(entries) => entries.clone(),
        }
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        match &self.repr {
            PlanRepr::Permutation(perm) => Some(perm),
            PlanRepr::Dense(_) => None,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        match &self.repr {
            PlanRepr::Permutation(_) => vec![1.0 / self.size as f64; self.size],
            PlanRepr::Dense(entries) => entries
                .chunks_exact(self.size)
                .map(|row| row.iter().sum())
                .collect(),
        }
    }

    pub fn col_sums(&self) -> Vec<f64> {
        match &self.repr {
            PlanRepr::Permutation(perm) => {
                // a permutation hits every column exactly once
                let mut out = vec![0.0; self.size];
                for &j in perm {
                    out[j] += 1.0 / self.size as f64;
                }
                out
            }
            PlanRepr::Dense(entries) => {
                let mut out = vec![0.0; self.size];
                for row in entries.chunks_exact(self.size) {
                    for (acc, v) in out.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                out
            }
        }
    }

    /// Largest deviation of any row or column sum from the uniform marginal
    /// `1/m`.
    pub fn max_marginal_residual(&self) -> f64 {
        let target = 1.0 / self.size as f64;
        let rows = self.row_sums();
        let cols = self.col_sums();
        rows.iter()
            .chain(cols.iter())
            .map(|s| (s - target).abs())
            .fold(0.0, f64::max)
    }

    /// `<plan, C>` for a row-major cost matrix of matching shape.
    pub fn transport_cost(&self, cost_matrix: &[f64]) -> f64 {
        match &self.repr {
            PlanRepr::Permutation(perm) => {
                let w = 1.0 / self.size as f64;
                perm.iter()
                    .enumerate()
                    .map(|(i, &j)| w * cost_matrix[i * self.size + j])
                    .sum()
            }
            PlanRepr::Dense(entries) => entries
                .iter()
                .zip(cost_matrix)
                .map(|(p, c)| p * c)
                .sum(),
        }
    }
}

/// A coupling on the full `n x n` index space accumulated from batch plans,
/// stored sparsely so that memory stays `O(min(k m^2, n^2))`.
#[derive(Debug, Clone)]
pub struct SparsePlan {
    n_rows: usize,
    n_cols: usize,
    entries: BTreeMap<(u32, u32), f64>,
    /// Number of batch plans consumed.
    pub draws: u64,
}

impl SparsePlan {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        SparsePlan { n_rows, n_cols, entries: BTreeMap::new(), draws: 0 }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Scatter `scale * batch_plan` into the full index space: entry (i, j)
    /// of the batch plan lands at `(a_idx[i], b_idx[j])`.
    pub fn accumulate(&mut self, plan: &TransportPlan, a_idx: &[usize], b_idx: &[usize], scale: f64) {
        if let Some(perm) = plan.permutation() {
            let w = scale / a_idx.len() as f64;
            for (i, &j) in perm.iter().enumerate() {
                *self
                    .entries
                    .entry((a_idx[i] as u32, b_idx[j] as u32))
                    .or_insert(0.0) += w;
            }
        } else {
            for (i, &row_idx) in a_idx.iter().enumerate() {
                for (j, &col_idx) in b_idx.iter().enumerate() {
                    let v = plan.get(i, j);
                    if v != 0.0 {
                        *self
                            .entries
                            .entry((row_idx as u32, col_idx as u32))
                            .or_insert(0.0) += scale * v;
                    }
                }
            }
        }
        self.draws += 1;
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .get(&(i as u32, j as u32))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        for (&(i, _), v) in &self.entries {
            out[i as usize] += v;
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (&(_, j), v) in &self.entries {
            out[j as usize] += v;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries
            .iter()
            .map(|(&(i, j), &v)| (i as usize, j as usize, v))
    }

    /// Densify; refuses when the dense size exceeds `cap` entries.
    pub fn to_dense(&self, cap: u64) -> Result<Vec<f64>> {
        let entries = self.n_rows as u128 * self.n_cols as u128;
        if entries > cap as u128 {
            return Err(OtError::DenseCapExceeded { entries, cap });
        }
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for (&(i, j), &v) in &self.entries {
            out[i as usize * self.n_cols + j as usize] = v;
        }
        Ok(out)
    }
}

/// Write a sparse plan as CSV triplets `i,j,mass` (17 significant digits),
/// in row-major order of the nonzero entries.
pub fn write_csv_triplets<W: Write>(w: &mut W, plan: &SparsePlan) -> Result<()> {
    writeln!(w, "i,j,mass")?;
    for (i, j, v) in plan.iter() {
        writeln!(w, "{},{},{}", i, j, format_float(v))?;
    }
    Ok(())
}

/// Binary layout for dense square plans: 16-byte header (8-byte magic
/// `MBOTPLAN`, little-endian u32 `n`, little-endian u32 flags) followed by
/// `n * n` row-major little-endian f64 entries.
pub const PLAN_MAGIC: &[u8; 8] = b"MBOTPLAN";

pub fn write_dense_binary<W: Write>(w: &mut W, n: usize, entries: &[f64], flags: u32) -> Result<()> {
    debug_assert_eq!(entries.len(), n * n);
    w.write_all(PLAN_MAGIC)?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    for v in entries {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dense_binary<R: Read>(r: &mut R) -> Result<(usize, Vec<f64>, u32)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != PLAN_MAGIC {
        return Err(OtError::Parse("bad plan magic".into()));
    }
    let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let flags = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let mut buf = vec![0u8; n * n * 8];
    r.read_exact(&mut buf)?;
    let entries = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, entries, flags))
}

/// Decimal float formatting with 17 significant digits, enough to round-trip
/// any f64.
pub fn format_float(v: f64) -> String {
    format!("{:.16e}", v)
}
