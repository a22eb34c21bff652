//! Closed-form averaged minibatch plan for sorted 1D supports.
//!
//! For uniform 1D distributions the batch-restricted optimal matching is
//! the order-preserving one, so the averaged plan depends only on the
//! ranks of the points. Entry `(j, k)` (1-based ranks) is
//!
//! ```text
//! pi[j][k] = (1/m) C(n,m)^-2 * sum_i C(j-1, i-1) C(k-1, i-1) C(n-j, m-i) C(n-k, m-i)
//! ```
//!
//! summed over the batch positions `i` compatible with both ranks:
//! `max(1, m-n+j, m-n+k) <= i <= min(j, k, m)`. Outside that range the
//! binomials vanish.

use num_bigint::BigUint;

use crate::comb::{binomial_big, ln_binomial, ln_factorial_table};
use crate::error::{OtError, Result};

/// Supports up to this size use exact big-integer ratios; larger ones use
/// log-space evaluation (relative error around 1e-12, far below the 1e-9
/// the cross-checks need).
pub const EXACT_BIGINT_LIMIT: usize = 64;

/// The dense `n x n` averaged plan over ranks. Row-major.
pub fn closed_form_1d(n: usize, m: usize) -> Result<Vec<f64>> {
    if n == 0 || m == 0 {
        return Err(OtError::InvalidParameter("n and m must be at least 1".into()));
    }
    if m > n {
        return Err(OtError::BatchTooLarge { m, n });
    }
    let mut out = vec![0.0; n * n];
    if n <= EXACT_BIGINT_LIMIT {
        fill_exact(&mut out, n, m);
    } else {
        fill_log_space(&mut out, n, m);
    }
    Ok(out)
}

fn fill_exact(out: &mut [f64], n: usize, m: usize) {
    let count = binomial_big(n as u64, m as u64);
    let denom = &count * &count * m;
    let denom_f = big_to_f64(&denom);
    // cache C(r, i-1) and C(n-r-? , m-i) pulls as a table of C(x, y)
    for j in 1..=n {
        for k in j..=n {
            let i_min = 1
                .max((m + j).saturating_sub(n))
                .max((m + k).saturating_sub(n));
            let i_max = j.min(k).min(m);
            let mut sum = BigUint::from(0u32);
            let mut i = i_min;
            while i <= i_max {
                let term = binomial_big((j - 1) as u64, (i - 1) as u64)
                    * binomial_big((k - 1) as u64, (i - 1) as u64)
                    * binomial_big((n - j) as u64, (m - i) as u64)
                    * binomial_big((n - k) as u64, (m - i) as u64);
                sum += term;
                i += 1;
            }
            let v = big_to_f64(&sum) / denom_f;
            out[(j - 1) * n + (k - 1)] = v;
            out[(k - 1) * n + (j - 1)] = v;
        }
    }
}

fn fill_log_space(out: &mut [f64], n: usize, m: usize) {
    let table = ln_factorial_table(n);
    let ln_denom = (m as f64).ln() + 2.0 * ln_binomial(&table, n, m);
    for j in 1..=n {
        for k in j..=n {
            let i_min = 1.max((m + j).saturating_sub(n)).max((m + k).saturating_sub(n));
            let i_max = j.min(k).min(m);
            if i_min > i_max {
                continue;
            }
            // log-sum-exp over the compatible batch positions
            let logs: Vec<f64> = (i_min..=i_max)
                .map(|i| {
                    ln_binomial(&table, j - 1, i - 1)
                        + ln_binomial(&table, k - 1, i - 1)
                        + ln_binomial(&table, n - j, m - i)
                        + ln_binomial(&table, n - k, m - i)
                })
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            let v = (max + sum.ln() - ln_denom).exp();
            out[(j - 1) * n + (k - 1)] = v;
            out[(k - 1) * n + (j - 1)] = v;
        }
    }
}

/// Round a big integer to f64 (two roundings end to end: one per 8-byte
/// digit step, well under 1e-14 relative for the magnitudes used here).
fn big_to_f64(v: &BigUint) -> f64 {
    let mut acc = 0.0f64;
    for byte in v.to_bytes_be() {
        acc = acc * 256.0 + byte as f64;
    }
    acc
}
