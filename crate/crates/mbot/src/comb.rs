//! Combinatorial helpers: binomial coefficients (exact and in log space),
//! lexicographic subset enumeration and combination unranking.

use num_bigint::BigUint;

/// Exact binomial coefficient in `u128`, `None` on overflow.
pub fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiply because
        // acc holds C(n, i) exactly.
        acc = acc.checked_mul((n - i) as u128)?;
        acc /= (i + 1) as u128;
    }
    Some(acc)
}

/// Exact binomial coefficient as a big integer.
pub fn binomial_big(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Table of ln(i!) for i in 0..=n, built by direct summation.
pub fn ln_factorial_table(n: usize) -> Vec<f64> {
    let mut table = vec![0.0; n + 1];
    for i in 1..=n {
        table[i] = table[i - 1] + (i as f64).ln();
    }
    table
}

/// ln C(n, k) from a precomputed `ln_factorial_table` covering index `n`.
pub fn ln_binomial(table: &[f64], n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    table[n] - table[k] - table[n - k]
}

/// Lexicographic iterator over all size-`m` subsets of `0..n`, as sorted
/// index vectors. `m = 0` yields the single empty subset.
pub struct Combinations {
    n: usize,
    m: usize,
    current: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, m: usize) -> Self {
        Combinations {
            n,
            m,
            current: (0..m).collect(),
            done: m > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        // advance to the next combination in lexicographic order
        let (n, m) = (self.n, self.m);
        let mut i = m;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] != i + n - m {
                self.current[i] += 1;
                for j in i + 1..m {
                    self.current[j] = self.current[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// The `rank`-th size-`m` subset of `0..n` in lexicographic order
/// (combinatorial number system decoding).
pub fn unrank_combination(n: usize, m: usize, mut rank: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(m);
    let mut next = 0usize;
    let mut remaining = m;
    while remaining > 0 {
        // subsets starting with `next` that keep the prefix lexicographic:
        // C(n - next - 1, remaining - 1)
        let block = binomial_u128((n - next - 1) as u64, (remaining - 1) as u64)
            .expect("unrank within u128 range");
        if rank < block {
            out.push(next);
            remaining -= 1;
        } else {
            rank -= block;
        }
        next += 1;
    }
    out
}
