//! Brute-force reference computations used by the test suites.
//!
//! Everything here is deliberately naive and shares no code with the
//! production solvers, so it can serve as an independent check. Sizes are
//! limited to what full enumeration can handle (n <= 8 or so).

/// Minimum of `(1/m) * sum_i c[i][sigma(i)]` over all permutations, visited
/// in lexicographic order so that the reported minimizer is the
/// lexicographically smallest optimal permutation.
pub fn assignment_by_enumeration(cost: &[f64], m: usize) -> (f64, Vec<usize>) {
    assert!((1..=10).contains(&m), "enumeration oracle is for tiny instances");
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best_value = f64::INFINITY;
    let mut best_perm = perm.clone();
    loop {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
        let value = total / m as f64;
        if value < best_value {
            best_value = value;
            best_perm = perm.clone();
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    (best_value, best_perm)
}

/// Advance to the next permutation in lexicographic order; false when the
/// input was the last one.
pub fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn next_permutation_covers_all() {
        let mut p = vec![0usize, 1, 2];
        let mut seen = vec![p.clone()];
        while next_permutation(&mut p) {
            seen.push(p.clone());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[5], vec![2, 1, 0]);
    }

    #[test]
    fn enumeration_finds_obvious_minimum() {
        // identity is optimal and lexicographically smallest
        let cost = vec![
            0.0, 9.0, 9.0, //
            9.0, 0.0, 9.0, //
            9.0, 9.0, 0.0, //
        ];
        let (value, sigma) = assignment_by_enumeration(&cost, 3);
        assert_eq!(value, 0.0);
        assert_eq!(sigma, vec![0, 1, 2]);
    }
}
