//! Criterion 10: computation-time shape. Minibatch evaluation at fixed
//! (m, k) is flat in the support size, while a full Sinkhorn solve scales
//! at least quadratically. Runs in its own binary so concurrent tests do
//! not distort the wall-clock measurements.

use std::time::Instant;

use mbot::minibatch::u_stat_subsampled;
use mbot::sinkhorn::sinkhorn_value_streaming;
use mbot::{CostSpec, DiscreteDistribution, MinibatchConfig};
use rand::Rng;

fn rand_cloud(seed: u64, n: usize, dim: usize) -> DiscreteDistribution {
    let mut rng = mbot::rng::stream_rng(seed, 0);
    let pts: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    DiscreteDistribution::from_flat(pts, dim).unwrap()
}

fn min_time<F: FnMut() -> f64>(reps: usize, mut f: F) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(f());
        best = best.min(t.elapsed().as_secs_f64());
    }
    best
}

#[test]
fn criterion_10_minibatch_flat_full_sinkhorn_quadratic() {
    let start = Instant::now();
    let cost = CostSpec::sq_euclidean();

    // minibatch evaluation at fixed (m, k) across three decades of n
    let sizes = [1_000usize, 10_000, 100_000];
    let cfg = MinibatchConfig::wasserstein(64, 32, 7);
    let mut mb_times = Vec::new();
    for &n in &sizes {
        let a = rand_cloud(10 + n as u64, n, 3);
        let b = rand_cloud(20 + n as u64, n, 3);
        let t = min_time(3, || u_stat_subsampled(&a, &b, &cost, &cfg).unwrap().0);
        mb_times.push(t);
    }
    let spread = mb_times.iter().cloned().fold(0.0f64, f64::max)
        / mb_times.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(
        spread < 2.0,
        "minibatch time varies {spread:.2}x across n (times {mb_times:?})"
    );

    // full Sinkhorn (matrix-free, fixed iteration count) from 10^3 to 10^4
    let iters = 5;
    let eps = 0.25;
    let a3 = rand_cloud(31, 1_000, 3);
    let b3 = rand_cloud(32, 1_000, 3);
    let t3 = min_time(2, || {
        sinkhorn_value_streaming(&a3, &b3, &cost, eps, iters).unwrap()
    });
    let a4 = rand_cloud(41, 10_000, 3);
    let b4 = rand_cloud(42, 10_000, 3);
    let t4 = min_time(1, || {
        sinkhorn_value_streaming(&a4, &b4, &cost, eps, iters).unwrap()
    });
    let growth = t4 / t3;
    assert!(
        growth >= 10.0,
        "full Sinkhorn grew only {growth:.1}x from n=1e3 ({t3:.3}s) to n=1e4 ({t4:.3}s)"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 10 took {elapsed:.1}s");
    println!(
        "criterion 10 (computation-time shape): PASS \
         minibatch spread {spread:.2}x over n in {sizes:?} (times {mb_times:?}), \
         full Sinkhorn {growth:.0}x from 1e3 to 1e4, {elapsed:.1}s"
    );
}
