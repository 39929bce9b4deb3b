//! Independent reference computations used by the integration suites.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Minimum within-cluster sum of squares over every 2-partition, by enumeration.
pub fn brute_force_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    // fixing point 0 in group A halves the search without losing partitions
    for mask in 0u32..(1 << (n - 1)) {
        let in_b = |i: usize| i > 0 && (mask >> (i - 1)) & 1 == 1;
        let mut cost = 0.0;
        for group in [false, true] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| in_b(i) == group).map(|i| &points[i]).collect();
            if members.is_empty() {
                cost = f64::INFINITY;
                break;
            }
            for d in 0..dim {
                let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>();
            }
        }
        best = best.min(cost);
    }
    best
}

/// Two Gaussian blobs in 2-D whose centers are at least 6 sigma apart, with
/// 2..=8 points split so each blob is nonempty.
pub fn separated_instance(rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let sigma: f64 = rng.random_range(0.1..2.0);
    let n = rng.random_range(2..=8usize);
    let n_a = rng.random_range(1..n);
    let spacing = sigma * rng.random_range(6.0..12.0);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let origin = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
    let centers = [origin, [origin[0] + spacing * angle.cos(), origin[1] + spacing * angle.sin()]];
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|i| {
            let c = centers[usize::from(i >= n_a)];
            vec![c[0] + noise.sample(rng), c[1] + noise.sample(rng)]
        })
        .collect()
}
