//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use super::GraphError;
use crate::rng::{seeded, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Sum of squared distances of each point to its assigned center.
    pub objective: f64,
    /// Objective after every assignment step, in order.
    pub history: Vec<f64>,
    pub iterations: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties resolve to the lowest index.
pub fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub fn objective(points: &[Vec<f64>], assignments: &[usize], centers: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignments).map(|(p, &k)| squared_distance(p, &centers[k])).sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();

    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // rounding can exhaust the loop; fall back to the last positive weight
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // every remaining point coincides with a center
            chosen.iter().position(|&c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(p, centers)).unzip()
}

/// Independent k-means++ starts tried by [`kmeans`].
pub const DEFAULT_RESTARTS: usize = 10;

/// [`kmeans_with_restarts`] with [`DEFAULT_RESTARTS`] starts.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansResult, GraphError> {
    kmeans_with_restarts(points, k, seed, max_iters, tol, DEFAULT_RESTARTS)
}

/// Runs [`lloyd`] from `restarts` seeded k-means++ starts and keeps the run
/// with the lowest objective (earliest on ties).
pub fn kmeans_with_restarts(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
    restarts: usize,
) -> Result<KMeansResult, GraphError> {
    let mut rng = seeded(seed, stream::KMEANS);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, k, &mut rng, max_iters, tol)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Lloyd iterations from a k-means++ start. Empty clusters are reseeded at
/// the point farthest from its current center. Stops when the assignment is
/// stable, when no center moves by `tol` or more, or after `max_iters`
/// updates; the returned assignment is always optimal for the returned centers.
pub fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut impl Rng,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansResult, GraphError> {
    let n = points.len();
    if n == 0 || k == 0 {
        return Err(GraphError::Config(format!("k-means needs points and k > 0 (n={n}, k={k})")));
    }
    if k > n {
        return Err(GraphError::TooManyClusters { k, n });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().position(|p| p.len() != dim) {
        return Err(GraphError::Dimension {
            what: "k-means point",
            index: bad,
            expected: dim,
            found: points[bad].len(),
        });
    }

    let mut centers = plus_plus_init(points, k, rng);
    let (mut assignments, mut dists) = assign(points, &centers);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centers)
            .map(|((s, &c), old)| if c == 0 { old.clone() } else { s.into_iter().map(|x| x / c as f64).collect() })
            .collect();
        let mut taken = vec![false; n];
        for cluster in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k <= n");
            taken[far] = true;
            dists[far] = 0.0;
            next[cluster] = points[far].clone();
        }

        let moved = centers.iter().zip(&next).map(|(a, b)| squared_distance(a, b).sqrt()).fold(0.0, f64::max);
        centers = next;
        let (new_assign, new_dists) = assign(points, &centers);
        history.push(new_dists.iter().sum());
        let stable = new_assign == assignments;
        assignments = new_assign;
        dists = new_dists;
        if stable || moved < tol {
            break;
        }
    }

    let objective = dists.iter().sum();
    Ok(KMeansResult { assignments, centers, objective, history, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[(f64, f64)]) -> Vec<Vec<f64>> {
        raw.iter().map(|&(x, y)| vec![x, y]).collect()
    }

    #[test]
    fn four_point_example() {
        let p = pts(&[(0.0, 0.0), (0.0, 1.0), (10.0, 0.0), (10.0, 1.0)]);
        for seed in 0..20 {
            let r = kmeans(&p, 2, seed, 100, 0.0).unwrap();
            assert_eq!(r.assignments[0], r.assignments[1]);
            assert_eq!(r.assignments[2], r.assignments[3]);
            assert_ne!(r.assignments[0], r.assignments[2]);
            assert!((r.objective - 1.0).abs() < 1e-12);
            let mut c = r.centers.clone();
            c.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        }
    }

    #[test]
    fn single_cluster_is_mean() {
        let p = pts(&[(1.0, 2.0), (3.0, 6.0), (5.0, 1.0)]);
        let r = kmeans(&p, 1, 7, 10, 0.0).unwrap();
        assert_eq!(r.centers, vec![vec![3.0, 3.0]]);
        assert_eq!(r.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let p = pts(&[(1.0, 2.0), (3.0, 6.0), (5.0, 1.0), (-1.0, 0.0)]);
        let r = kmeans(&p, 4, 3, 10, 0.0).unwrap();
        assert_eq!(r.objective, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_points_fill_all_clusters() {
        let p = pts(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        let r = kmeans(&p, 3, 0, 10, 0.0).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.centers.len(), 3);
    }

    #[test]
    fn errors() {
        let p = pts(&[(0.0, 0.0)]);
        assert!(matches!(kmeans(&p, 2, 0, 10, 0.0), Err(GraphError::TooManyClusters { k: 2, n: 1 })));
        let bad = vec![vec![0.0, 0.0], vec![1.0]];
        assert!(matches!(kmeans(&bad, 1, 0, 10, 0.0), Err(GraphError::Dimension { index: 1, .. })));
    }
}
