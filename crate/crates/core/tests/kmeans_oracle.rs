//! k-means against exhaustive 2-partition search on small instances.

mod common;

use common::oracle::{brute_force_two_means, separated_instance};
use dugraph::graph::kmeans::{kmeans, nearest, squared_distance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn separated_instances_reach_global_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000u64 {
        let points = separated_instance(&mut rng);
        let best = brute_force_two_means(&points);
        let r = kmeans(&points, 2, trial, 100, 0.0).unwrap();
        assert!(
            r.objective <= best * (1.0 + 1e-12) + 1e-12,
            "trial {trial}: lloyd {} vs optimum {best} on {points:?}",
            r.objective
        );
    }
}

fn random_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 2..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn lloyd_objective_never_increases(points in random_points(), seed in 0u64..1000) {
        let k = 1 + (seed as usize) % points.len().min(3);
        let r = kmeans(&points, k, seed, 50, 0.0).unwrap();
        for w in r.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "history {:?}", r.history);
        }
    }

    #[test]
    fn final_assignment_is_locally_optimal(points in random_points(), seed in 0u64..1000) {
        let r = kmeans(&points, 2, seed, 50, 0.0).unwrap();
        for (p, &a) in points.iter().zip(&r.assignments) {
            let own = squared_distance(p, &r.centers[a]);
            for c in &r.centers {
                prop_assert!(squared_distance(p, c) >= own);
            }
            prop_assert_eq!(nearest(p, &r.centers).0, a);
        }
    }
}

#[test]
fn brute_force_matches_hand_example() {
    let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
    assert!((brute_force_two_means(&pts) - 1.0).abs() < 1e-12);
}
