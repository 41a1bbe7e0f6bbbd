mod common;

use common::{brute_knn, metrics_under_test, random_matrix};
use fairknn::neighbors::{BruteForce, Distance, IndexKind, KdTree, NeighborIndex};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn metric(choice: u8, d: usize) -> Distance {
    metrics_under_test(d).swap_remove(choice as usize % 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kd_tree_matches_exhaustive_search(
        seed in any::<u64>(),
        n in 1usize..80,
        d in 1usize..6,
        k in 1usize..25,
        ties in any::<bool>(),
        choice in any::<u8>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n, d, ties);
        let distance = metric(choice, d);
        let ids: Vec<usize> = (0..n).collect();
        let tree = KdTree::build(m.view(), &ids, 4, &distance).unwrap();
        let q = random_matrix(&mut rng, 1, d, ties);
        let q = q.row(0).to_vec();
        let k = k.min(n);
        let got = tree.query(&q, k, &distance, None).unwrap();
        let want = brute_knn(m.view(), &ids, &q, k, &distance, None);
        prop_assert_eq!(got.iter().map(|n| n.index).collect::<Vec<_>>(),
                        want.iter().map(|n| n.index).collect::<Vec<_>>());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.distance - w.distance).abs() <= 1e-12);
        }
    }

    #[test]
    fn exclusion_drops_only_the_query_row(seed in any::<u64>(), n in 3usize..40, choice in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n, 3, true);
        let distance = metric(choice, 3);
        let ids: Vec<usize> = (0..n).collect();
        let index = NeighborIndex::build(IndexKind::KdTree, m.view(), &ids, &distance).unwrap();
        let brute = BruteForce::build(m.view(), &ids).unwrap();
        for i in 0..n {
            let q = m.row(i).to_vec();
            let a = index.query(&q, n - 1, &distance, Some(i)).unwrap();
            let b = brute.query(&q, n - 1, &distance, Some(i)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.iter().all(|nb| nb.index != i));
            prop_assert_eq!(a.len(), n - 1);
        }
    }

    #[test]
    fn distance_axioms(seed in any::<u64>(), d in 1usize..8, choice in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 3, d, false);
        let distance = metric(choice, d);
        let (a, b, c) = (m.row(0).to_vec(), m.row(1).to_vec(), m.row(2).to_vec());
        prop_assert_eq!(distance.eval(&a, &a), 0.0);
        prop_assert!(distance.eval(&a, &b) >= 0.0);
        prop_assert!((distance.eval(&a, &b) - distance.eval(&b, &a)).abs() <= 1e-12);
        prop_assert!(distance.eval(&a, &c) <= distance.eval(&a, &b) + distance.eval(&b, &c) + 1e-9);
    }

    #[test]
    fn uniform_weight_scaling_keeps_neighbor_order(seed in any::<u64>(), scale in 0.01f64..100.0, p in 1.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 30, 4, false);
        let ids: Vec<usize> = (0..30).collect();
        let base = Distance::WeightedMinkowski { p, weights: vec![1.0, 2.0, 0.5, 1.0] };
        let scaled = Distance::WeightedMinkowski { p, weights: vec![scale, 2.0 * scale, 0.5 * scale, scale] };
        let q = m.row(0).to_vec();
        let a: Vec<usize> = brute_knn(m.view(), &ids, &q, 10, &base, Some(0)).iter().map(|n| n.index).collect();
        let tree = KdTree::build(m.view(), &ids, 4, &scaled).unwrap();
        let b: Vec<usize> = tree.query(&q, 10, &scaled, Some(0)).unwrap().iter().map(|n| n.index).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn zero_weight_ignores_a_column() {
    let m = Array2::from_shape_vec((3, 2), vec![0.0, 0.0, 0.1, 9.0, 5.0, 0.0]).unwrap();
    let d = Distance::WeightedMinkowski {
        p: 2.0,
        weights: vec![1.0, 0.0],
    };
    let ids = [1, 2];
    let got = BruteForce::build(m.view(), &ids).unwrap().query(&[0.0, 0.0], 1, &d, None).unwrap();
    assert_eq!(got[0].index, 1);
}

#[test]
fn k_larger_than_the_pool_is_an_error() {
    let m = Array2::<f64>::zeros((4, 2));
    let ids: Vec<usize> = (0..4).collect();
    let tree = KdTree::build(m.view(), &ids, 2, &Distance::Euclidean).unwrap();
    assert!(tree.query(&[0.0, 0.0], 5, &Distance::Euclidean, None).is_err());
    assert!(tree.query(&[0.0, 0.0], 4, &Distance::Euclidean, Some(0)).is_err());
    assert!(tree.query(&[0.0], 1, &Distance::Euclidean, None).is_err());
}

#[test]
fn all_equal_points_break_ties_by_index() {
    let m = Array2::<f64>::ones((20, 3));
    let ids: Vec<usize> = (0..20).rev().collect();
    let tree = KdTree::build(m.view(), &ids, 3, &Distance::Manhattan).unwrap();
    let got: Vec<usize> = tree
        .query(&[1.0, 1.0, 1.0], 5, &Distance::Manhattan, Some(2))
        .unwrap()
        .iter()
        .map(|n| n.index)
        .collect();
    assert_eq!(got, vec![0, 1, 3, 4, 5]);
}
