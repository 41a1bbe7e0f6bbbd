mod common;

use common::random_matrix;
use fairknn::fairness::{
    consistency, consistency_from_neighbors, group_confusions, group_diffs, ConsistencyForm, DpMode, Membership,
    MetricReport,
};
use fairknn::neighbors::Distance;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Eight rows: the first four privileged, the last four unprivileged.
const LABELS: [bool; 8] = [true, true, false, false, true, true, true, false];
const PREDS: [bool; 8] = [true, true, true, false, true, false, false, false];
const PRIVILEGED: [bool; 8] = [true, true, true, true, false, false, false, false];

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn golden_group_metrics() {
    let (p, u) = group_confusions(&PREDS, &LABELS, &PRIVILEGED).unwrap();
    assert_eq!((p.tp, p.fp, p.tn, p.fn_), (2, 1, 1, 0));
    assert_eq!((u.tp, u.fp, u.tn, u.fn_), (1, 0, 1, 2));
    // privileged: TPR 1, FPR 1/2, TNR 1/2, accuracy 3/4, positive rate 3/4
    // unprivileged: TPR 1/3, FPR 0, TNR 1, accuracy 1/2, positive rate 1/4
    let d = group_diffs(&p, &u, DpMode::TprFpr).unwrap();
    assert!(close(d.dp_diff, 2.0 / 3.0));
    assert!(close(d.eq_opp_diff, 2.0 / 3.0));
    assert!(close(d.eq_acc_diff, 0.25));
    assert!(close(d.eq_odds_diff, 2.0 / 3.0));
    let d = group_diffs(&p, &u, DpMode::PositiveRate).unwrap();
    assert!(close(d.dp_diff, 0.5));
}

#[test]
fn golden_consistency() {
    let x = Array2::from_shape_vec((8, 1), vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0]).unwrap();
    // k = 2 neighbors: {1,2} {0,2} {1,3} {2,1} {5,6} {4,6} {5,7} {6,5}
    // mean form deviations 0 0 .5 1 1 .5 0 0, total 3 -> 1 - 3/8
    // printed form deviations 1 1 0 2 1 1 0 0, total 6 -> 1 - 6/16
    for form in [ConsistencyForm::NeighborMean, ConsistencyForm::AsPrinted] {
        let c = consistency(&PREDS, x.view(), 2, &Distance::Euclidean, form).unwrap();
        assert!(close(c, 0.625), "{form:?}: {c}");
    }
}

#[test]
fn constant_predictions_have_no_parity_gap() {
    for value in [true, false] {
        let preds = [value; 8];
        let (p, u) = group_confusions(&preds, &LABELS, &PRIVILEGED).unwrap();
        let d = group_diffs(&p, &u, DpMode::PositiveRate).unwrap();
        assert_eq!(d.dp_diff, 0.0);
    }
}

#[test]
fn undefined_rates_are_reported_not_zeroed() {
    let labels = [true, true, false, false, false, false, false, false];
    let report = MetricReport::compute(
        &PREDS,
        &labels,
        &[Membership {
            attribute: "sex".into(),
            privileged: PRIVILEGED.to_vec(),
        }],
        &vec![vec![1]; 8],
        ConsistencyForm::NeighborMean,
        DpMode::TprFpr,
    )
    .unwrap();
    let sex = report.attribute("sex").unwrap();
    assert!(sex.diffs.is_none());
    assert!(sex.error.as_deref().unwrap().contains("unprivileged"));
}

#[test]
fn empty_group_is_an_error() {
    assert!(group_confusions(&PREDS, &LABELS, &[true; 8]).is_err());
}

fn bools(len: usize) -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn swapping_groups_leaves_differences_unchanged(
        (preds, labels, groups) in (4usize..60).prop_flat_map(|n| (bools(n), bools(n), bools(n)))
    ) {
        let swapped: Vec<bool> = groups.iter().map(|g| !g).collect();
        let a = group_confusions(&preds, &labels, &groups).and_then(|(p, u)| group_diffs(&p, &u, DpMode::TprFpr));
        let b = group_confusions(&preds, &labels, &swapped).and_then(|(p, u)| group_diffs(&p, &u, DpMode::TprFpr));
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one side undefined: {:?} / {:?}", a, b),
        }
    }

    #[test]
    fn identical_groups_have_zero_gaps(half in (2usize..30).prop_flat_map(|n| (bools(n), bools(n)))) {
        let (preds, labels) = half;
        let preds2 = [preds.clone(), preds].concat();
        let labels2 = [labels.clone(), labels].concat();
        let groups: Vec<bool> = (0..preds2.len()).map(|i| i < preds2.len() / 2).collect();
        if let Ok((p, u)) = group_confusions(&preds2, &labels2, &groups) {
            if let Ok(d) = group_diffs(&p, &u, DpMode::TprFpr) {
                prop_assert_eq!(d.dp_diff, 0.0);
                prop_assert_eq!(d.eq_opp_diff, 0.0);
                prop_assert_eq!(d.eq_acc_diff, 0.0);
                prop_assert_eq!(d.eq_odds_diff, 0.0);
            }
        }
    }

    #[test]
    fn consistency_is_bounded_and_label_symmetric(seed in any::<u64>(), n in 3usize..50, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n, 2, true);
        let preds: Vec<bool> = (0..n).map(|i| (i * 7 + seed as usize).is_multiple_of(3)).collect();
        let k = k.min(n - 1);
        let c = consistency(&preds, m.view(), k, &Distance::Euclidean, ConsistencyForm::NeighborMean).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        let flipped: Vec<bool> = preds.iter().map(|p| !p).collect();
        let c2 = consistency(&flipped, m.view(), k, &Distance::Euclidean, ConsistencyForm::NeighborMean).unwrap();
        prop_assert!((c - c2).abs() < 1e-12);
        let constant = consistency(&vec![true; n], m.view(), k, &Distance::Euclidean, ConsistencyForm::NeighborMean).unwrap();
        prop_assert_eq!(constant, 1.0);
    }
}

#[test]
fn neighbor_lists_must_share_a_length() {
    assert!(consistency_from_neighbors(&[true, false], &[vec![1], vec![]], ConsistencyForm::NeighborMean).is_err());
}
