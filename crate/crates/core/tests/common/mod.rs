//! Synthetic datasets and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fairknn::data::{encode, Cell, EncodedDataset, FeatureSpec, RawTable, Schema};
use fairknn::neighbors::{Distance, Neighbor};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How the synthetic label is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// Positive exactly for privileged sex.
    Sex,
    /// Positive when hours exceed 40, with 10% noise; independent of the protected columns.
    Hours,
}

pub fn synthetic_schema() -> Schema {
    Schema::new(
        vec![
            FeatureSpec::categorical("job"),
            FeatureSpec::numeric("hours"),
            FeatureSpec::protected("race", "W"),
            FeatureSpec::protected("sex", "M"),
        ],
        "label",
        "yes",
    )
    .unwrap()
}

pub struct SyntheticRow {
    pub job: &'static str,
    pub hours: f64,
    pub race: &'static str,
    pub sex: &'static str,
    pub label: bool,
}

pub fn synthetic_rows(n: usize, seed: u64, rule: LabelRule) -> Vec<SyntheticRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs = ["clerk", "smith", "nurse"];
    (0..n)
        .map(|_| {
            let job = jobs[rng.random_range(0..jobs.len())];
            let hours = rng.random_range(20..=60) as f64;
            let race = if rng.random_bool(0.5) { "W" } else { "B" };
            let sex = if rng.random_bool(0.5) { "M" } else { "F" };
            let label = match rule {
                LabelRule::Sex => sex == "M",
                LabelRule::Hours => (hours > 40.0) != rng.random_bool(0.1),
            };
            SyntheticRow {
                job,
                hours,
                race,
                sex,
                label,
            }
        })
        .collect()
}

pub fn synthetic_table(n: usize, seed: u64, rule: LabelRule) -> RawTable {
    let rows = synthetic_rows(n, seed, rule);
    let cells = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Category(r.job.into()),
                Cell::Number(r.hours),
                Cell::Category(r.race.into()),
                Cell::Category(r.sex.into()),
            ]
        })
        .collect();
    let labels = rows.iter().map(|r| r.label).collect();
    RawTable::new(synthetic_schema(), cells, labels).unwrap()
}

pub fn synthetic_dataset(n: usize, seed: u64, rule: LabelRule) -> EncodedDataset {
    encode(&synthetic_table(n, seed, rule), 10).unwrap()
}

/// Writes schema, CSV and an audit config into `dir`; returns the config path.
pub fn write_synthetic(dir: &Path, n: usize, seed: u64, rule: LabelRule, extra: serde_json::Value) -> PathBuf {
    let schema = serde_json::json!({
        "features": [
            { "name": "job", "kind": "categorical" },
            { "name": "hours", "kind": "numeric" },
            { "name": "race", "kind": "categorical", "protected": true, "privileged_value": "W" },
            { "name": "sex", "kind": "categorical", "protected": true, "privileged_value": "M" }
        ],
        "label_name": "label",
        "positive_label": "yes"
    });
    std::fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&schema).unwrap()).unwrap();
    let mut csv = String::from("job,hours,race,sex,label\n");
    for r in synthetic_rows(n, seed, rule) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.job,
            r.hours,
            r.race,
            r.sex,
            if r.label { "yes" } else { "no" }
        ));
    }
    std::fs::write(dir.join("data.csv"), csv).unwrap();
    let mut config = serde_json::json!({
        "schema": "schema.json",
        "data": "data.csv",
        "seeds": [0, 1],
        "model": { "type": "logistic", "epochs": 300 }
    });
    if let (Some(base), Some(more)) = (config.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

/// Random matrix; with `ties`, values are drawn from a small grid so equal
/// distances are common.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, ties: bool) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| {
        if ties {
            rng.random_range(0..4) as f64
        } else {
            rng.random_range(-1.0..1.0)
        }
    })
}

/// Exhaustive k-nearest search over `ids`, ordered by distance then index.
pub fn brute_knn(
    matrix: ArrayView2<'_, f64>,
    ids: &[usize],
    query: &[f64],
    k: usize,
    distance: &Distance,
    exclude: Option<usize>,
) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = ids
        .iter()
        .filter(|&&i| Some(i) != exclude)
        .map(|&i| Neighbor {
            index: i,
            distance: distance.eval(query, matrix.row(i).as_slice().unwrap()),
        })
        .collect();
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    all.truncate(k);
    all
}

pub fn metrics_under_test(d: usize) -> Vec<Distance> {
    vec![
        Distance::Euclidean,
        Distance::Manhattan,
        Distance::Chebyshev,
        Distance::Minkowski { p: 3.0 },
        Distance::WeightedMinkowski {
            p: 2.0,
            weights: (0..d).map(|j| 0.5 + j as f64).collect(),
        },
    ]
}

/// Group gaps counted directly from raw cells: `[dp, eq_opp, eq_acc, eq_odds]`
/// with the TPR/FPR form of demographic parity.
pub fn recount_gaps(preds: &[bool], labels: &[bool], privileged: &[bool]) -> Option<[f64; 4]> {
    let mut c = [[0usize; 4]; 2]; // per group: tp fp tn fn
    for ((&p, &y), &g) in preds.iter().zip(labels).zip(privileged) {
        let slot = match (p, y) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        c[usize::from(!g)][slot] += 1;
    }
    let rate = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let mut per = Vec::new();
    for g in c {
        let [tp, fp, tn, fn_] = g;
        per.push((
            rate(tp, tp + fn_)?,
            rate(fp, fp + tn)?,
            rate(tn, fp + tn)?,
            rate(tp + tn, tp + fp + tn + fn_)?,
        ));
    }
    let (a, b) = (per[0], per[1]);
    let tpr = (a.0 - b.0).abs();
    Some([
        tpr.max((a.1 - b.1).abs()),
        tpr,
        (a.3 - b.3).abs(),
        tpr.max((a.2 - b.2).abs()),
    ])
}

/// Neighbor-mean consistency with exhaustive neighbor search.
pub fn recount_consistency(rows: ArrayView2<'_, f64>, preds: &[bool], k: usize, distance: &Distance) -> f64 {
    let ids: Vec<usize> = (0..rows.nrows()).collect();
    let v = |b: bool| if b { 1.0 } else { 0.0 };
    let total: f64 = ids
        .iter()
        .map(|&i| {
            let q = rows.row(i).to_vec();
            let nb = brute_knn(rows, &ids, &q, k, distance, Some(i));
            let mean = nb.iter().map(|n| v(preds[n.index])).sum::<f64>() / k as f64;
            (v(preds[i]) - mean).abs()
        })
        .sum();
    1.0 - total / rows.nrows() as f64
}

/// Recomputes one seed's pre and post metrics from its stored predictions
/// and proposals; returns the largest deviation from the stored values.
pub fn recount_seed(
    seed: &fairknn::audit::SeedResult,
    dataset: &EncodedDataset,
    distance: &Distance,
    with_consistency: bool,
) -> f64 {
    let pre = seed.predictions();
    let mut post = pre.clone();
    for p in &seed.proposals {
        let pos = seed.test_indices.binary_search(&p.query_index).unwrap();
        post[pos] = p.proposed_prediction;
    }
    let labels: Vec<bool> = seed.test_indices.iter().map(|&i| dataset.labels()[i]).collect();
    let schema = dataset.schema();
    let mut worst: f64 = 0.0;
    for (preds, report) in [(&pre, &seed.metrics_pre), (&post, &seed.metrics_post)] {
        for spec in schema.features.iter().filter(|f| f.protected) {
            let fi = schema.feature_index(&spec.name).unwrap();
            let privileged: Vec<bool> = seed
                .test_indices
                .iter()
                .map(|&i| {
                    let cell = &dataset.raw_row(i).unwrap()[fi];
                    Some(cell.to_string().as_str()) == spec.privileged_value.as_deref()
                })
                .collect();
            let stored = report.attribute(&spec.name).unwrap();
            match (recount_gaps(preds, &labels, &privileged), &stored.diffs) {
                (Some(g), Some(d)) => {
                    for (a, b) in g.iter().zip([d.dp_diff, d.eq_opp_diff, d.eq_acc_diff, d.eq_odds_diff]) {
                        worst = worst.max((a - b).abs());
                    }
                }
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
        if with_consistency {
            let rows = dataset.matrix().select(ndarray::Axis(0), &seed.test_indices);
            let c = recount_consistency(rows.view(), preds, report.n_neighbors, distance);
            worst = worst.max((c - report.consistency).abs());
        }
    }
    worst
}
