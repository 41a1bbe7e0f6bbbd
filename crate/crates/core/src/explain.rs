//! Neighbor-comparison explanations for negatively predicted instances.
//!
//! For a query the model predicts negative, the explainer retrieves the K
//! nearest positively labeled training rows, compares the query against
//! them feature by feature, and re-predicts the query with every protected
//! attribute flipped to the other group. Two clauses feed the verdict:
//!
//! * `protected_only_differences`: every feature on which the query departs
//!   from its positive neighbors is protected;
//! * `flip_changed_prediction`: the flipped query gets a different prediction.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Cell, EncodedDataset, Encoder, FeatureCode};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::neighbors::{BruteForce, Distance, IndexKind, NeighborIndex};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagMode {
    /// Unfair when both clauses hold, inconclusive when exactly one does.
    #[default]
    Conjunctive,
    /// Unfair when the neighbor-difference clause holds.
    NeighborOnly,
    /// Unfair when the flip clause holds.
    FlipOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Unfair,
    Fair,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    ProtectedOnlyDifferences,
    FlipChangedPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub k: usize,
    pub distance: Distance,
    pub flag_mode: FlagMode,
    /// Bins a numeric query value may sit outside the neighbors' range.
    pub numeric_tol: usize,
    /// Require at least one protected feature among the differences for the
    /// neighbor clause (otherwise an empty difference set satisfies it).
    pub require_protected_difference: bool,
    pub index: IndexKind,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            k: DEFAULT_K,
            distance: Distance::Euclidean,
            flag_mode: FlagMode::Conjunctive,
            numeric_tol: 1,
            require_protected_difference: false,
            index: IndexKind::KdTree,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        self.distance.validate(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_index: Option<usize>,
    pub neighbor_indices: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiff {
    pub feature: String,
    pub protected: bool,
    pub query_value: String,
    /// Modal value(s) for categorical features, bin range for numeric ones.
    pub neighbor_majority_value: String,
    pub differs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipResult {
    pub original_prediction: bool,
    pub original_probability: f64,
    /// Protected attribute -> counterfactual group label.
    pub flipped_assignments: BTreeMap<String, String>,
    pub flipped_prediction: bool,
    pub flipped_probability: f64,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub values: Vec<String>,
    pub prediction: bool,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub index: usize,
    pub distance: f64,
    pub values: Vec<String>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub features: Vec<String>,
    pub query: QueryRecord,
    pub neighbors: Vec<NeighborRecord>,
    pub feature_diffs: Vec<FeatureDiff>,
    pub flip: FlipResult,
    pub verdict: Verdict,
    pub rule_trace: Vec<Clause>,
    pub flag_mode: FlagMode,
}

impl Explanation {
    pub fn differing_features(&self) -> impl Iterator<Item = &FeatureDiff> {
        self.feature_diffs.iter().filter(|d| d.differs)
    }
}

/// Exact K nearest positively labeled rows among `train_rows` (linear scan).
pub fn nearest_positive_neighbors(
    query: &[f64],
    dataset: &EncodedDataset,
    train_rows: &[usize],
    k: usize,
    distance: &Distance,
) -> Result<NeighborSet> {
    distance.validate(dataset.width())?;
    let positives: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|&i| dataset.labels()[i])
        .collect();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if positives.len() < k {
        return Err(Error::InsufficientPositives {
            needed: k,
            found: positives.len(),
        });
    }
    let scan = BruteForce::build(dataset.matrix(), &positives)?;
    let found = scan.query(query, k, distance, None)?;
    Ok(NeighborSet {
        query_index: None,
        neighbor_indices: found.iter().map(|n| n.index).collect(),
        distances: found.iter().map(|n| n.distance).collect(),
    })
}

/// Compares the query against its neighbors feature by feature.
///
/// A categorical feature differs when the query value is not among the
/// neighbors' most frequent values; a numeric feature differs when the query
/// bin lies more than `numeric_tol` bins outside the neighbors' bin range.
pub fn feature_difference_analysis(
    query: &[FeatureCode],
    neighbors: &[Vec<FeatureCode>],
    encoder: &Encoder,
    numeric_tol: usize,
) -> Result<Vec<FeatureDiff>> {
    if neighbors.is_empty() {
        return Err(Error::InvalidArgument("need at least one neighbor".into()));
    }
    let schema = encoder.schema();
    if query.len() != schema.features.len() || neighbors.iter().any(|n| n.len() != query.len()) {
        return Err(Error::Shape {
            expected: schema.features.len(),
            got: query.len(),
        });
    }
    let mut out = Vec::with_capacity(query.len());
    for (fi, spec) in schema.features.iter().enumerate() {
        let q = query[fi];
        let (majority, differs) = match q {
            FeatureCode::Category(qc) => {
                let mut counts: HashMap<Option<usize>, usize> = HashMap::new();
                for n in neighbors {
                    if let FeatureCode::Category(c) = n[fi] {
                        *counts.entry(c).or_default() += 1;
                    }
                }
                let top = counts.values().copied().max().unwrap_or(0);
                let mut modal: Vec<Option<usize>> = counts
                    .into_iter()
                    .filter(|&(_, c)| c == top)
                    .map(|(v, _)| v)
                    .collect();
                modal.sort_unstable();
                let differs = qc.is_none() || !modal.contains(&qc);
                let label = modal
                    .iter()
                    .map(|&c| encoder.code_label(fi, FeatureCode::Category(c)))
                    .collect::<Vec<_>>()
                    .join("|");
                (label, differs)
            }
            FeatureCode::Bin(qb) => {
                let bins: Vec<usize> = neighbors
                    .iter()
                    .filter_map(|n| match n[fi] {
                        FeatureCode::Bin(b) => Some(b),
                        _ => None,
                    })
                    .collect();
                let lo = *bins.iter().min().unwrap_or(&qb);
                let hi = *bins.iter().max().unwrap_or(&qb);
                let differs = qb + numeric_tol < lo || qb > hi + numeric_tol;
                let label = if lo == hi {
                    encoder.code_label(fi, FeatureCode::Bin(lo))
                } else {
                    format!(
                        "{}..{}",
                        encoder.code_label(fi, FeatureCode::Bin(lo)),
                        encoder.code_label(fi, FeatureCode::Bin(hi))
                    )
                };
                (label, differs)
            }
        };
        out.push(FeatureDiff {
            feature: spec.name.clone(),
            protected: spec.protected,
            query_value: encoder.code_label(fi, q),
            neighbor_majority_value: majority,
            differs,
        });
    }
    Ok(out)
}

/// Copy of `row` with every protected attribute moved to the other group.
pub fn flip_row(encoder: &Encoder, row: &[f64]) -> Result<(Vec<f64>, BTreeMap<String, String>)> {
    if row.len() != encoder.width() {
        return Err(Error::Shape {
            expected: encoder.width(),
            got: row.len(),
        });
    }
    let protected = encoder.schema().protected_indices();
    if protected.is_empty() {
        return Err(Error::InvalidArgument("schema declares no protected attribute".into()));
    }
    let mut flipped = row.to_vec();
    let mut assignments = BTreeMap::new();
    for fi in protected {
        let privileged = encoder.is_privileged(fi, row).unwrap_or(false);
        let label = encoder
            .set_group(fi, &mut flipped, !privileged)
            .expect("protected features use group encoding");
        assignments.insert(encoder.schema().features[fi].name.clone(), label);
    }
    Ok((flipped, assignments))
}

pub fn flip_protected(row: &[f64], model: &dyn Predictor, encoder: &Encoder) -> Result<FlipResult> {
    if model.dim() != row.len() {
        return Err(Error::Shape {
            expected: model.dim(),
            got: row.len(),
        });
    }
    let original_probability = model.predict_proba(row)?;
    let (flipped, assignments) = flip_row(encoder, row)?;
    let flipped_probability = model.predict_proba(&flipped)?;
    Ok(flip_result(
        model.threshold(),
        original_probability,
        flipped_probability,
        assignments,
    ))
}

pub(crate) fn flip_result(
    threshold: f64,
    original_probability: f64,
    flipped_probability: f64,
    flipped_assignments: BTreeMap<String, String>,
) -> FlipResult {
    let original_prediction = original_probability >= threshold;
    let flipped_prediction = flipped_probability >= threshold;
    FlipResult {
        original_prediction,
        original_probability,
        flipped_assignments,
        flipped_prediction,
        flipped_probability,
        changed: original_prediction != flipped_prediction,
    }
}

/// Most frequent unprivileged raw category of each protected attribute
/// among `rows`.
fn flip_target_labels(dataset: &EncodedDataset, rows: &[usize]) -> BTreeMap<String, String> {
    let mut in_rows = vec![false; dataset.len()];
    for &i in rows {
        in_rows[i] = true;
    }
    let mut out = BTreeMap::new();
    for fi in dataset.schema().protected_indices() {
        let spec = &dataset.schema().features[fi];
        let privileged = spec.privileged_value.clone();
        let modal = dataset.modal_category(fi, |i| {
            in_rows[i] && !dataset.encoder().is_privileged(fi, dataset.row(i)).unwrap_or(false)
        });
        if let (Some(m), Some(p)) = (modal, privileged) {
            if m != p {
                out.insert(spec.name.clone(), m);
            }
        }
    }
    out
}

/// Verdict and fired clauses for the given clause outcomes.
pub fn decide(mode: FlagMode, neighbor_clause: bool, flip_clause: bool) -> (Verdict, Vec<Clause>) {
    let mut trace = Vec::new();
    if neighbor_clause {
        trace.push(Clause::ProtectedOnlyDifferences);
    }
    if flip_clause {
        trace.push(Clause::FlipChangedPrediction);
    }
    let verdict = match mode {
        FlagMode::Conjunctive => match (neighbor_clause, flip_clause) {
            (true, true) => Verdict::Unfair,
            (false, false) => Verdict::Fair,
            _ => Verdict::Inconclusive,
        },
        FlagMode::NeighborOnly if neighbor_clause => Verdict::Unfair,
        FlagMode::FlipOnly if flip_clause => Verdict::Unfair,
        _ => Verdict::Fair,
    };
    (verdict, trace)
}

/// Explainer over one training split; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct Explainer {
    dataset: Arc<EncodedDataset>,
    train: Vec<usize>,
    positives: NeighborIndex,
    config: ExplainConfig,
    /// Display label per protected attribute for the unprivileged flip target.
    unprivileged_labels: BTreeMap<String, String>,
}

impl Explainer {
    pub fn new(dataset: Arc<EncodedDataset>, train_rows: &[usize], config: ExplainConfig) -> Result<Self> {
        config.validate(dataset.width())?;
        let positives: Vec<usize> = train_rows
            .iter()
            .copied()
            .filter(|&i| dataset.labels()[i])
            .collect();
        if positives.len() < config.k {
            return Err(Error::InsufficientPositives {
                needed: config.k,
                found: positives.len(),
            });
        }
        let index = NeighborIndex::build(config.index, dataset.matrix(), &positives, &config.distance)?;
        let unprivileged_labels = flip_target_labels(&dataset, train_rows);
        Ok(Explainer {
            dataset,
            train: train_rows.to_vec(),
            positives: index,
            config,
            unprivileged_labels,
        })
    }

    /// Protected-attribute flip with assignments named by concrete categories.
    pub fn flip(&self, row: &[f64], model: &dyn Predictor) -> Result<FlipResult> {
        let mut flip = flip_protected(row, model, self.dataset.encoder())?;
        self.name_assignments(&mut flip.flipped_assignments);
        Ok(flip)
    }

    /// Replaces group labels in `assignments` with the modal unprivileged category.
    pub fn name_assignments(&self, assignments: &mut BTreeMap<String, String>) {
        for (attr, label) in assignments.iter_mut() {
            if let Some(name) = self.unprivileged_labels.get(attr) {
                let spec = self.dataset.schema().features.iter().find(|f| &f.name == attr);
                if spec.and_then(|f| f.privileged_value.as_ref()) != Some(label) {
                    *label = name.clone();
                }
            }
        }
    }

    pub fn config(&self) -> &ExplainConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Arc<EncodedDataset> {
        &self.dataset
    }

    pub fn train_rows(&self) -> &[usize] {
        &self.train
    }

    pub fn neighbors(&self, query: &[f64]) -> Result<NeighborSet> {
        let found = self
            .positives
            .query(query, self.config.k, &self.config.distance, None)?;
        Ok(NeighborSet {
            query_index: None,
            neighbor_indices: found.iter().map(|n| n.index).collect(),
            distances: found.iter().map(|n| n.distance).collect(),
        })
    }

    fn display_values(&self, index: usize) -> Result<Vec<String>> {
        Ok(self.dataset.raw_row(index)?.iter().map(Cell::to_string).collect())
    }

    /// Explains dataset row `index`.
    pub fn explain_row(&self, index: usize, model: &dyn Predictor) -> Result<Explanation> {
        if index >= self.dataset.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.dataset.len(),
            });
        }
        let row = self.dataset.row(index).to_vec();
        let flip = self.flip(&row, model)?;
        self.explain_with_flip(Some(index), &row, self.display_values(index)?, flip)
    }

    /// Explains a raw record that need not be part of the dataset.
    pub fn explain_record(&self, record: &[Cell], model: &dyn Predictor) -> Result<Explanation> {
        let row = self.dataset.encoder().encode_record(record)?;
        let flip = self.flip(&row, model)?;
        let values = record.iter().map(Cell::to_string).collect();
        self.explain_with_flip(None, &row, values, flip)
    }

    /// Builds the explanation once the flip has been evaluated.
    pub fn explain_with_flip(
        &self,
        index: Option<usize>,
        row: &[f64],
        values: Vec<String>,
        flip: FlipResult,
    ) -> Result<Explanation> {
        let encoder = self.dataset.encoder();
        let features: Vec<String> = encoder.schema().features.iter().map(|f| f.name.clone()).collect();
        let query = QueryRecord {
            index,
            values,
            prediction: flip.original_prediction,
            probability: flip.original_probability,
        };
        if flip.original_prediction {
            return Ok(Explanation {
                features,
                query,
                neighbors: Vec::new(),
                feature_diffs: Vec::new(),
                flip,
                verdict: Verdict::Fair,
                rule_trace: Vec::new(),
                flag_mode: self.config.flag_mode,
            });
        }
        let set = self.neighbors(row)?;
        let query_codes = encoder.codes(ndarray::ArrayView1::from(row));
        let neighbor_codes: Vec<Vec<FeatureCode>> = set
            .neighbor_indices
            .iter()
            .map(|&i| encoder.codes(self.dataset.matrix().row(i)))
            .collect();
        let diffs = feature_difference_analysis(&query_codes, &neighbor_codes, encoder, self.config.numeric_tol)?;
        let only_protected = diffs.iter().filter(|d| d.differs).all(|d| d.protected);
        let any_protected = diffs.iter().any(|d| d.differs && d.protected);
        let neighbor_clause =
            only_protected && (any_protected || !self.config.require_protected_difference);
        let (verdict, rule_trace) = decide(self.config.flag_mode, neighbor_clause, flip.changed);
        let neighbors = set
            .neighbor_indices
            .iter()
            .zip(&set.distances)
            .map(|(&i, &d)| {
                Ok(NeighborRecord {
                    index: i,
                    distance: d,
                    values: self.display_values(i)?,
                    label: self.dataset.labels()[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Explanation {
            features,
            query,
            neighbors,
            feature_diffs: diffs,
            flip,
            verdict,
            rule_trace,
            flag_mode: self.config.flag_mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, FeatureSpec, RawTable, Schema};
    use crate::model::LogisticModel;

    fn toy() -> EncodedDataset {
        let schema = Schema::new(
            vec![
                FeatureSpec::categorical("job"),
                FeatureSpec::protected("sex", "M"),
                FeatureSpec::numeric("hours"),
            ],
            "y",
            "1",
        )
        .unwrap();
        let rows = [
            (["a", "M"], 40.0, true),
            (["a", "M"], 40.0, true),
            (["a", "F"], 38.0, false),
            (["b", "M"], 10.0, false),
            (["b", "F"], 45.0, true),
            (["a", "M"], 0.0, false),
        ];
        let raw = rows
            .iter()
            .map(|(c, h, _)| {
                vec![
                    Cell::Category(c[0].into()),
                    Cell::Category(c[1].into()),
                    Cell::Number(*h),
                ]
            })
            .collect();
        let labels = rows.iter().map(|r| r.2).collect();
        encode(&RawTable::new(schema, raw, labels).unwrap(), 10).unwrap()
    }

    #[test]
    fn decide_modes() {
        assert_eq!(decide(FlagMode::Conjunctive, true, true).0, Verdict::Unfair);
        assert_eq!(decide(FlagMode::Conjunctive, true, false).0, Verdict::Inconclusive);
        assert_eq!(decide(FlagMode::Conjunctive, false, true).0, Verdict::Inconclusive);
        assert_eq!(decide(FlagMode::Conjunctive, false, false).0, Verdict::Fair);
        assert_eq!(decide(FlagMode::NeighborOnly, true, false).0, Verdict::Unfair);
        assert_eq!(decide(FlagMode::FlipOnly, true, false).0, Verdict::Fair);
        let (v, trace) = decide(FlagMode::FlipOnly, false, true);
        assert_eq!(v, Verdict::Unfair);
        assert_eq!(trace, vec![Clause::FlipChangedPrediction]);
    }

    #[test]
    fn identity_neighbor() {
        let ds = toy();
        let set = nearest_positive_neighbors(ds.row(0), &ds, &[0, 1, 2, 3, 4, 5], 1, &Distance::Euclidean)
            .unwrap();
        assert_eq!(set.neighbor_indices, vec![0]);
        assert_eq!(set.distances, vec![0.0]);
        assert!(matches!(
            nearest_positive_neighbors(ds.row(0), &ds, &[0, 1, 2, 3, 4, 5], 4, &Distance::Euclidean),
            Err(Error::InsufficientPositives { needed: 4, found: 3 })
        ));
    }

    #[test]
    fn identical_neighbors_do_not_differ() {
        let ds = toy();
        let enc = ds.encoder();
        let q = enc.codes(ds.matrix().row(0));
        let diffs = feature_difference_analysis(&q, &[q.clone(), q.clone()], enc, 0).unwrap();
        assert!(diffs.iter().all(|d| !d.differs));
    }

    #[test]
    fn numeric_tolerance() {
        let ds = toy();
        let enc = ds.encoder();
        let q = enc.codes(ds.matrix().row(2)); // 38h, bin 8 over [0,45]
        let n = enc.codes(ds.matrix().row(4)); // 45h, bin 9
        let loose = feature_difference_analysis(&q, std::slice::from_ref(&n), enc, 1).unwrap();
        assert!(!loose[2].differs);
        let strict = feature_difference_analysis(&q, &[n], enc, 0).unwrap();
        assert!(strict[2].differs);
    }

    #[test]
    fn blind_model_never_flips() {
        let ds = toy();
        let mut w = vec![0.3; ds.width()];
        for c in ds.encoder().column_range(1) {
            w[c] = 0.0;
        }
        let m = LogisticModel::new(w, -0.2);
        for i in 0..ds.len() {
            assert!(!flip_protected(ds.row(i), &m, ds.encoder()).unwrap().changed);
        }
    }

    #[test]
    fn flip_assignments_and_involution() {
        let ds = toy();
        let (once, a) = flip_row(ds.encoder(), ds.row(2)).unwrap();
        assert_eq!(a.get("sex").map(String::as_str), Some("M"));
        let (twice, b) = flip_row(ds.encoder(), &once).unwrap();
        assert_eq!(b.get("sex").map(String::as_str), Some("F"));
        assert_eq!(twice, ds.row(2));
    }

    #[test]
    fn positive_prediction_is_fair_without_trace() {
        let ds = Arc::new(toy());
        let ex = Explainer::new(ds.clone(), &[0, 1, 2, 3, 4, 5], ExplainConfig { k: 2, ..Default::default() })
            .unwrap();
        let m = LogisticModel::new(vec![0.0; ds.width()], 5.0);
        let e = ex.explain_row(2, &m).unwrap();
        assert_eq!(e.verdict, Verdict::Fair);
        assert!(e.rule_trace.is_empty() && e.neighbors.is_empty());
    }

    #[test]
    fn sex_driven_model_flags_female_query() {
        let ds = Arc::new(toy());
        let mut w = vec![0.0; ds.width()];
        let sex = ds.encoder().column_range(1);
        w[sex.start] = 4.0;
        let m = LogisticModel::new(w, -2.0);
        let config = ExplainConfig {
            k: 2,
            flag_mode: FlagMode::FlipOnly,
            ..Default::default()
        };
        let ex = Explainer::new(ds.clone(), &[0, 1, 3, 4, 5], config).unwrap();
        let e = ex.explain_row(2, &m).unwrap();
        assert!(!e.query.prediction);
        assert!(e.flip.changed);
        assert_eq!(e.verdict, Verdict::Unfair);
        assert!(!e.rule_trace.is_empty());
        assert_eq!(e.feature_diffs.len(), 3);
    }
}
