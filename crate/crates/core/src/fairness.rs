//! Group fairness differences and the consistency score.
//!
//! The four group metrics follow their literal definitions:
//!
//! | metric            | difference                          |
//! |-------------------|-------------------------------------|
//! | demographic parity| `max(|dTPR|, |dFPR|)`               |
//! | equal opportunity | `|dTPR|`                            |
//! | equal accuracy    | `|d accuracy|`                      |
//! | equal odds        | `max(|dTPR|, |dTNR|)`               |
//!
//! Demographic parity can alternatively be computed as positive-prediction
//! rate parity via [`DpMode::PositiveRate`]. Rates with a zero denominator
//! are errors rather than zeros.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::{Distance, IndexKind, NeighborIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Privileged,
    Unprivileged,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Privileged => "privileged",
            Group::Unprivileged => "unprivileged",
        }
    }
}

fn ratio(num: usize, den: usize, rate: &'static str, group: &str) -> Result<f64> {
    if den == 0 {
        Err(Error::UndefinedMetric {
            rate,
            group: group.to_string(),
        })
    } else {
        Ok(num as f64 / den as f64)
    }
}

impl GroupConfusion {
    pub fn size(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn tpr(&self, group: &str) -> Result<f64> {
        ratio(self.tp, self.tp + self.fn_, "TPR", group)
    }

    pub fn fpr(&self, group: &str) -> Result<f64> {
        ratio(self.fp, self.fp + self.tn, "FPR", group)
    }

    pub fn tnr(&self, group: &str) -> Result<f64> {
        ratio(self.tn, self.fp + self.tn, "TNR", group)
    }

    pub fn accuracy(&self, group: &str) -> Result<f64> {
        ratio(self.tp + self.tn, self.size(), "accuracy", group)
    }

    pub fn positive_rate(&self, group: &str) -> Result<f64> {
        ratio(self.tp + self.fp, self.size(), "positive rate", group)
    }

    fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Confusion matrices for `(privileged, unprivileged)` rows.
pub fn group_confusions(
    predictions: &[bool],
    labels: &[bool],
    privileged: &[bool],
) -> Result<(GroupConfusion, GroupConfusion)> {
    if predictions.len() != labels.len() || labels.len() != privileged.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} predictions, {} labels, {} memberships",
            predictions.len(),
            labels.len(),
            privileged.len()
        )));
    }
    let mut priv_c = GroupConfusion::default();
    let mut unpriv_c = GroupConfusion::default();
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(privileged) {
        if g {
            priv_c.add(p, y);
        } else {
            unpriv_c.add(p, y);
        }
    }
    if priv_c.size() == 0 {
        return Err(Error::EmptyGroup(Group::Privileged.name().into()));
    }
    if unpriv_c.size() == 0 {
        return Err(Error::EmptyGroup(Group::Unprivileged.name().into()));
    }
    Ok((priv_c, unpriv_c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpMode {
    /// TPR and FPR parity, as in the literal definition.
    #[default]
    TprFpr,
    /// Positive-prediction-rate parity.
    PositiveRate,
}

fn rate_gap(
    a: &GroupConfusion,
    b: &GroupConfusion,
    rate: fn(&GroupConfusion, &str) -> Result<f64>,
) -> Result<f64> {
    Ok((rate(a, "privileged")? - rate(b, "unprivileged")?).abs())
}

pub fn demographic_parity_diff(
    privileged: &GroupConfusion,
    unprivileged: &GroupConfusion,
    mode: DpMode,
) -> Result<f64> {
    match mode {
        DpMode::TprFpr => Ok(rate_gap(privileged, unprivileged, GroupConfusion::tpr)?
            .max(rate_gap(privileged, unprivileged, GroupConfusion::fpr)?)),
        DpMode::PositiveRate => rate_gap(privileged, unprivileged, GroupConfusion::positive_rate),
    }
}

pub fn equal_opportunity_diff(privileged: &GroupConfusion, unprivileged: &GroupConfusion) -> Result<f64> {
    rate_gap(privileged, unprivileged, GroupConfusion::tpr)
}

pub fn equal_accuracy_diff(privileged: &GroupConfusion, unprivileged: &GroupConfusion) -> Result<f64> {
    rate_gap(privileged, unprivileged, GroupConfusion::accuracy)
}

pub fn equal_odds_diff(privileged: &GroupConfusion, unprivileged: &GroupConfusion) -> Result<f64> {
    Ok(rate_gap(privileged, unprivileged, GroupConfusion::tpr)?
        .max(rate_gap(privileged, unprivileged, GroupConfusion::tnr)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupDiffs {
    pub dp_diff: f64,
    pub eq_opp_diff: f64,
    pub eq_acc_diff: f64,
    pub eq_odds_diff: f64,
}

pub fn group_diffs(
    privileged: &GroupConfusion,
    unprivileged: &GroupConfusion,
    mode: DpMode,
) -> Result<GroupDiffs> {
    Ok(GroupDiffs {
        dp_diff: demographic_parity_diff(privileged, unprivileged, mode)?,
        eq_opp_diff: equal_opportunity_diff(privileged, unprivileged)?,
        eq_acc_diff: equal_accuracy_diff(privileged, unprivileged)?,
        eq_odds_diff: equal_odds_diff(privileged, unprivileged)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyForm {
    /// `1 - (1/n) sum_i |y_i - mean_j y_j|`
    #[default]
    NeighborMean,
    /// `1 - 1/(n k) sum_i |y_i - sum_j y_j|`, the formula exactly as usually printed.
    AsPrinted,
}

/// Consistency from precomputed neighbor lists; `neighbors[i]` belongs to row `i`.
pub fn consistency_from_neighbors(
    predictions: &[bool],
    neighbors: &[Vec<usize>],
    form: ConsistencyForm,
) -> Result<f64> {
    let n = predictions.len();
    if n == 0 || neighbors.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} predictions but {} neighbor lists",
            neighbors.len()
        )));
    }
    let k = neighbors[0].len();
    if k == 0 || neighbors.iter().any(|nb| nb.len() != k) {
        return Err(Error::InvalidInput("neighbor lists must share a non-zero length".into()));
    }
    let value = |i: usize| if predictions[i] { 1.0 } else { 0.0 };
    let total: f64 = (0..n)
        .map(|i| {
            let sum: f64 = neighbors[i].iter().map(|&j| value(j)).sum();
            match form {
                ConsistencyForm::NeighborMean => (value(i) - sum / k as f64).abs(),
                ConsistencyForm::AsPrinted => (value(i) - sum).abs(),
            }
        })
        .sum();
    Ok(match form {
        ConsistencyForm::NeighborMean => 1.0 - total / n as f64,
        ConsistencyForm::AsPrinted => 1.0 - total / (n * k) as f64,
    })
}

/// Consistency over `rows` with neighbors found by exact search (self excluded).
pub fn consistency(
    predictions: &[bool],
    rows: ArrayView2<'_, f64>,
    n_neighbors: usize,
    distance: &Distance,
    form: ConsistencyForm,
) -> Result<f64> {
    let n = rows.nrows();
    if predictions.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {n} rows",
            predictions.len()
        )));
    }
    if n_neighbors == 0 || n_neighbors >= n {
        return Err(Error::InvalidArgument(format!(
            "n_neighbors = {n_neighbors} must lie in 1..{n}"
        )));
    }
    let neighbors = neighbor_lists(rows, n_neighbors, distance, IndexKind::KdTree)?;
    consistency_from_neighbors(predictions, &neighbors, form)
}

/// `k` nearest other rows for every row of `rows`.
pub fn neighbor_lists(
    rows: ArrayView2<'_, f64>,
    k: usize,
    distance: &Distance,
    kind: IndexKind,
) -> Result<Vec<Vec<usize>>> {
    let ids: Vec<usize> = (0..rows.nrows()).collect();
    let index = NeighborIndex::build(kind, rows, &ids, distance)?;
    ids.par_iter()
        .map(|&i| {
            let q = rows.row(i).to_vec();
            Ok(index
                .query(&q, k, distance, Some(i))?
                .into_iter()
                .map(|n| n.index)
                .collect())
        })
        .collect()
}

/// Group metrics for one protected attribute, or the reason they are undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMetrics {
    pub attribute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privileged: Option<GroupConfusion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unprivileged: Option<GroupConfusion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffs: Option<GroupDiffs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AttributeMetrics {
    pub fn compute(
        attribute: &str,
        predictions: &[bool],
        labels: &[bool],
        privileged: &[bool],
        mode: DpMode,
    ) -> Self {
        let mut out = AttributeMetrics {
            attribute: attribute.to_string(),
            privileged: None,
            unprivileged: None,
            diffs: None,
            error: None,
        };
        match group_confusions(predictions, labels, privileged) {
            Ok((p, u)) => {
                out.privileged = Some(p);
                out.unprivileged = Some(u);
                match group_diffs(&p, &u, mode) {
                    Ok(d) => out.diffs = Some(d),
                    Err(e) => out.error = Some(e.to_string()),
                }
            }
            Err(e) => out.error = Some(e.to_string()),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub attributes: Vec<AttributeMetrics>,
    pub consistency: f64,
    /// Instances the group metrics were computed over.
    pub n: usize,
    pub n_neighbors: usize,
}

/// Privileged-group membership of one protected attribute, by position.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub attribute: String,
    pub privileged: Vec<bool>,
}

impl MetricReport {
    /// Group metrics per attribute plus consistency from `neighbors`
    /// (`neighbors[i]` holds positions of the nearest other instances).
    pub fn compute(
        predictions: &[bool],
        labels: &[bool],
        groups: &[Membership],
        neighbors: &[Vec<usize>],
        form: ConsistencyForm,
        mode: DpMode,
    ) -> Result<Self> {
        let attributes = groups
            .iter()
            .map(|g| AttributeMetrics::compute(&g.attribute, predictions, labels, &g.privileged, mode))
            .collect();
        Ok(MetricReport {
            attributes,
            consistency: consistency_from_neighbors(predictions, neighbors, form)?,
            n: predictions.len(),
            n_neighbors: neighbors.first().map_or(0, Vec::len),
        })
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeMetrics> {
        self.attributes.iter().find(|a| a.attribute == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_counts() {
        let preds = [true, true, false, false];
        let labels = [true, true, false, false];
        let membership = [true, true, false, false];
        let (p, u) = group_confusions(&preds, &labels, &membership).unwrap();
        assert_eq!(p, GroupConfusion { tp: 2, fp: 0, tn: 0, fn_: 0 });
        assert_eq!(u, GroupConfusion { tp: 0, fp: 0, tn: 2, fn_: 0 });
    }

    #[test]
    fn empty_group() {
        assert!(matches!(
            group_confusions(&[true], &[true], &[true]),
            Err(Error::EmptyGroup(g)) if g == "unprivileged"
        ));
    }

    #[test]
    fn undefined_rate_names_the_rate() {
        let p = GroupConfusion { tp: 1, fp: 1, tn: 1, fn_: 1 };
        let u = GroupConfusion { tp: 0, fp: 1, tn: 1, fn_: 0 };
        match equal_opportunity_diff(&p, &u) {
            Err(Error::UndefinedMetric { rate, group }) => {
                assert_eq!(rate, "TPR");
                assert_eq!(group, "unprivileged");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn simple_differences() {
        // TPR 1.0 vs 0.5, FPR 0.5 both
        let p = GroupConfusion { tp: 2, fn_: 0, fp: 1, tn: 1 };
        let u = GroupConfusion { tp: 1, fn_: 1, fp: 1, tn: 1 };
        assert_eq!(demographic_parity_diff(&p, &u, DpMode::TprFpr).unwrap(), 0.5);
        // accuracy 9/10 vs 7/10
        let p = GroupConfusion { tp: 5, fn_: 0, fp: 1, tn: 4 };
        let u = GroupConfusion { tp: 3, fn_: 2, fp: 1, tn: 4 };
        assert!((equal_accuracy_diff(&p, &u).unwrap() - 0.2).abs() < 1e-12);
        let same = group_diffs(&p, &p, DpMode::TprFpr).unwrap();
        assert_eq!(same.dp_diff + same.eq_opp_diff + same.eq_acc_diff + same.eq_odds_diff, 0.0);
    }

    #[test]
    fn printed_form_penalizes_constant_predictor() {
        let preds = vec![true; 6];
        let nb: Vec<Vec<usize>> = (0..6).map(|i| (0..6).filter(|&j| j != i).collect()).collect();
        assert_eq!(consistency_from_neighbors(&preds, &nb, ConsistencyForm::NeighborMean).unwrap(), 1.0);
        // |1 - 5| / 5 = 0.8 per row
        let printed = consistency_from_neighbors(&preds, &nb, ConsistencyForm::AsPrinted).unwrap();
        assert!((printed - 0.2).abs() < 1e-12);
    }

    #[test]
    fn consistency_argument_checks() {
        let rows = ndarray::Array2::<f64>::zeros((3, 1));
        let d = Distance::Euclidean;
        assert!(consistency(&[true; 3], rows.view(), 3, &d, ConsistencyForm::NeighborMean).is_err());
        assert!(consistency(&[true; 3], rows.view(), 0, &d, ConsistencyForm::NeighborMean).is_err());
    }
}
