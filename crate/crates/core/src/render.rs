//! Plain-text rendering for terminals.
//!
//! Explanations print as a table of the neighbor rows followed by the query
//! row; query cells on differing features carry a `*` prefix.

use std::fmt::Write;

use crate::audit::AuditReport;
use crate::explain::{Clause, Explanation, Verdict};
use crate::fairness::MetricReport;

fn outcome(positive: bool) -> &'static str {
    if positive {
        "positive"
    } else {
        "negative"
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Unfair => "unfair",
        Verdict::Fair => "fair",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn clause_name(c: Clause) -> &'static str {
    match c {
        Clause::ProtectedOnlyDifferences => "protected_only_differences",
        Clause::FlipChangedPrediction => "flip_changed_prediction",
    }
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn explanation_text(e: &Explanation) -> String {
    let mut out = String::new();
    if e.query.prediction {
        let _ = writeln!(out, "query: {}", e.query.values.join(", "));
        let _ = writeln!(out, "prediction: positive (p={:.4})", e.query.probability);
        out.push_str("verdict: fair (positive prediction)\n");
        return out;
    }
    let mut header = vec!["row".to_string()];
    header.extend(e.features.iter().cloned());
    header.push("label".into());
    header.push("distance".into());
    let mut rows: Vec<Vec<String>> = e
        .neighbors
        .iter()
        .map(|n| {
            let mut r = vec![n.index.to_string()];
            r.extend(n.values.iter().cloned());
            r.push(outcome(n.label).into());
            r.push(format!("{:.4}", n.distance));
            r
        })
        .collect();
    let mut q = vec![e.query.index.map_or("query".into(), |i| format!("{i} (query)"))];
    for (fi, v) in e.query.values.iter().enumerate() {
        let differs = e.feature_diffs.get(fi).is_some_and(|d| d.differs);
        q.push(if differs { format!("*{v}") } else { v.clone() });
    }
    q.push(format!("pred {}", outcome(false)));
    q.push(String::new());
    rows.push(q);
    out.push_str(&table(&header, &rows));

    let differing: Vec<&str> = e.differing_features().map(|d| d.feature.as_str()).collect();
    let _ = writeln!(
        out,
        "differing features: {}",
        if differing.is_empty() {
            "none".to_string()
        } else {
            differing.join(", ")
        }
    );
    let assignments: Vec<String> = e
        .flip
        .flipped_assignments
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let _ = writeln!(
        out,
        "flip: {} -> prediction {} -> {} (p {:.4} -> {:.4}){}",
        assignments.join(", "),
        outcome(e.flip.original_prediction),
        outcome(e.flip.flipped_prediction),
        e.flip.original_probability,
        e.flip.flipped_probability,
        if e.flip.changed { ", changed" } else { "" }
    );
    let trace: Vec<&str> = e.rule_trace.iter().map(|c| clause_name(*c)).collect();
    let _ = writeln!(
        out,
        "verdict: {} [{}]",
        verdict_name(e.verdict),
        trace.join(", ")
    );
    out
}

pub fn metrics_text(m: &MetricReport) -> String {
    let header: Vec<String> = ["attribute", "dp_diff", "eq_opp_diff", "eq_acc_diff", "eq_odds_diff"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = m
        .attributes
        .iter()
        .map(|a| match (&a.diffs, &a.error) {
            (Some(d), _) => vec![
                a.attribute.clone(),
                format!("{:.4}", d.dp_diff),
                format!("{:.4}", d.eq_opp_diff),
                format!("{:.4}", d.eq_acc_diff),
                format!("{:.4}", d.eq_odds_diff),
            ],
            (None, err) => {
                let why = err.clone().unwrap_or_else(|| "undefined".into());
                vec![a.attribute.clone(), why, String::new(), String::new(), String::new()]
            }
        })
        .collect();
    let mut out = table(&header, &rows);
    let _ = writeln!(out, "consistency (k={}): {:.4} over {} instances", m.n_neighbors, m.consistency, m.n);
    out
}

pub fn audit_summary_text(r: &AuditReport) -> String {
    let header: Vec<String> = ["seed", "test", "negatives", "flagged", "flagged %", "flip %", "consistency pre/post"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = r
        .seeds
        .iter()
        .map(|s| {
            vec![
                s.seed.to_string(),
                s.test_size.to_string(),
                s.negative_count.to_string(),
                s.flagged_count.to_string(),
                format!("{:.2}", 100.0 * s.flagged_fraction),
                format!("{:.2}", 100.0 * s.flip_rate),
                format!("{:.4} / {:.4}", s.metrics_pre.consistency, s.metrics_post.consistency),
            ]
        })
        .collect();
    let mut out = table(&header, &rows);
    let a = &r.aggregate;
    let _ = writeln!(
        out,
        "flagged fraction: mean {:.2}%  min {:.2}%  max {:.2}%",
        100.0 * a.flagged_fraction.mean,
        100.0 * a.flagged_fraction.min,
        100.0 * a.flagged_fraction.max
    );
    let _ = writeln!(
        out,
        "flip rate: mean {:.2}%  (negative to positive {:.2}%)",
        100.0 * a.flip_rate.mean,
        100.0 * a.flip_to_positive_rate.mean
    );
    if let Some(first) = r.seeds.first() {
        let _ = writeln!(out, "\nmetrics, seed {} before relabels:", first.seed);
        out.push_str(&metrics_text(&first.metrics_pre));
        let _ = writeln!(out, "\nmetrics, seed {} with every proposal accepted:", first.seed);
        out.push_str(&metrics_text(&first.metrics_post));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{FeatureDiff, FlagMode, FlipResult, NeighborRecord, QueryRecord};

    fn sample(prediction: bool) -> Explanation {
        Explanation {
            features: vec!["job".into(), "sex".into()],
            query: QueryRecord {
                index: Some(7),
                values: vec!["clerk".into(), "Female".into()],
                prediction,
                probability: if prediction { 0.8 } else { 0.3 },
            },
            neighbors: vec![NeighborRecord {
                index: 2,
                distance: 1.0,
                values: vec!["clerk".into(), "Male".into()],
                label: true,
            }],
            feature_diffs: vec![
                FeatureDiff {
                    feature: "job".into(),
                    protected: false,
                    query_value: "clerk".into(),
                    neighbor_majority_value: "clerk".into(),
                    differs: false,
                },
                FeatureDiff {
                    feature: "sex".into(),
                    protected: true,
                    query_value: "Female".into(),
                    neighbor_majority_value: "Male".into(),
                    differs: true,
                },
            ],
            flip: FlipResult {
                original_prediction: false,
                original_probability: 0.3,
                flipped_assignments: [("sex".to_string(), "Male".to_string())].into(),
                flipped_prediction: true,
                flipped_probability: 0.6,
                changed: true,
            },
            verdict: Verdict::Unfair,
            rule_trace: vec![Clause::ProtectedOnlyDifferences, Clause::FlipChangedPrediction],
            flag_mode: FlagMode::Conjunctive,
        }
    }

    #[test]
    fn marks_differing_query_cells() {
        let text = explanation_text(&sample(false));
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("row"));
        assert!(lines[2].starts_with('2'));
        assert!(lines[3].contains("*Female"));
        assert!(!lines[3].contains("*clerk"));
        assert!(text.contains("verdict: unfair [protected_only_differences, flip_changed_prediction]"));
    }

    #[test]
    fn positive_prediction_has_no_table() {
        let text = explanation_text(&sample(true));
        assert!(text.contains("verdict: fair (positive prediction)"));
        assert!(!text.contains("distance"));
    }
}
