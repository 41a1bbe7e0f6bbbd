mod common;

use common::{recount_seed, write_synthetic, LabelRule};
use fairknn::audit::{run_audit, Audit, AuditReport};
use fairknn::config::AuditConfig;
use fairknn::explain::Verdict;
use serde_json::json;

fn synthetic_report(rule: LabelRule, extra: serde_json::Value) -> (tempfile::TempDir, AuditConfig, AuditReport) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), 300, 21, rule, extra);
    let config = AuditConfig::from_path(path).unwrap();
    let report = run_audit(&config).unwrap();
    (dir, config, report)
}

#[test]
fn reruns_produce_identical_bodies() {
    let (_dir, config, a) = synthetic_report(LabelRule::Hours, json!({}));
    let b = run_audit(&config).unwrap();
    assert_eq!(a.body_json().unwrap(), b.body_json().unwrap());
    assert!(!a.body_json().unwrap().contains("generated_at"));
    assert!(a.to_json().unwrap().contains("generated_at"));
}

#[test]
fn counts_are_consistent() {
    let (_dir, _config, report) = synthetic_report(LabelRule::Sex, json!({ "flag_mode": "flip_only" }));
    assert_eq!(report.seeds.len(), 2);
    for s in &report.seeds {
        assert_eq!(s.train_size + s.test_size, 300);
        assert_eq!(s.test_predictions.len(), s.test_size);
        assert_eq!(s.negative_count, s.predictions().iter().filter(|p| !**p).count());
        assert!((s.flagged_fraction - s.flagged_count as f64 / s.test_size as f64).abs() < 1e-15);
        assert!((s.flip_rate - s.flip_changed_count as f64 / s.test_size as f64).abs() < 1e-15);
        assert!(s.flip_to_positive_count <= s.flip_changed_count);
        assert_eq!(s.proposals.len(), s.flagged_count);
        for g in &s.group_breakdown {
            assert_eq!(g.privileged.negatives + g.unprivileged.negatives, s.negative_count);
            assert_eq!(g.privileged.flagged + g.unprivileged.flagged, s.flagged_count);
        }
        // the label is the sex column, so every negative is an unprivileged flip
        let sex = s.group_breakdown.iter().find(|g| g.attribute == "sex").unwrap();
        assert_eq!(sex.privileged.negatives, 0);
        assert_eq!(sex.unprivileged.flagged, sex.unprivileged.negatives);
    }
    let flagged: usize = report.seeds.iter().map(|s| s.flagged_count).sum();
    assert_eq!(report.explanations.len(), flagged);
    assert!(report.explanations.iter().all(|e| e.explanation.verdict == Verdict::Unfair));
}

#[test]
fn stored_metrics_recount_from_raw_predictions() {
    let (_dir, config, report) = synthetic_report(LabelRule::Hours, json!({ "flag_mode": "neighbor_only" }));
    let audit = Audit::load(config).unwrap();
    let distance = audit.config().effective_distance(audit.dataset().encoder()).unwrap();
    for s in &report.seeds {
        assert!(recount_seed(s, audit.dataset(), &distance, true) < 1e-12);
        let changed = s.proposals.iter().filter(|p| p.flips()).count();
        assert_eq!(s.post_changed_count, changed);
    }
}

#[test]
fn explanation_cap_limits_stored_records() {
    let (_dir, _config, report) =
        synthetic_report(LabelRule::Sex, json!({ "flag_mode": "flip_only", "max_explanations_per_seed": 3 }));
    for s in &report.seeds {
        let stored = report.explanations.iter().filter(|e| e.seed == s.seed).count();
        assert_eq!(stored, s.flagged_count.min(3));
    }
}

#[test]
fn report_round_trips_through_disk() {
    let (dir, _config, report) = synthetic_report(LabelRule::Hours, json!({}));
    let path = dir.path().join("report.json");
    report.write(&path).unwrap();
    let back = AuditReport::read(&path).unwrap();
    assert_eq!(back.to_json().unwrap(), report.to_json().unwrap());
    assert_eq!(back.seeds, report.seeds);
    let csv = report.summary_csv().unwrap();
    assert_eq!(csv.lines().count(), 1 + report.seeds.len());
}

#[test]
fn external_predictor_matches_its_formula() {
    // probability rises with the sum of the encoded row
    let script = "import sys, json, math\nfor line in sys.stdin:\n    r = json.loads(line)\n    print(1 / (1 + math.exp(-(sum(r) - 3))))\n";
    let (_dir, config, report) = synthetic_report(
        LabelRule::Hours,
        json!({ "seeds": [0], "model": { "type": "external", "command": ["python3", "-c", script] } }),
    );
    let audit = Audit::load(config).unwrap();
    let s = &report.seeds[0];
    assert!(s.model.is_none());
    let expected: Vec<bool> = s
        .test_indices
        .iter()
        .map(|&i| audit.dataset().row(i).iter().sum::<f64>() >= 3.0)
        .collect();
    assert_eq!(s.predictions(), expected);
}

#[test]
fn config_errors_surface_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), 50, 1, LabelRule::Hours, json!({ "k": 0 }));
    assert!(Audit::load(AuditConfig::from_path(&path).unwrap()).is_err());
    let path = write_synthetic(dir.path(), 50, 1, LabelRule::Hours, json!({ "feature_weights": { "nope": 1.0 } }));
    assert!(Audit::load(AuditConfig::from_path(&path).unwrap()).is_err());
}
