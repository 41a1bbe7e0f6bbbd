//! Proposes relabels for flagged rows, records reviewer decisions in a
//! ledger file and shows the metrics before and after applying it.
//!
//! `cargo run --example review_ledger`

use std::sync::Arc;

use fairknn::audit::Audit;
use fairknn::config::AuditConfig;
use fairknn::data::{encode, Cell, FeatureSpec, RawTable, Schema};
use fairknn::explain::FlagMode;
use fairknn::mitigation::{apply_ledger_indexed, Decision, LedgerStore};
use fairknn::render::metrics_text;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = Schema::new(
        vec![FeatureSpec::numeric("hours"), FeatureSpec::protected("sex", "M")],
        "label",
        "yes",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..400 {
        let hours = rng.random_range(20..=60) as f64;
        let male = rng.random_bool(0.5);
        rows.push(vec![Cell::Number(hours), Cell::Category(if male { "M" } else { "F" }.into())]);
        labels.push(hours > 40.0 && (male || rng.random_bool(0.6)));
    }
    let ds = Arc::new(encode(&RawTable::new(schema, rows, labels)?, 10)?);
    let config = AuditConfig {
        flag_mode: FlagMode::NeighborOnly,
        ..AuditConfig::default()
    };
    let audit = Audit::with_dataset(config, ds, 0)?;
    let ctx = audit.seed_context(0)?;
    let (seed, _) = audit.run_seed(&ctx)?;
    println!("{} flagged, {} proposals", seed.flagged_count, seed.proposals.len());

    let dir = std::env::temp_dir().join("fairknn-review-ledger-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("decisions.json");
    let _ = std::fs::remove_file(&path);
    let mut store = LedgerStore::open(&path)?;
    for (n, p) in seed.proposals.iter().enumerate() {
        let decision = if p.flips() && n % 2 == 0 { Decision::Accepted } else { Decision::Rejected };
        store.record(p.query_index, decision, Some("reviewed in example".into()))?;
    }
    println!("ledger written to {}", path.display());

    let preds = seed.predictions();
    let applied = apply_ledger_indexed(&seed.test_indices, &preds, &seed.proposals, store.ledger())?;
    let groups = audit.test_membership(&seed.test_indices);
    let neighbors = audit.test_neighbor_lists(&seed.test_indices)?;
    println!("before:\n{}", metrics_text(&seed.metrics_pre));
    let after = audit.metrics(&seed.test_indices, &applied.predictions, &groups, &neighbors)?;
    println!("after {} accepted relabels:\n{}", applied.changed, metrics_text(&after));
    Ok(())
}
