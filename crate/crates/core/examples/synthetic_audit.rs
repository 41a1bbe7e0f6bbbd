//! Audits a model trained on a label that is the protected attribute
//! itself, then the same data with a model that never sees it.
//!
//! `cargo run --example synthetic_audit`

use std::sync::Arc;

use fairknn::audit::{Audit, AuditedModel};
use fairknn::config::AuditConfig;
use fairknn::data::{encode, split, Cell, FeatureSpec, RawTable, Schema};
use fairknn::explain::FlagMode;
use fairknn::model::{train_logistic, TrainConfig};
use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = Schema::new(
        vec![
            FeatureSpec::categorical("job"),
            FeatureSpec::numeric("hours"),
            FeatureSpec::protected("sex", "M"),
        ],
        "label",
        "yes",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..1000 {
        let male = rng.random_bool(0.5);
        rows.push(vec![
            Cell::Category(["clerk", "smith", "nurse"][rng.random_range(0..3)].into()),
            Cell::Number(rng.random_range(20..=60) as f64),
            Cell::Category(if male { "M" } else { "F" }.into()),
        ]);
        labels.push(male);
    }
    let ds = Arc::new(encode(&RawTable::new(schema, rows, labels)?, 10)?);
    let config = AuditConfig {
        flag_mode: FlagMode::FlipOnly,
        ..AuditConfig::default()
    };
    let audit = Audit::with_dataset(config, ds.clone(), 0)?;

    let (biased, _) = audit.run_seed(&audit.seed_context(0)?)?;
    println!(
        "trained on sex: {} negatives, {} flagged, flip rate {:.3}",
        biased.negative_count, biased.flagged_count, biased.flip_rate
    );

    let s = split(&ds, 0)?;
    let mut train = ds.matrix().select(Axis(0), &s.train);
    for fi in ds.schema().protected_indices() {
        for c in ds.encoder().column_range(fi) {
            train.column_mut(c).fill(0.0);
        }
    }
    let y: Vec<bool> = s.train.iter().map(|&i| ds.labels()[i]).collect();
    let blind = train_logistic(train.view(), &y, &TrainConfig::default())?;
    let ctx = audit.context_with_model(0, s, AuditedModel::Logistic(blind))?;
    let (fair, _) = audit.run_seed(&ctx)?;
    println!(
        "blind model: {} negatives, {} flagged, flip rate {:.3}",
        fair.negative_count, fair.flagged_count, fair.flip_rate
    );
    Ok(())
}
