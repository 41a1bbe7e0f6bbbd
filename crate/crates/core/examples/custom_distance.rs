//! Nearest neighbors under different metrics, and per-feature weights
//! that hide the protected columns from the distance.
//!
//! `cargo run --example custom_distance`

use std::collections::BTreeMap;

use fairknn::config::AuditConfig;
use fairknn::data::{encode, Cell, FeatureSpec, RawTable, Schema};
use fairknn::neighbors::{Distance, IndexKind, NeighborIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = Schema::new(
        vec![FeatureSpec::numeric("hours"), FeatureSpec::protected("sex", "M")],
        "label",
        "yes",
    )?;
    let data = [(40.0, "M"), (41.0, "F"), (45.0, "F"), (39.0, "M"), (60.0, "F"), (20.0, "M")];
    let rows = data
        .iter()
        .map(|&(h, s)| vec![Cell::Number(h), Cell::Category(s.into())])
        .collect();
    let table = RawTable::new(schema, rows, vec![true; data.len()])?;
    let ds = encode(&table, 10)?;
    let ids: Vec<usize> = (0..ds.len()).collect();
    let query = ds.row(0).to_vec();

    for distance in [
        Distance::Euclidean,
        Distance::Manhattan,
        Distance::Chebyshev,
        Distance::Minkowski { p: 3.0 },
    ] {
        let index = NeighborIndex::build(IndexKind::KdTree, ds.matrix(), &ids, &distance)?;
        let found = index.query(&query, 3, &distance, Some(0))?;
        let shown: Vec<String> = found.iter().map(|n| format!("{} ({:.3})", n.index, n.distance)).collect();
        println!("{:<16} {}", distance.name(), shown.join(", "));
    }

    let config = AuditConfig {
        feature_weights: BTreeMap::from([("sex".to_string(), 0.0)]),
        ..AuditConfig::default()
    };
    let blind = config.effective_distance(ds.encoder())?;
    let index = NeighborIndex::build(IndexKind::KdTree, ds.matrix(), &ids, &blind)?;
    let found = index.query(&query, 3, &blind, Some(0))?;
    let shown: Vec<String> = found.iter().map(|n| format!("{} ({:.3})", n.index, n.distance)).collect();
    println!("{:<16} {}", "sex weight 0", shown.join(", "));
    Ok(())
}
