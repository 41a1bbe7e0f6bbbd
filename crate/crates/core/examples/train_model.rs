//! Trains the logistic model on one Adult split and reports accuracy.
//!
//! `cargo run --release --example train_model`

use fairknn::audit::Audit;
use fairknn::config::AuditConfig;
use fairknn::data::split;
use fairknn::model::{train_logistic, Predictor, TrainConfig};
use ndarray::Axis;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = AuditConfig::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/adult.json"))?;
    let audit = Audit::load(config)?;
    let ds = audit.dataset();
    let s = split(ds, 0)?;
    let rows = ds.matrix().select(Axis(0), &s.train);
    let labels: Vec<bool> = s.train.iter().map(|&i| ds.labels()[i]).collect();
    let model = train_logistic(rows.view(), &labels, &TrainConfig::default())?;
    println!(
        "{} epochs, loss {:.4} -> {:.4}",
        model.loss_history.len(),
        model.loss_history.first().unwrap_or(&f64::NAN),
        model.loss_history.last().unwrap_or(&f64::NAN)
    );
    for (name, part) in [("train", &s.train), ("test", &s.test)] {
        let correct = part
            .iter()
            .filter(|&&i| model.predict(ds.row(i)).unwrap_or(false) == ds.labels()[i])
            .count();
        println!("{name} accuracy {:.4} over {} rows", correct as f64 / part.len() as f64, part.len());
    }
    let mut weights: Vec<(f64, &str)> = model
        .weights
        .iter()
        .zip(ds.column_map())
        .map(|(w, c)| (*w, c.name.as_str()))
        .collect();
    weights.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
    println!("largest weights:");
    for (w, name) in weights.iter().take(8) {
        println!("  {w:+.3}  {name}");
    }
    Ok(())
}
