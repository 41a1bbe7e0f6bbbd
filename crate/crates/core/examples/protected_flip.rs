//! Counterfactual flips of the protected attributes on Adult test rows.
//!
//! `cargo run --release --example protected_flip`

use fairknn::audit::Audit;
use fairknn::config::AuditConfig;
use fairknn::explain::flip_protected;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = AuditConfig::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/adult.json"))?;
    let audit = Audit::load(config)?;
    let ctx = audit.seed_context(0)?;
    let ds = audit.dataset();
    let mut changed = 0;
    for &i in &ctx.split.test {
        let flip = flip_protected(ds.row(i), &ctx.model, ds.encoder())?;
        if flip.changed {
            changed += 1;
            if changed <= 5 {
                let decoded = ds.decode_row(i)?;
                println!(
                    "row {i}: race={} sex={} -> {:?}: p {:.3} -> {:.3}",
                    decoded.get("race").unwrap_or("?"),
                    decoded.get("sex").unwrap_or("?"),
                    flip.flipped_assignments,
                    flip.original_probability,
                    flip.flipped_probability
                );
            }
        }
    }
    println!(
        "{changed} of {} test predictions change under the flip ({:.2}%)",
        ctx.split.test.len(),
        100.0 * changed as f64 / ctx.split.test.len() as f64
    );
    Ok(())
}
