//! Runs an audit from a config file and prints the per-seed summary.
//!
//! `cargo run --release --example audit_adult -- configs/adult.json`

use std::time::Instant;

use fairknn::audit::run_audit;
use fairknn::config::AuditConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/adult.json".into());
    let mut config = AuditConfig::from_path(&path)?;
    if let Some(seeds) = std::env::args().nth(2) {
        config.seeds = fairknn::config::parse_seeds(&seeds)?;
    }
    let start = Instant::now();
    let report = run_audit(&config)?;
    for s in &report.seeds {
        println!(
            "seed {:>2}: test {:>5}  negatives {:>5}  flagged {:>5} ({:.4})  flip {:.4}  flip->pos {:.4}  consistency {:.4} -> {:.4}",
            s.seed,
            s.test_size,
            s.negative_count,
            s.flagged_count,
            s.flagged_fraction,
            s.flip_rate,
            s.flip_to_positive_rate,
            s.metrics_pre.consistency,
            s.metrics_post.consistency
        );
    }
    let a = &report.aggregate;
    println!(
        "flagged fraction mean {:.4} [{:.4}, {:.4}]  flip rate mean {:.4}",
        a.flagged_fraction.mean, a.flagged_fraction.min, a.flagged_fraction.max, a.flip_rate.mean
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
