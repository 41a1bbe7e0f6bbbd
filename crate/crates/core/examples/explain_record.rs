//! Explains one Adult record: positive neighbors, differing features,
//! the protected flip and the verdict.
//!
//! `cargo run --release --example explain_record [config]`

use fairknn::audit::Audit;
use fairknn::config::AuditConfig;
use fairknn::data::Cell;
use fairknn::render::explanation_text;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/adult.json").into());
    let audit = Audit::load(AuditConfig::from_path(path)?)?;
    let ctx = audit.seed_context(audit.config().seeds[0])?;
    let cat = |s: &str| Cell::Category(s.into());
    let record = vec![
        Cell::Number(42.0),
        cat("Private"),
        cat("Divorced"),
        cat("Adm-clerical"),
        cat("Not-in-family"),
        cat("Black"),
        cat("Female"),
        Cell::Number(0.0),
        Cell::Number(0.0),
        Cell::Number(38.0),
    ];
    let explanation = ctx.explainer.explain_record(&record, &ctx.model)?;
    print!("{}", explanation_text(&explanation));
    Ok(())
}
