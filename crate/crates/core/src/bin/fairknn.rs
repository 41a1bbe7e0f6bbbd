//! `fairknn` command-line interface.
//!
//! Exit codes: 0 success, 1 data or runtime error, 2 usage or configuration error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fairknn::audit::{Audit, AuditReport};
use fairknn::config::{parse_seeds, AuditConfig};
use fairknn::error::Error;
use fairknn::explain::FlagMode;
use fairknn::mitigation::{apply_ledger_indexed, Decision, LedgerStore};
use fairknn::neighbors::Distance;
use fairknn::render;
use fairknn::service::{self, ApiSession};

const CONFIG_ENV: &str = "FAIRKNN_CONFIG";

#[derive(Parser)]
#[command(name = "fairknn", version, about = "Neighbor-based fairness audits for binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed audit and write the report.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Report file to write.
        #[arg(long, short, default_value = "audit_report.json")]
        output: PathBuf,
        /// Also write a one-row-per-seed CSV summary here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Explain one row (or an inline JSON record) for one seed.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "record", required_unless_present = "record")]
        row: Option<usize>,
        /// JSON object mapping feature name to value.
        #[arg(long)]
        record: Option<String>,
    },
    /// Group metrics and consistency for one seed, optionally with a ledger applied.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Use predictions and proposals stored in this report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Apply the accepted decisions in this ledger (requires --report).
        #[arg(long, requires = "report")]
        ledger: Option<PathBuf>,
    },
    /// Relabel proposals for one seed, or record a decision on one.
    Propose {
        #[command(flatten)]
        common: Common,
        /// Propose for this row only (any label, not just flagged rows).
        #[arg(long)]
        row: Option<usize>,
        /// Record this decision for --row in --ledger.
        #[arg(long, value_enum, requires_all = ["row", "ledger"])]
        decision: Option<DecisionArg>,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        note: Option<String>,
    },
    /// Serve the review API for a report.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "decisions.json")]
        ledger: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
}

#[derive(Args)]
struct Common {
    /// Audit config file; defaults to $FAIRKNN_CONFIG.
    #[arg(long, env = CONFIG_ENV)]
    config: PathBuf,
    /// Seeds, e.g. `0..9` or `1,3,5`.
    #[arg(long)]
    seeds: Option<String>,
    /// Seed for single-seed commands (default: first configured seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    flag_mode: Option<FlagModeArg>,
    /// euclidean, manhattan, chebyshev, or minkowski:P
    #[arg(long)]
    distance: Option<String>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlagModeArg {
    Conjunctive,
    NeighborOnly,
    FlipOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecisionArg {
    Accepted,
    Rejected,
    Pending,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn parse_distance(text: &str) -> CliResult<Distance> {
    let d = match text {
        "euclidean" => Distance::Euclidean,
        "manhattan" => Distance::Manhattan,
        "chebyshev" => Distance::Chebyshev,
        other => match other.strip_prefix("minkowski:").map(str::parse::<f64>) {
            Some(Ok(p)) => Distance::Minkowski { p },
            _ => return Err(usage(format!("unknown distance `{text}`"))),
        },
    };
    Ok(d)
}

/// Loads the config and applies overrides; every failure here is a usage error.
fn load_config(c: &Common) -> CliResult<AuditConfig> {
    let mut config = AuditConfig::from_path(&c.config).map_err(usage)?;
    if let Some(s) = &c.seeds {
        config.seeds = parse_seeds(s).map_err(usage)?;
    }
    if let Some(k) = c.k {
        config.k = k;
    }
    if let Some(m) = c.flag_mode {
        config.flag_mode = match m {
            FlagModeArg::Conjunctive => FlagMode::Conjunctive,
            FlagModeArg::NeighborOnly => FlagMode::NeighborOnly,
            FlagModeArg::FlipOnly => FlagMode::FlipOnly,
        };
    }
    if let Some(d) = &c.distance {
        config.distance = parse_distance(d)?;
    }
    if let Some(b) = c.bins {
        config.bins = b;
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

fn single_seed(c: &Common, config: &AuditConfig) -> u64 {
    c.seed.unwrap_or(config.seeds[0])
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn read_report(path: &Path) -> CliResult<(AuditReport, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(Error::Io { path: path.into(), source: e }))?;
    let report = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((report, text))
}

fn cmd_audit(common: &Common, output: &Path, csv: Option<&Path>) -> CliResult {
    let config = load_config(common)?;
    let report = Audit::load(config)?.run()?;
    report.write(output)?;
    if let Some(path) = csv {
        std::fs::write(path, report.summary_csv()?).map_err(|e| Error::Io { path: path.into(), source: e })?;
    }
    match common.format {
        Format::Text => {
            print!("{}", render::audit_summary_text(&report));
            println!("report written to {}", output.display());
        }
        Format::Json => print_json(&report.aggregate)?,
        Format::Csv => print!("{}", report.summary_csv()?),
    }
    Ok(())
}

fn cmd_explain(common: &Common, row: Option<usize>, record: Option<&str>) -> CliResult {
    let config = load_config(common)?;
    let record: Option<BTreeMap<String, serde_json::Value>> = match record {
        Some(text) => Some(serde_json::from_str(text).map_err(|e| usage(format!("--record: {e}")))?),
        None => None,
    };
    let seed = single_seed(common, &config);
    let audit = Audit::load(config)?;
    if let Some(r) = row {
        if r >= audit.dataset().len() {
            return Err(Failure::Runtime(
                Error::NotFound(format!("row {r} (dataset has {} rows)", audit.dataset().len())).to_string(),
            ));
        }
    }
    let ctx = audit.seed_context(seed)?;
    let explanation = match (row, record) {
        (Some(r), _) => ctx.explainer.explain_row(r, &ctx.model)?,
        (None, Some(map)) => {
            let cells = audit.dataset().encoder().record_from_map(&map)?;
            ctx.explainer.explain_record(&cells, &ctx.model)?
        }
        (None, None) => return Err(usage("give --row or --record")),
    };
    match common.format {
        Format::Json => print_json(&explanation),
        _ => {
            print!("{}", render::explanation_text(&explanation));
            Ok(())
        }
    }
}

fn cmd_metrics(common: &Common, report: Option<&Path>, ledger: Option<&Path>) -> CliResult {
    let config = load_config(common)?;
    let seed = single_seed(common, &config);
    let stored = report.map(read_report).transpose()?;
    let audit = Audit::load(config)?;
    let (test, preds, changed) = match &stored {
        Some((r, _)) => {
            let s = r
                .seed(seed)
                .ok_or_else(|| usage(format!("report has no seed {seed}")))?;
            let preds = s.predictions();
            match ledger {
                Some(path) => {
                    let store = LedgerStore::open(path)?;
                    let out = apply_ledger_indexed(&s.test_indices, &preds, &s.proposals, store.ledger())?;
                    (s.test_indices.clone(), out.predictions, out.changed)
                }
                None => (s.test_indices.clone(), preds, 0),
            }
        }
        None => {
            let ctx = audit.seed_context(seed)?;
            let rows = audit.dataset().matrix().select(ndarray::Axis(0), &ctx.split.test);
            let probs = fairknn::model::Predictor::predict_proba_batch(&ctx.model, rows.view())?;
            let t = fairknn::model::Predictor::threshold(&ctx.model);
            (ctx.split.test.clone(), probs.iter().map(|&p| p >= t).collect(), 0)
        }
    };
    let groups = audit.test_membership(&test);
    let neighbors = audit.test_neighbor_lists(&test)?;
    let metrics = audit.metrics(&test, &preds, &groups, &neighbors)?;
    match common.format {
        Format::Json => print_json(&serde_json::json!({ "seed": seed, "changed": changed, "metrics": metrics })),
        _ => {
            println!("seed {seed}, {changed} predictions changed by the ledger");
            print!("{}", render::metrics_text(&metrics));
            Ok(())
        }
    }
}

fn cmd_propose(
    common: &Common,
    row: Option<usize>,
    decision: Option<DecisionArg>,
    ledger: Option<&Path>,
    note: Option<String>,
) -> CliResult {
    let config = load_config(common)?;
    let seed = single_seed(common, &config);
    if let (Some(d), Some(r), Some(path)) = (decision, row, ledger) {
        let decision = match d {
            DecisionArg::Accepted => Decision::Accepted,
            DecisionArg::Rejected => Decision::Rejected,
            DecisionArg::Pending => Decision::Pending,
        };
        let mut store = LedgerStore::open(path)?;
        let recorded = store.record(r, decision, note)?;
        return print_json(&serde_json::json!({
            "id": r,
            "recorded": recorded,
            "entry": store.ledger().get(r),
        }));
    }
    let mut single = config.clone();
    single.seeds = vec![seed];
    let audit = Audit::load(single)?;
    let ctx = audit.seed_context(seed)?;
    let proposals = match row {
        Some(r) => {
            let data = audit.dataset();
            if r >= data.len() {
                return Err(Failure::Runtime(Error::NotFound(format!("row {r}")).to_string()));
            }
            let current = fairknn::model::Predictor::predict(&ctx.model, data.row(r))?;
            vec![ctx.proposer.propose(r, data.row(r), current)?]
        }
        None => audit.run_seed(&ctx)?.0.proposals,
    };
    match common.format {
        Format::Json => print_json(&proposals),
        _ => {
            println!("row\tcurrent\tproposed\tpositive\tnegative");
            for p in &proposals {
                println!(
                    "{}\t{}\t{}\t{}\t{}",
                    p.query_index,
                    u8::from(p.current_prediction),
                    u8::from(p.proposed_prediction),
                    p.vote_tally.positive,
                    p.vote_tally.negative
                );
            }
            Ok(())
        }
    }
}

fn cmd_serve(common: &Common, report: &Path, ledger: &Path, addr: std::net::SocketAddr) -> CliResult {
    let config = load_config(common)?;
    let (report, text) = read_report(report)?;
    let audit = Audit::load(config)?;
    let session = Arc::new(ApiSession::new(report, text, audit, ledger)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(service::serve(session, addr))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Audit { common, output, csv } => cmd_audit(common, output, csv.as_deref()),
        Command::Explain { common, row, record } => cmd_explain(common, *row, record.as_deref()),
        Command::Metrics { common, report, ledger } => cmd_metrics(common, report.as_deref(), ledger.as_deref()),
        Command::Propose {
            common,
            row,
            decision,
            ledger,
            note,
        } => cmd_propose(common, *row, *decision, ledger.as_deref(), note.clone()),
        Command::Serve {
            common,
            report,
            ledger,
            addr,
        } => cmd_serve(common, report, ledger, *addr),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
