//! Multi-seed audit: split, train, explain every negative test prediction,
//! tally flags and flips, and compare metrics before and after the proposed
//! relabels.
//!
//! The report body is a pure function of the configuration and the data.
//! Everything run-specific (time, tool version) lives in
//! [`AuditReport::header`], which [`AuditReport::body_json`] leaves out.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AuditConfig, ModelSource};
use crate::data::{encode, load_csv_with, Cell, EncodedDataset, LoadOptions, Schema, SplitIndices};
use crate::error::{Error, Result};
use crate::explain::{flip_result, flip_row, Explainer, Explanation, FlipResult, Verdict};
use crate::fairness::{neighbor_lists, Membership, MetricReport};
use crate::mitigation::{apply_ledger_indexed, DecisionLedger, Decision, Proposer, RelabelProposal};
use crate::model::{train_logistic, ExternalPredictor, LogisticModel, Predictor};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool: String,
    pub tool_version: String,
    pub generated_at: String,
}

impl ReportHeader {
    pub fn now() -> Self {
        ReportHeader {
            tool: "fairknn".into(),
            tool_version: TOOL_VERSION.into(),
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub dropped_rows: usize,
    pub positives: usize,
    pub encoded_width: usize,
    pub column_fingerprint: String,
}

/// Weights of the audited logistic model for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
}

impl ModelSnapshot {
    pub fn of(model: &LogisticModel) -> Self {
        ModelSnapshot {
            weights: model.weights.clone(),
            bias: model.bias,
            threshold: model.threshold,
            epochs_run: model.loss_history.len(),
            final_loss: model.loss_history.last().copied(),
        }
    }

    pub fn to_model(&self) -> Result<LogisticModel> {
        LogisticModel::new(self.weights.clone(), self.bias).with_threshold(self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub group: String,
    pub negatives: usize,
    pub flagged: usize,
    /// `flagged / negatives`; absent when the group has no negatives.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub attribute: String,
    pub privileged: GroupCount,
    pub unprivileged: GroupCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub negative_count: usize,
    pub flagged_count: usize,
    pub inconclusive_count: usize,
    /// `flagged_count / test_size`.
    pub flagged_fraction: f64,
    /// Test instances whose prediction changes under the protected flip.
    pub flip_changed_count: usize,
    /// `flip_changed_count / test_size`.
    pub flip_rate: f64,
    /// Negative predictions that become positive under the flip.
    pub flip_to_positive_count: usize,
    pub flip_to_positive_rate: f64,
    pub metrics_pre: MetricReport,
    /// Metrics if every proposal were accepted.
    pub metrics_post: MetricReport,
    pub post_changed_count: usize,
    pub group_breakdown: Vec<GroupBreakdown>,
    pub proposals: Vec<RelabelProposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSnapshot>,
    /// Dataset row of each test position, ascending.
    pub test_indices: Vec<usize>,
    /// Test predictions as a string of `0`/`1`, aligned with `test_indices`.
    pub test_predictions: String,
}

impl SeedResult {
    pub fn predictions(&self) -> Vec<bool> {
        self.test_predictions.bytes().map(|b| b == b'1').collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        Stats {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub flagged_fraction: Stats,
    pub flip_rate: Stats,
    pub flip_to_positive_rate: Stats,
}

impl Aggregate {
    pub fn of(seeds: &[SeedResult]) -> Self {
        let col = |f: fn(&SeedResult) -> f64| seeds.iter().map(f).collect::<Vec<_>>();
        Aggregate {
            seeds: seeds.len(),
            flagged_fraction: Stats::of(&col(|s| s.flagged_fraction)),
            flip_rate: Stats::of(&col(|s| s.flip_rate)),
            flip_to_positive_rate: Stats::of(&col(|s| s.flip_to_positive_rate)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedExplanation {
    pub seed: u64,
    /// Dataset row of the query.
    pub id: usize,
    pub explanation: Explanation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<RelabelProposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub header: ReportHeader,
    pub format_version: u32,
    pub config: AuditConfig,
    pub dataset: DatasetSummary,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
    /// Flagged instances, by seed then row.
    pub explanations: Vec<ReportedExplanation>,
}

impl AuditReport {
    /// Serialized report without the header; identical across reruns.
    pub fn body_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("header");
        }
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn seed(&self, seed: u64) -> Option<&SeedResult> {
        self.seeds.iter().find(|s| s.seed == seed)
    }

    /// Per-seed summary, one CSV row per seed.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "seed",
            "test_size",
            "negative_count",
            "flagged_count",
            "flagged_fraction",
            "flip_changed_count",
            "flip_rate",
            "flip_to_positive_count",
            "consistency_pre",
            "consistency_post",
        ])?;
        for s in &self.seeds {
            w.write_record([
                s.seed.to_string(),
                s.test_size.to_string(),
                s.negative_count.to_string(),
                s.flagged_count.to_string(),
                s.flagged_fraction.to_string(),
                s.flip_changed_count.to_string(),
                s.flip_rate.to_string(),
                s.flip_to_positive_count.to_string(),
                s.metrics_pre.consistency.to_string(),
                s.metrics_post.consistency.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

/// Flagged fractions of each protected attribute's groups in one seed.
pub fn group_breakdown(seed: &SeedResult, dataset: &EncodedDataset, flagged: &[usize]) -> Vec<GroupBreakdown> {
    let preds = seed.predictions();
    let is_flagged = |row: usize| flagged.binary_search(&row).is_ok();
    dataset
        .schema()
        .protected_indices()
        .into_iter()
        .map(|fi| {
            let spec = &dataset.schema().features[fi];
            let mut counts = [(0usize, 0usize); 2];
            for (pos, &row) in seed.test_indices.iter().enumerate() {
                if preds[pos] {
                    continue;
                }
                let privileged = dataset.encoder().is_privileged(fi, dataset.row(row)).unwrap_or(false);
                let slot = &mut counts[usize::from(!privileged)];
                slot.0 += 1;
                slot.1 += usize::from(is_flagged(row));
            }
            let count = |group: String, (negatives, flagged): (usize, usize)| GroupCount {
                group,
                negatives,
                flagged,
                fraction: (negatives > 0).then(|| flagged as f64 / negatives as f64),
            };
            let unprivileged = match dataset.encoder().feature_encodings()[fi] {
                crate::data::FeatureEncoding::Group { ref unprivileged, .. } => unprivileged.clone(),
                _ => String::new(),
            };
            GroupBreakdown {
                attribute: spec.name.clone(),
                privileged: count(spec.privileged_value.clone().unwrap_or_default(), counts[0]),
                unprivileged: count(unprivileged, counts[1]),
            }
        })
        .collect()
}

/// Either model source behind the predictor contract.
#[derive(Debug, Clone)]
pub enum AuditedModel {
    Logistic(LogisticModel),
    External(ExternalPredictor),
}

impl Predictor for AuditedModel {
    fn dim(&self) -> usize {
        match self {
            AuditedModel::Logistic(m) => m.dim(),
            AuditedModel::External(m) => m.dim(),
        }
    }

    fn threshold(&self) -> f64 {
        match self {
            AuditedModel::Logistic(m) => m.threshold(),
            AuditedModel::External(m) => m.threshold(),
        }
    }

    fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        match self {
            AuditedModel::Logistic(m) => m.predict_proba(row),
            AuditedModel::External(m) => m.predict_proba(row),
        }
    }

    fn predict_proba_batch(&self, rows: ndarray::ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match self {
            AuditedModel::Logistic(m) => m.predict_proba_batch(rows),
            AuditedModel::External(m) => m.predict_proba_batch(rows),
        }
    }
}

/// Everything built for one seed before scoring.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub split: SplitIndices,
    pub model: AuditedModel,
    pub explainer: Explainer,
    pub proposer: Proposer,
}

/// A loaded dataset plus the configuration to audit it with.
#[derive(Debug, Clone)]
pub struct Audit {
    config: AuditConfig,
    dataset: Arc<EncodedDataset>,
    dropped_rows: usize,
}

impl Audit {
    /// Validates `config`, then loads and encodes its data.
    pub fn load(config: AuditConfig) -> Result<Self> {
        config.validate()?;
        if config.schema.as_os_str().is_empty() || config.data.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("config must name `schema` and `data` files".into()));
        }
        let schema = Schema::from_path(config.schema_path())?;
        let table = load_csv_with(
            config.data_path(),
            &schema,
            &LoadOptions {
                missing: config.missing,
            },
        )?;
        let dropped = table.dropped_rows;
        let dataset = encode(&table, config.bins)?;
        Self::with_dataset(config, Arc::new(dataset), dropped)
    }

    pub fn with_dataset(config: AuditConfig, dataset: Arc<EncodedDataset>, dropped_rows: usize) -> Result<Self> {
        config.validate()?;
        if dataset.schema().protected_indices().is_empty() {
            return Err(Error::InvalidSchema("an audit needs at least one protected attribute".into()));
        }
        config.effective_distance(dataset.encoder())?;
        Ok(Audit {
            config,
            dataset,
            dropped_rows,
        })
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Arc<EncodedDataset> {
        &self.dataset
    }

    fn model_for(&self, split: &SplitIndices) -> Result<AuditedModel> {
        match &self.config.model {
            ModelSource::Logistic(train) => {
                let rows = self.dataset.matrix().select(Axis(0), &split.train);
                let labels: Vec<bool> = split.train.iter().map(|&i| self.dataset.labels()[i]).collect();
                let mut model = train_logistic(rows.view(), &labels, train)?;
                model.column_fingerprint = Some(self.dataset.encoder().fingerprint());
                Ok(AuditedModel::Logistic(model))
            }
            ModelSource::External { command } => Ok(AuditedModel::External(ExternalPredictor::new(
                command.clone(),
                self.dataset.width(),
            )?)),
        }
    }

    /// Splits, trains, and builds the neighbor indices for `seed`.
    pub fn seed_context(&self, seed: u64) -> Result<SeedContext> {
        let split = crate::data::split(&self.dataset, seed)?;
        let model = self.model_for(&split)?;
        self.context_with_model(seed, split, model)
    }

    /// As [`Audit::seed_context`] but with a given model (no training).
    pub fn context_with_model(&self, seed: u64, split: SplitIndices, model: AuditedModel) -> Result<SeedContext> {
        if model.dim() != self.dataset.width() {
            return Err(Error::Shape {
                expected: self.dataset.width(),
                got: model.dim(),
            });
        }
        let explain = self.config.explain_config(self.dataset.encoder())?;
        let proposer = Proposer::new(
            self.dataset.matrix(),
            self.dataset.labels(),
            &split.train,
            self.config.vote_k(),
            explain.distance.clone(),
            self.config.vote_scope,
            self.config.index,
        )?;
        let explainer = Explainer::new(self.dataset.clone(), &split.train, explain)?;
        Ok(SeedContext {
            seed,
            split,
            model,
            explainer,
            proposer,
        })
    }

    /// Membership of the test rows in each protected attribute's privileged group.
    pub fn test_membership(&self, test: &[usize]) -> Vec<Membership> {
        self.dataset
            .schema()
            .protected_indices()
            .into_iter()
            .map(|fi| Membership {
                attribute: self.dataset.schema().features[fi].name.clone(),
                privileged: test
                    .iter()
                    .map(|&i| self.dataset.encoder().is_privileged(fi, self.dataset.row(i)).unwrap_or(false))
                    .collect(),
            })
            .collect()
    }

    /// Consistency neighbor lists among the test rows, as test positions.
    pub fn test_neighbor_lists(&self, test: &[usize]) -> Result<Vec<Vec<usize>>> {
        let k = self.config.consistency_neighbors;
        if k >= test.len() {
            return Err(Error::InvalidArgument(format!(
                "consistency_neighbors = {k} needs more than {} test rows",
                test.len()
            )));
        }
        let rows = self.dataset.matrix().select(Axis(0), test);
        let distance = self.config.effective_distance(self.dataset.encoder())?;
        neighbor_lists(rows.view(), k, &distance, self.config.index)
    }

    pub fn metrics(
        &self,
        test: &[usize],
        predictions: &[bool],
        groups: &[Membership],
        neighbors: &[Vec<usize>],
    ) -> Result<MetricReport> {
        let labels: Vec<bool> = test.iter().map(|&i| self.dataset.labels()[i]).collect();
        MetricReport::compute(
            predictions,
            &labels,
            groups,
            neighbors,
            self.config.consistency_form,
            self.config.dp_mode,
        )
    }

    /// Protected flips of every test row, evaluated in one batch.
    pub fn batch_flips(&self, ctx: &SeedContext, test_rows: &Array2<f64>, probs: &[f64]) -> Result<Vec<FlipResult>> {
        let encoder = self.dataset.encoder();
        let mut flipped = Array2::zeros(test_rows.raw_dim());
        let mut assignments = Vec::with_capacity(test_rows.nrows());
        for (i, row) in test_rows.outer_iter().enumerate() {
            let (f, mut a) = flip_row(encoder, row.as_slice().expect("owned rows are contiguous"))?;
            ctx.explainer.name_assignments(&mut a);
            flipped.row_mut(i).assign(&ndarray::ArrayView1::from(&f[..]));
            assignments.push(a);
        }
        let flipped_probs = ctx.model.predict_proba_batch(flipped.view())?;
        let threshold = ctx.model.threshold();
        Ok(probs
            .iter()
            .zip(flipped_probs)
            .zip(assignments)
            .map(|((&p, fp), a)| flip_result(threshold, p, fp, a))
            .collect())
    }

    fn display_values(&self, row: usize) -> Vec<String> {
        self.dataset
            .raw_row(row)
            .map(|r| r.iter().map(Cell::to_string).collect())
            .unwrap_or_default()
    }

    /// Scores one seed.
    pub fn run_seed(&self, ctx: &SeedContext) -> Result<(SeedResult, Vec<ReportedExplanation>)> {
        let test = &ctx.split.test;
        let test_rows = self.dataset.matrix().select(Axis(0), test);
        let probs = ctx.model.predict_proba_batch(test_rows.view())?;
        let threshold = ctx.model.threshold();
        let preds: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
        let flips = self.batch_flips(ctx, &test_rows, &probs)?;

        let negatives: Vec<usize> = (0..test.len()).filter(|&p| !preds[p]).collect();
        let explained: Vec<(usize, Explanation)> = negatives
            .par_iter()
            .map(|&pos| {
                let row = test[pos];
                let e = ctx.explainer.explain_with_flip(
                    Some(row),
                    self.dataset.row(row),
                    self.display_values(row),
                    flips[pos].clone(),
                )?;
                Ok((pos, e))
            })
            .collect::<Result<_>>()?;
        let inconclusive_count = explained.iter().filter(|(_, e)| e.verdict == Verdict::Inconclusive).count();
        let flagged: Vec<(usize, Explanation)> = explained
            .into_iter()
            .filter(|(_, e)| e.verdict == Verdict::Unfair)
            .collect();

        let proposals: Vec<RelabelProposal> = flagged
            .par_iter()
            .map(|(pos, _)| ctx.proposer.propose(test[*pos], self.dataset.row(test[*pos]), preds[*pos]))
            .collect::<Result<_>>()?;
        let mut accept_all = DecisionLedger::new();
        for p in &proposals {
            accept_all.record(p.query_index, Decision::Accepted, None, "");
        }
        let post = apply_ledger_indexed(test, &preds, &proposals, &accept_all)?;

        let groups = self.test_membership(test);
        let neighbors = self.test_neighbor_lists(test)?;
        let metrics_pre = self.metrics(test, &preds, &groups, &neighbors)?;
        let metrics_post = self.metrics(test, &post.predictions, &groups, &neighbors)?;

        let n = test.len() as f64;
        let flip_changed_count = flips.iter().filter(|f| f.changed).count();
        let flip_to_positive_count = flips
            .iter()
            .filter(|f| f.changed && !f.original_prediction)
            .count();
        let mut result = SeedResult {
            seed: ctx.seed,
            train_size: ctx.split.train.len(),
            test_size: test.len(),
            negative_count: negatives.len(),
            flagged_count: flagged.len(),
            inconclusive_count,
            flagged_fraction: flagged.len() as f64 / n,
            flip_changed_count,
            flip_rate: flip_changed_count as f64 / n,
            flip_to_positive_count,
            flip_to_positive_rate: flip_to_positive_count as f64 / n,
            metrics_pre,
            metrics_post,
            post_changed_count: post.changed,
            group_breakdown: Vec::new(),
            proposals: proposals.clone(),
            model: match &ctx.model {
                AuditedModel::Logistic(m) => Some(ModelSnapshot::of(m)),
                AuditedModel::External(_) => None,
            },
            test_indices: test.clone(),
            test_predictions: preds.iter().map(|&p| if p { '1' } else { '0' }).collect(),
        };
        let flagged_rows: Vec<usize> = flagged.iter().map(|(pos, _)| test[*pos]).collect();
        result.group_breakdown = group_breakdown(&result, &self.dataset, &flagged_rows);

        let cap = self.config.max_explanations_per_seed.unwrap_or(usize::MAX);
        let reported = flagged
            .into_iter()
            .zip(proposals)
            .take(cap)
            .map(|((pos, explanation), proposal)| ReportedExplanation {
                seed: ctx.seed,
                id: test[pos],
                explanation,
                proposal: Some(proposal),
            })
            .collect();
        Ok((result, reported))
    }

    pub fn run(&self) -> Result<AuditReport> {
        let mut seeds = Vec::with_capacity(self.config.seeds.len());
        let mut explanations = Vec::new();
        for &seed in &self.config.seeds {
            let ctx = self.seed_context(seed)?;
            let (result, reported) = self.run_seed(&ctx)?;
            log::info!(
                "seed {seed}: {} flagged of {} test rows, flip rate {:.4}",
                result.flagged_count,
                result.test_size,
                result.flip_rate
            );
            seeds.push(result);
            explanations.extend(reported);
        }
        Ok(AuditReport {
            header: ReportHeader::now(),
            format_version: REPORT_FORMAT_VERSION,
            config: self.config.clone(),
            dataset: DatasetSummary {
                rows: self.dataset.len(),
                dropped_rows: self.dropped_rows,
                positives: self.dataset.labels().iter().filter(|&&y| y).count(),
                encoded_width: self.dataset.width(),
                column_fingerprint: self.dataset.encoder().fingerprint(),
            },
            aggregate: Aggregate::of(&seeds),
            seeds,
            explanations,
        })
    }
}

pub fn run_audit(config: &AuditConfig) -> Result<AuditReport> {
    Audit::load(config.clone())?.run()
}
