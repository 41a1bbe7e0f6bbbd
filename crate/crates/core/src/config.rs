//! Audit configuration file.
//!
//! One JSON document names the schema and data files (relative to the
//! config file's directory) and every audit setting. Omitted settings take
//! their defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Encoder, MissingPolicy, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::explain::{ExplainConfig, FlagMode, DEFAULT_K};
use crate::fairness::{ConsistencyForm, DpMode};
use crate::mitigation::VoteScope;
use crate::model::TrainConfig;
use crate::neighbors::{Distance, IndexKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSource {
    /// In-process logistic regression trained on each split.
    Logistic(TrainConfig),
    /// JSON-lines subprocess; see [`crate::model::ExternalPredictor`].
    External { command: Vec<String> },
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Logistic(TrainConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub schema: PathBuf,
    pub data: PathBuf,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub bins: usize,
    pub distance: Distance,
    /// Per-feature distance weights, spread over the feature's encoded
    /// columns; features not listed weigh 1.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub feature_weights: BTreeMap<String, f64>,
    pub flag_mode: FlagMode,
    pub numeric_tol: usize,
    pub require_protected_difference: bool,
    pub missing: MissingPolicy,
    pub model: ModelSource,
    pub consistency_neighbors: usize,
    pub consistency_form: ConsistencyForm,
    pub dp_mode: DpMode,
    pub vote_scope: VoteScope,
    /// Neighbors in the relabel vote; defaults to `k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vote_k: Option<usize>,
    pub index: IndexKind,
    /// Cap on explanations stored per seed (all flagged when absent).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_explanations_per_seed: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            schema: PathBuf::new(),
            data: PathBuf::new(),
            seeds: (0..10).collect(),
            k: DEFAULT_K,
            bins: DEFAULT_BINS,
            distance: Distance::Euclidean,
            feature_weights: BTreeMap::new(),
            flag_mode: FlagMode::Conjunctive,
            numeric_tol: 1,
            require_protected_difference: false,
            missing: MissingPolicy::Drop,
            model: ModelSource::default(),
            consistency_neighbors: 5,
            consistency_form: ConsistencyForm::NeighborMean,
            dp_mode: DpMode::TprFpr,
            vote_scope: VoteScope::AllLabels,
            vote_k: None,
            index: IndexKind::KdTree,
            max_explanations_per_seed: None,
            base_dir: PathBuf::new(),
        }
    }
}

impl AuditConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: AuditConfig = serde_json::from_str(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.vote_k == Some(0) {
            return Err(Error::InvalidArgument("vote_k must be at least 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::InvalidArgument("bins must be at least 2".into()));
        }
        if self.consistency_neighbors == 0 {
            return Err(Error::InvalidArgument("consistency_neighbors must be at least 1".into()));
        }
        if let ModelSource::External { command } = &self.model {
            if command.is_empty() {
                return Err(Error::InvalidArgument("external model command is empty".into()));
            }
        }
        if self.feature_weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("feature weights must be finite and non-negative".into()));
        }
        if let Distance::Minkowski { p } | Distance::WeightedMinkowski { p, .. } = self.distance {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!("minkowski p must be >= 1, got {p}")));
            }
        }
        Ok(())
    }

    pub fn schema_path(&self) -> PathBuf {
        self.base_dir.join(&self.schema)
    }

    pub fn data_path(&self) -> PathBuf {
        self.base_dir.join(&self.data)
    }

    pub fn vote_k(&self) -> usize {
        self.vote_k.unwrap_or(self.k)
    }

    /// Distance over encoded columns with `feature_weights` applied.
    pub fn effective_distance(&self, encoder: &Encoder) -> Result<Distance> {
        if self.feature_weights.is_empty() {
            return Ok(self.distance.clone());
        }
        let schema = encoder.schema();
        for name in self.feature_weights.keys() {
            if schema.feature_index(name).is_none() {
                return Err(Error::InvalidArgument(format!("feature weight for unknown feature `{name}`")));
            }
        }
        let (p, mut weights) = match &self.distance {
            Distance::Euclidean => (2.0, vec![1.0; encoder.width()]),
            Distance::Manhattan => (1.0, vec![1.0; encoder.width()]),
            Distance::Minkowski { p } => (*p, vec![1.0; encoder.width()]),
            Distance::WeightedMinkowski { p, weights } => (*p, weights.clone()),
            Distance::Chebyshev => {
                return Err(Error::InvalidArgument(
                    "feature weights are not supported with the chebyshev distance".into(),
                ))
            }
        };
        if weights.len() != encoder.width() {
            return Err(Error::Shape {
                expected: encoder.width(),
                got: weights.len(),
            });
        }
        for (fi, spec) in schema.features.iter().enumerate() {
            if let Some(w) = self.feature_weights.get(&spec.name) {
                for c in encoder.column_range(fi) {
                    weights[c] *= w;
                }
            }
        }
        let distance = Distance::WeightedMinkowski { p, weights };
        distance.validate(encoder.width())?;
        Ok(distance)
    }

    pub fn explain_config(&self, encoder: &Encoder) -> Result<ExplainConfig> {
        Ok(ExplainConfig {
            k: self.k,
            distance: self.effective_distance(encoder)?,
            flag_mode: self.flag_mode,
            numeric_tol: self.numeric_tol,
            require_protected_difference: self.require_protected_difference,
            index: self.index,
        })
    }
}

/// Parses a seed list: `0..9` (inclusive), `1,2,5`, or a mix like `0..3,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("cannot read seed list `{text}`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}
