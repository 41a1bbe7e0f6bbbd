//! Tabular data pipeline: schema, CSV loading, encoding and seeded splits.
//!
//! Categorical features are one-hot encoded, numeric features are cut into
//! equal-width bins whose index is min-max scaled into `[0, 1]`. Protected
//! features are encoded as a two-group indicator (privileged value vs. the
//! rest) so that flipping group membership is an exact involution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default number of equal-width bins for numeric features.
pub const DEFAULT_BINS: usize = 10;

/// Token that marks a missing cell in the Adult files.
pub const MISSING_TOKEN: &str = "?";

/// Version tag of the shuffle used by [`split`]. Bump when the algorithm changes.
pub const SHUFFLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub protected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privileged_value: Option<String>,
}

impl FeatureSpec {
    pub fn categorical(name: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            protected: false,
            privileged_value: None,
        }
    }

    pub fn numeric(name: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
            protected: false,
            privileged_value: None,
        }
    }

    pub fn protected(name: &str, privileged_value: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            protected: true,
            privileged_value: Some(privileged_value.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub label_name: String,
    pub positive_label: String,
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>, label_name: &str, positive_label: &str) -> Result<Self> {
        let schema = Schema {
            features,
            label_name: label_name.to_string(),
            positive_label: positive_label.to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidSchema("schema has no features".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate feature `{}`", f.name)));
            }
            if f.name == self.label_name {
                return Err(Error::InvalidSchema(format!(
                    "label `{}` is also listed as a feature",
                    f.name
                )));
            }
            match (f.protected, &f.privileged_value) {
                (true, None) => {
                    return Err(Error::InvalidSchema(format!(
                        "protected feature `{}` needs a privileged_value",
                        f.name
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::InvalidSchema(format!(
                        "privileged_value given for unprotected feature `{}`",
                        f.name
                    )))
                }
                _ => {}
            }
            if f.protected && f.kind != FeatureKind::Categorical {
                return Err(Error::InvalidSchema(format!(
                    "protected feature `{}` must be categorical",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Indices of the protected features, in schema order.
    pub fn protected_indices(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.protected)
            .map(|(i, _)| i)
            .collect()
    }
}

/// One raw cell: a category label or a real number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    Category(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Number(v) => write!(f, "{v}"),
            Cell::Category(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Rows containing the missing token in any schema column are dropped.
    #[default]
    Drop,
    /// The missing token is kept verbatim as an ordinary category.
    Keep,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub missing: MissingPolicy,
}

#[derive(Debug, Clone)]
pub struct RawTable {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
    pub labels: Vec<bool>,
    /// Rows skipped because of missing values.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn new(schema: Schema, rows: Vec<Vec<Cell>>, labels: Vec<bool>) -> Result<Self> {
        schema.validate()?;
        if rows.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.features.len() {
                return Err(Error::Shape {
                    expected: schema.features.len(),
                    got: row.len(),
                });
            }
            for (cell, spec) in row.iter().zip(&schema.features) {
                let ok = matches!(
                    (cell, spec.kind),
                    (Cell::Number(v), FeatureKind::Numeric) if v.is_finite()
                ) || matches!((cell, spec.kind), (Cell::Category(_), FeatureKind::Categorical));
                if !ok {
                    return Err(Error::InvalidInput(format!(
                        "row {i}: cell {cell} does not fit feature `{}`",
                        spec.name
                    )));
                }
            }
        }
        Ok(RawTable {
            schema,
            rows,
            labels,
            dropped_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable> {
    load_csv_with(path, schema, &LoadOptions::default())
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    schema: &Schema,
    options: &LoadOptions,
) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, options)
}

/// Reads a header-first CSV. The header must contain every schema feature and
/// the label column; any other columns are ignored.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, options: &LoadOptions) -> Result<RawTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("column `{name}` missing from header")))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| position(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let label_col = position(&schema.label_name)?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    let mut seen_any = false;
    'records: for (i, record) in rdr.records().enumerate() {
        let record = record?;
        seen_any = true;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(feature_cols.len());
        for (spec, &col) in schema.features.iter().zip(&feature_cols) {
            let raw = record.get(col).unwrap_or("");
            if raw == MISSING_TOKEN && options.missing == MissingPolicy::Drop {
                dropped += 1;
                continue 'records;
            }
            let cell = match spec.kind {
                FeatureKind::Categorical => Cell::Category(raw.to_string()),
                FeatureKind::Numeric => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Number(v),
                    _ => {
                        return Err(Error::Parse {
                            row: row_no,
                            column: spec.name.clone(),
                            value: raw.to_string(),
                        })
                    }
                },
            };
            row.push(cell);
        }
        let label = record.get(label_col).unwrap_or("");
        rows.push(row);
        labels.push(label == schema.positive_label);
    }
    if !seen_any || rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows containing `{MISSING_TOKEN}`");
    }
    Ok(RawTable {
        schema: schema.clone(),
        rows,
        labels,
        dropped_rows: dropped,
    })
}

/// What an encoded column represents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub feature: usize,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    /// One-hot indicator of a category (or protected group label).
    Category { category: String },
    /// Scaled bin index of a numeric feature.
    Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum FeatureEncoding {
    OneHot {
        first_column: usize,
        categories: Vec<String>,
    },
    /// Columns `first_column` (privileged) and `first_column + 1` (everyone else).
    Group {
        first_column: usize,
        privileged: String,
        unprivileged: String,
    },
    Binned {
        column: usize,
        bins: usize,
        edges: Vec<f64>,
    },
}

/// Per-feature code recovered from an encoded row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureCode {
    /// Category position within the feature's group, `None` for an all-zero group.
    Category(Option<usize>),
    Bin(usize),
}

/// Fitted encoding state; encodes raw records and decodes encoded rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    schema: Schema,
    bins: usize,
    features: Vec<FeatureEncoding>,
    columns: Vec<Column>,
}

impl Encoder {
    pub fn fit(table: &RawTable, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidArgument(format!("bins must be >= 2, got {bins}")));
        }
        if table.is_empty() {
            return Err(Error::EmptyInput);
        }
        let schema = table.schema.clone();
        let mut features = Vec::with_capacity(schema.features.len());
        let mut columns = Vec::new();
        for (fi, spec) in schema.features.iter().enumerate() {
            let first = columns.len();
            match spec.kind {
                FeatureKind::Categorical if spec.protected => {
                    let privileged = spec.privileged_value.clone().unwrap_or_default();
                    let others: BTreeSet<&str> = table
                        .rows
                        .iter()
                        .filter_map(|r| match &r[fi] {
                            Cell::Category(c) if *c != privileged => Some(c.as_str()),
                            _ => None,
                        })
                        .collect();
                    let unprivileged = if others.len() == 1 {
                        others.iter().next().unwrap().to_string()
                    } else {
                        format!("non-{privileged}")
                    };
                    for label in [&privileged, &unprivileged] {
                        columns.push(Column {
                            name: format!("{}={}", spec.name, label),
                            feature: fi,
                            kind: ColumnKind::Category {
                                category: label.clone(),
                            },
                        });
                    }
                    features.push(FeatureEncoding::Group {
                        first_column: first,
                        privileged,
                        unprivileged,
                    });
                }
                FeatureKind::Categorical => {
                    let categories: BTreeSet<&str> = table
                        .rows
                        .iter()
                        .filter_map(|r| match &r[fi] {
                            Cell::Category(c) => Some(c.as_str()),
                            Cell::Number(_) => None,
                        })
                        .collect();
                    let categories: Vec<String> =
                        categories.into_iter().map(str::to_string).collect();
                    for c in &categories {
                        columns.push(Column {
                            name: format!("{}={}", spec.name, c),
                            feature: fi,
                            kind: ColumnKind::Category { category: c.clone() },
                        });
                    }
                    features.push(FeatureEncoding::OneHot {
                        first_column: first,
                        categories,
                    });
                }
                FeatureKind::Numeric => {
                    let (lo, hi) = table.rows.iter().fold(
                        (f64::INFINITY, f64::NEG_INFINITY),
                        |(lo, hi), r| match r[fi] {
                            Cell::Number(v) => (lo.min(v), hi.max(v)),
                            Cell::Category(_) => (lo, hi),
                        },
                    );
                    if !lo.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "numeric feature `{}` has no numeric values",
                            spec.name
                        )));
                    }
                    let edges = (0..=bins)
                        .map(|i| {
                            if i == bins {
                                hi
                            } else {
                                lo + (hi - lo) * i as f64 / bins as f64
                            }
                        })
                        .collect();
                    columns.push(Column {
                        name: spec.name.clone(),
                        feature: fi,
                        kind: ColumnKind::Bin,
                    });
                    features.push(FeatureEncoding::Binned {
                        column: first,
                        bins,
                        edges,
                    });
                }
            }
        }
        Ok(Encoder {
            schema,
            bins,
            features,
            columns,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn feature_encodings(&self) -> &[FeatureEncoding] {
        &self.features
    }

    /// Encoded column range belonging to feature `fi`.
    pub fn column_range(&self, fi: usize) -> std::ops::Range<usize> {
        match &self.features[fi] {
            FeatureEncoding::OneHot {
                first_column,
                categories,
            } => *first_column..first_column + categories.len(),
            FeatureEncoding::Group { first_column, .. } => *first_column..first_column + 2,
            FeatureEncoding::Binned { column, .. } => *column..column + 1,
        }
    }

    /// Ascending bin edges per numeric feature, keyed by feature name.
    pub fn bin_edges(&self) -> BTreeMap<String, Vec<f64>> {
        self.features
            .iter()
            .zip(&self.schema.features)
            .filter_map(|(enc, spec)| match enc {
                FeatureEncoding::Binned { edges, .. } => Some((spec.name.clone(), edges.clone())),
                _ => None,
            })
            .collect()
    }

    /// Per-column `(min, max)` of the pre-normalization values: bin indices
    /// for numeric columns, 0/1 indicators otherwise.
    pub fn norm_params(&self) -> Vec<(f64, f64)> {
        self.columns
            .iter()
            .map(|c| match (&c.kind, &self.features[c.feature]) {
                (ColumnKind::Bin, FeatureEncoding::Binned { bins, .. }) => {
                    (0.0, (*bins - 1) as f64)
                }
                _ => (0.0, 1.0),
            })
            .collect()
    }

    /// Hex SHA-256 over the ordered column names.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for c in &self.columns {
            hasher.update(c.name.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Encodes one raw record into `out`. Unknown categories leave their
    /// one-hot group all zero; their feature names are returned.
    pub fn encode_into(&self, record: &[Cell], out: &mut [f64]) -> Result<Vec<String>> {
        if record.len() != self.schema.features.len() {
            return Err(Error::Shape {
                expected: self.schema.features.len(),
                got: record.len(),
            });
        }
        if out.len() != self.width() {
            return Err(Error::Shape {
                expected: self.width(),
                got: out.len(),
            });
        }
        let mut unknown = Vec::new();
        for ((enc, spec), cell) in self.features.iter().zip(&self.schema.features).zip(record) {
            match (enc, cell) {
                (
                    FeatureEncoding::OneHot {
                        first_column,
                        categories,
                    },
                    Cell::Category(c),
                ) => {
                    out[*first_column..first_column + categories.len()].fill(0.0);
                    match categories.binary_search(c) {
                        Ok(pos) => out[first_column + pos] = 1.0,
                        Err(_) => unknown.push(spec.name.clone()),
                    }
                }
                (
                    FeatureEncoding::Group {
                        first_column,
                        privileged,
                        ..
                    },
                    Cell::Category(c),
                ) => {
                    let is_priv = c == privileged;
                    out[*first_column] = if is_priv { 1.0 } else { 0.0 };
                    out[first_column + 1] = if is_priv { 0.0 } else { 1.0 };
                }
                (FeatureEncoding::Binned { column, bins, edges }, Cell::Number(v)) => {
                    if !v.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "non-finite value for `{}`",
                            spec.name
                        )));
                    }
                    out[*column] = scale_bin(bin_index(*v, edges, *bins), *bins);
                }
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "cell {cell} does not fit feature `{}`",
                        spec.name
                    )))
                }
            }
        }
        if !unknown.is_empty() {
            log::warn!("unseen categories encoded as all-zero groups: {unknown:?}");
        }
        Ok(unknown)
    }

    pub fn encode_record(&self, record: &[Cell]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.width()];
        self.encode_into(record, &mut out)?;
        Ok(out)
    }

    /// Builds a raw record from a `feature -> value` map (strings or numbers).
    pub fn record_from_map(&self, values: &BTreeMap<String, serde_json::Value>) -> Result<Vec<Cell>> {
        for key in values.keys() {
            if self.schema.feature_index(key).is_none() {
                return Err(Error::SchemaMismatch(format!("unknown feature `{key}`")));
            }
        }
        self.schema
            .features
            .iter()
            .map(|spec| {
                let v = values.get(&spec.name).ok_or_else(|| {
                    Error::SchemaMismatch(format!("record is missing feature `{}`", spec.name))
                })?;
                cell_from_json(spec, v)
            })
            .collect()
    }

    /// Parses one JSON value (string or number) as a cell of feature `fi`.
    pub fn cell_from_value(&self, fi: usize, value: &serde_json::Value) -> Result<Cell> {
        cell_from_json(&self.schema.features[fi], value)
    }

    /// Feature codes of an encoded row.
    pub fn codes(&self, row: ArrayView1<'_, f64>) -> Vec<FeatureCode> {
        self.features
            .iter()
            .map(|enc| match enc {
                FeatureEncoding::OneHot {
                    first_column,
                    categories,
                } => FeatureCode::Category(
                    (0..categories.len()).find(|&j| row[first_column + j] > 0.5),
                ),
                FeatureEncoding::Group { first_column, .. } => FeatureCode::Category(
                    (0..2).find(|&j| row[first_column + j] > 0.5),
                ),
                FeatureEncoding::Binned { column, bins, .. } => {
                    let b = (row[*column] * (*bins - 1) as f64).round();
                    FeatureCode::Bin((b.max(0.0) as usize).min(bins - 1))
                }
            })
            .collect()
    }

    /// Human-readable label of a feature code.
    pub fn code_label(&self, fi: usize, code: FeatureCode) -> String {
        match (&self.features[fi], code) {
            (FeatureEncoding::OneHot { categories, .. }, FeatureCode::Category(Some(j))) => {
                categories[j].clone()
            }
            (
                FeatureEncoding::Group {
                    privileged,
                    unprivileged,
                    ..
                },
                FeatureCode::Category(Some(j)),
            ) => {
                if j == 0 {
                    privileged.clone()
                } else {
                    unprivileged.clone()
                }
            }
            (_, FeatureCode::Category(None)) => "<unknown>".to_string(),
            (FeatureEncoding::Binned { edges, bins, .. }, FeatureCode::Bin(b)) => {
                let close = if b + 1 == *bins { "]" } else { ")" };
                format!("[{},{}{close}", fmt_edge(edges[b]), fmt_edge(edges[b + 1]))
            }
            _ => "<invalid>".to_string(),
        }
    }

    pub fn decode(&self, row: ArrayView1<'_, f64>) -> Result<DecodedRecord> {
        if row.len() != self.width() {
            return Err(Error::Shape {
                expected: self.width(),
                got: row.len(),
            });
        }
        let fields = self
            .codes(row)
            .into_iter()
            .enumerate()
            .map(|(fi, code)| DecodedField {
                feature: self.schema.features[fi].name.clone(),
                value: self.code_label(fi, code),
            })
            .collect();
        Ok(DecodedRecord { fields })
    }

    /// Whether feature `fi` of the encoded row is in the privileged group.
    /// `None` for unprotected features.
    pub fn is_privileged(&self, fi: usize, row: &[f64]) -> Option<bool> {
        match &self.features[fi] {
            FeatureEncoding::Group { first_column, .. } => Some(row[*first_column] > 0.5),
            _ => None,
        }
    }

    /// Sets protected feature `fi` to the given group; returns the group label.
    pub fn set_group(&self, fi: usize, row: &mut [f64], privileged: bool) -> Option<String> {
        match &self.features[fi] {
            FeatureEncoding::Group {
                first_column,
                privileged: p,
                unprivileged: u,
            } => {
                row[*first_column] = if privileged { 1.0 } else { 0.0 };
                row[first_column + 1] = if privileged { 0.0 } else { 1.0 };
                Some(if privileged { p.clone() } else { u.clone() })
            }
            _ => None,
        }
    }
}

fn cell_from_json(spec: &FeatureSpec, v: &serde_json::Value) -> Result<Cell> {
    match (spec.kind, v) {
        (FeatureKind::Numeric, serde_json::Value::Number(n)) => n
            .as_f64()
            .map(Cell::Number)
            .ok_or_else(|| Error::InvalidInput(format!("bad number for `{}`", spec.name))),
        (FeatureKind::Numeric, serde_json::Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Cell::Number)
            .ok_or_else(|| Error::InvalidInput(format!("`{}` expects a number, got {s:?}", spec.name))),
        (FeatureKind::Categorical, serde_json::Value::String(s)) => Ok(Cell::Category(s.clone())),
        (FeatureKind::Categorical, serde_json::Value::Number(n)) => Ok(Cell::Category(n.to_string())),
        _ => Err(Error::InvalidInput(format!(
            "unsupported value {v} for `{}`",
            spec.name
        ))),
    }
}

fn bin_index(v: f64, edges: &[f64], bins: usize) -> usize {
    let (lo, hi) = (edges[0], edges[bins]);
    if hi <= lo {
        return 0;
    }
    let b = ((v - lo) * bins as f64 / (hi - lo)).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

fn scale_bin(bin: usize, bins: usize) -> f64 {
    bin as f64 / (bins - 1) as f64
}

fn fmt_edge(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedField {
    pub feature: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    pub fields: Vec<DecodedField>,
}

impl DecodedRecord {
    pub fn get(&self, feature: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|f| f.feature == feature)
            .map(|f| f.value.as_str())
    }
}

/// Immutable encoded dataset: `[0,1]` design matrix plus the fitted encoder
/// and the raw rows it was built from.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    matrix: Array2<f64>,
    labels: Vec<bool>,
    encoder: Encoder,
    raw: Vec<Vec<Cell>>,
}

pub fn encode(table: &RawTable, bins: usize) -> Result<EncodedDataset> {
    let encoder = Encoder::fit(table, bins)?;
    let mut matrix = Array2::zeros((table.len(), encoder.width()));
    for (i, record) in table.rows.iter().enumerate() {
        let mut row = matrix.row_mut(i);
        let out = row
            .as_slice_mut()
            .expect("freshly allocated matrix is contiguous");
        encoder.encode_into(record, out)?;
    }
    Ok(EncodedDataset {
        matrix,
        labels: table.labels.clone(),
        encoder,
        raw: table.rows.clone(),
    })
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix
            .row(i)
            .to_slice()
            .expect("design matrix is row-major")
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn schema(&self) -> &Schema {
        self.encoder.schema()
    }

    pub fn column_map(&self) -> &[Column] {
        self.encoder.columns()
    }

    pub fn raw_row(&self, i: usize) -> Result<&[Cell]> {
        self.raw
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            })
    }

    pub fn decode_row(&self, i: usize) -> Result<DecodedRecord> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        self.encoder.decode(self.matrix.row(i))
    }

    /// Privileged-group membership of every row for protected feature `fi`.
    pub fn group_membership(&self, fi: usize) -> Vec<bool> {
        (0..self.len())
            .map(|i| self.encoder.is_privileged(fi, self.row(i)).unwrap_or(false))
            .collect()
    }

    /// Index of the first row whose raw values equal `record`.
    pub fn find_raw(&self, record: &[Cell]) -> Option<usize> {
        self.raw.iter().position(|r| r.as_slice() == record)
    }

    /// Most frequent raw category among rows of feature `fi` (ties: smallest label).
    pub fn modal_category<F: Fn(usize) -> bool>(&self, fi: usize, filter: F) -> Option<String> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (i, r) in self.raw.iter().enumerate() {
            if let Cell::Category(c) = &r[fi] {
                if filter(i) {
                    *counts.entry(c.as_str()).or_default() += 1;
                }
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| c.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    /// Training row indices, ascending.
    pub train: Vec<usize>,
    /// Test row indices, ascending.
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Number of training rows for `n` rows: `round(0.8 n)`, halves rounded up.
pub fn train_size(n: usize) -> usize {
    (8 * n + 5) / 10
}

/// Seeded permutation of `0..n`.
///
/// Shuffle v1: ChaCha8 seeded with `seed_from_u64(seed)`, Fisher-Yates from the
/// last position down, drawing `j = (u64 * (i + 1)) >> 64` for position `i`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        order.swap(i, j);
    }
    order
}

pub fn split_rows(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 5 {
        return Err(Error::TooSmall { rows: n, min: 5 });
    }
    let order = permutation(n, seed);
    let cut = train_size(n);
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

pub fn split(dataset: &EncodedDataset, seed: u64) -> Result<SplitIndices> {
    split_rows(dataset.len(), seed)
}
