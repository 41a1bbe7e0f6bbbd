//! Binary classifiers behind a uniform black-box contract.
//!
//! [`LogisticModel`] is trained in-process by full-batch gradient descent on
//! L2-regularized binary cross-entropy. [`ExternalPredictor`] wraps any
//! program that speaks newline-delimited JSON: one encoded row per input
//! line, one probability per output line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Black-box binary classifier over encoded rows.
pub trait Predictor: Send + Sync {
    /// Encoded row width the model expects.
    fn dim(&self) -> usize;

    fn threshold(&self) -> f64 {
        DEFAULT_THRESHOLD
    }

    fn predict_proba(&self, row: &[f64]) -> Result<f64>;

    fn predict_proba_batch(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        rows.outer_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.predict_proba(s),
                None => self.predict_proba(&r.to_vec()),
            })
            .collect()
    }

    fn predict(&self, row: &[f64]) -> Result<bool> {
        Ok(self.predict_proba(row)? >= self.threshold())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    pub convergence_tol: f64,
    pub seed: u64,
    /// Half-width of the uniform weight initialization; 0 means zero init.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 1000,
            l2_penalty: 1e-4,
            convergence_tol: 1e-7,
            seed: 0,
            init_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    /// Encoder fingerprint of the columns the weights refer to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_fingerprint: Option<String>,
    #[serde(default)]
    pub training_config: TrainConfig,
    /// Training loss before each gradient step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        LogisticModel {
            weights,
            bias,
            threshold: DEFAULT_THRESHOLD,
            column_fingerprint: None,
            training_config: TrainConfig::default(),
            loss_history: Vec::new(),
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0,1), got {threshold}"
            )));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn logit(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::Shape {
                expected: self.weights.len(),
                got: row.len(),
            });
        }
        Ok(self.bias + dot(&self.weights, row))
    }

    /// Mean regularized cross-entropy on `(rows, labels)`.
    pub fn loss(&self, rows: ArrayView2<'_, f64>, labels: &[bool]) -> Result<f64> {
        loss_at(&self.weights, self.bias, rows, labels, self.training_config.l2_penalty)
    }

    /// Analytic gradient of [`LogisticModel::loss`]: `(d/dw, d/db)`.
    pub fn gradient(&self, rows: ArrayView2<'_, f64>, labels: &[bool]) -> Result<(Vec<f64>, f64)> {
        gradient_at(&self.weights, self.bias, rows, labels, self.training_config.l2_penalty)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LogisticModel = serde_json::from_str(&text)?;
        if !(model.threshold > 0.0 && model.threshold < 1.0) {
            return Err(Error::InvalidInput(format!(
                "stored threshold {} outside (0,1)",
                model.threshold
            )));
        }
        Ok(model)
    }

    /// Errors unless the model was trained on columns with this fingerprint.
    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        match &self.column_fingerprint {
            Some(f) if f != fingerprint => Err(Error::SchemaMismatch(
                "model was trained on a different column layout".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl Predictor for LogisticModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(row)?))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_inputs(rows: ArrayView2<'_, f64>, labels: &[bool], dim: usize) -> Result<()> {
    if rows.nrows() == 0 {
        return Err(Error::InvalidInput("empty training matrix".into()));
    }
    if rows.nrows() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            rows.nrows(),
            labels.len()
        )));
    }
    if rows.ncols() != dim {
        return Err(Error::Shape {
            expected: dim,
            got: rows.ncols(),
        });
    }
    Ok(())
}

fn loss_at(
    weights: &[f64],
    bias: f64,
    rows: ArrayView2<'_, f64>,
    labels: &[bool],
    l2: f64,
) -> Result<f64> {
    Ok(loss_and_gradient(weights, bias, rows, labels, l2, false)?.0)
}

fn gradient_at(
    weights: &[f64],
    bias: f64,
    rows: ArrayView2<'_, f64>,
    labels: &[bool],
    l2: f64,
) -> Result<(Vec<f64>, f64)> {
    let (_, grad) = loss_and_gradient(weights, bias, rows, labels, l2, true)?;
    Ok(grad.expect("gradient requested"))
}

type Gradient = (Vec<f64>, f64);

/// Loss and (optionally) its gradient from a single pass over the logits.
fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    rows: ArrayView2<'_, f64>,
    labels: &[bool],
    l2: f64,
    with_gradient: bool,
) -> Result<(f64, Option<Gradient>)> {
    check_inputs(rows, labels, weights.len())?;
    let n = labels.len() as f64;
    let w = ArrayView1::from(weights);
    let z = rows.dot(&w) + bias;
    let data: f64 = z
        .iter()
        .zip(labels)
        .map(|(&z, &y)| if y { softplus(-z) } else { softplus(z) })
        .sum();
    let loss = data / n + 0.5 * l2 * dot(weights, weights);
    if !with_gradient {
        return Ok((loss, None));
    }
    let residual: Array1<f64> = z
        .iter()
        .zip(labels)
        .map(|(&z, &y)| sigmoid(z) - if y { 1.0 } else { 0.0 })
        .collect();
    let gw = rows.t().dot(&residual) / n;
    let gb = residual.sum() / n;
    let grad = gw
        .iter()
        .zip(weights)
        .map(|(g, w)| g + l2 * w)
        .collect();
    Ok((loss, Some((grad, gb))))
}

pub fn train_logistic(
    rows: ArrayView2<'_, f64>,
    labels: &[bool],
    config: &TrainConfig,
) -> Result<LogisticModel> {
    check_inputs(rows, labels, rows.ncols())?;
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("training matrix contains NaN or infinity".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateTraining(
            "labels contain a single class".into(),
        ));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.l2_penalty < 0.0 {
        return Err(Error::InvalidArgument(
            "learning_rate must be > 0 and l2_penalty >= 0".into(),
        ));
    }

    let d = rows.ncols();
    let mut weights = if config.init_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        (0..d)
            .map(|_| rng.random_range(-config.init_scale..=config.init_scale))
            .collect()
    } else {
        vec![0.0; d]
    };
    let mut bias = 0.0;
    let l2 = config.l2_penalty;
    let mut history = Vec::with_capacity(config.epochs.min(10_000));
    let mut prev: Option<f64> = None;

    // history[t] is the loss before update t; training stops after `epochs`
    // updates or once an update improves the loss by less than the tolerance.
    for _ in 0..config.epochs {
        let (loss, grad) = loss_and_gradient(&weights, bias, rows, labels, l2, true)?;
        history.push(loss);
        if let Some(p) = prev {
            if p - loss < config.convergence_tol {
                break;
            }
        }
        prev = Some(loss);
        let (gw, gb) = grad.expect("gradient requested");
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * gb;
    }

    Ok(LogisticModel {
        weights,
        bias,
        threshold: DEFAULT_THRESHOLD,
        column_fingerprint: None,
        training_config: *config,
        loss_history: history,
    })
}

/// Step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-6;

/// Largest relative deviation between the analytic gradient and central
/// finite differences over every weight and the bias.
///
/// Relative deviation is `|a - f| / max(|a|, |f|, 1e-3)`; the floor keeps
/// near-zero components from turning rounding noise into huge ratios.
pub fn gradient_check(model: &LogisticModel, rows: ArrayView2<'_, f64>, labels: &[bool]) -> Result<f64> {
    let l2 = model.training_config.l2_penalty;
    let (gw, gb) = gradient_at(&model.weights, model.bias, rows, labels, l2)?;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-3);
    let mut worst: f64 = 0.0;
    let mut w = model.weights.clone();
    for j in 0..w.len() {
        let orig = w[j];
        w[j] = orig + FD_STEP;
        let up = loss_at(&w, model.bias, rows, labels, l2)?;
        w[j] = orig - FD_STEP;
        let down = loss_at(&w, model.bias, rows, labels, l2)?;
        w[j] = orig;
        worst = worst.max(rel(gw[j], (up - down) / (2.0 * FD_STEP)));
    }
    let up = loss_at(&w, model.bias + FD_STEP, rows, labels, l2)?;
    let down = loss_at(&w, model.bias - FD_STEP, rows, labels, l2)?;
    worst = worst.max(rel(gb, (up - down) / (2.0 * FD_STEP)));
    Ok(worst)
}

/// Predictor backed by an external program speaking JSON lines on stdio.
///
/// Each batch spawns the command once, writes one JSON array per row to its
/// stdin and reads one probability per line from its stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalPredictor {
    pub command: Vec<String>,
    pub dim: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl ExternalPredictor {
    pub fn new(command: Vec<String>, dim: usize) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidArgument("external predictor command is empty".into()));
        }
        Ok(ExternalPredictor {
            command,
            dim,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    fn run(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        for r in rows {
            if r.len() != self.dim {
                return Err(Error::Shape {
                    expected: self.dim,
                    got: r.len(),
                });
            }
        }
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External(format!("cannot spawn {:?}: {e}", self.command[0])))?;
        let mut payload = String::new();
        for r in rows {
            payload.push_str(&serde_json::to_string(r)?);
            payload.push('\n');
        }
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut out = Vec::with_capacity(rows.len());
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(|e| Error::External(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let p: f64 = serde_json::from_str(line)
                .map_err(|_| Error::External(format!("not a probability: {line:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::External(format!("probability {p} outside [0,1]")));
            }
            out.push(p);
        }
        writer
            .join()
            .map_err(|_| Error::External("stdin writer panicked".into()))?
            .map_err(|e| Error::External(format!("writing rows: {e}")))?;
        let status = child.wait().map_err(|e| Error::External(e.to_string()))?;
        if !status.success() {
            return Err(Error::External(format!("predictor exited with {status}")));
        }
        if out.len() != rows.len() {
            return Err(Error::External(format!(
                "sent {} rows, received {} probabilities",
                rows.len(),
                out.len()
            )));
        }
        Ok(out)
    }
}

impl Predictor for ExternalPredictor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        Ok(self.run(&[row])?[0])
    }

    fn predict_proba_batch(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let owned: Vec<Vec<f64>> = rows.outer_iter().map(|r| r.to_vec()).collect();
        let refs: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
        self.run(&refs)
    }
}
