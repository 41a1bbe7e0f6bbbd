//! HTTP review API over a finished audit.
//!
//! | method | path                          | purpose                                  |
//! |--------|-------------------------------|------------------------------------------|
//! | GET    | `/api/report`                 | the audit report file, verbatim          |
//! | GET    | `/api/explanations`           | flagged instances (`verdict`, `page`)    |
//! | GET    | `/api/explanations/{id}`      | one explanation, computed if not stored  |
//! | POST   | `/api/whatif`                 | re-predict a row with edited values      |
//! | GET    | `/api/decisions/{id}`         | current decision, history, proposal      |
//! | POST   | `/api/decisions/{id}`         | record a decision                        |
//! | GET    | `/api/metrics`                | metrics with `ledger=none` or `applied`  |
//!
//! Reviews cover the report's first seed. Errors are JSON
//! `{"error": {"status": .., "message": ..}}` with status 400, 404 or 409.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audit::{Audit, AuditReport, AuditedModel, ReportedExplanation, SeedContext};
use crate::config::ModelSource;
use crate::data::Cell;
use crate::error::{Error, Result};
use crate::explain::{Explanation, Verdict};
use crate::fairness::{Membership, MetricReport};
use crate::mitigation::{apply_ledger_indexed, Decision, LedgerStore, RelabelProposal};
use crate::model::{ExternalPredictor, Predictor};

pub const DEFAULT_PAGE_SIZE: usize = 50;

/// State behind the API: the report, the audited model, and the ledger.
pub struct ApiSession {
    report: AuditReport,
    report_text: String,
    audit: Audit,
    ctx: SeedContext,
    predictions: Vec<bool>,
    groups: Vec<Membership>,
    neighbors: Vec<Vec<usize>>,
    proposals: BTreeMap<usize, RelabelProposal>,
    ledger: Mutex<LedgerStore>,
}

impl std::fmt::Debug for ApiSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApiSession")
            .field("seed", &self.ctx.seed)
            .field("proposals", &self.proposals.len())
            .finish_non_exhaustive()
    }
}

impl ApiSession {
    /// Rebuilds the review seed's model and indices from `report` and `audit`.
    /// `report_text` is served unchanged by `GET /api/report`.
    pub fn new(report: AuditReport, report_text: String, audit: Audit, ledger_path: impl Into<PathBuf>) -> Result<Self> {
        let seed = report
            .seeds
            .first()
            .ok_or_else(|| Error::InvalidInput("report contains no seeds".into()))?;
        if report.dataset.column_fingerprint != audit.dataset().encoder().fingerprint() {
            return Err(Error::SchemaMismatch("report was produced from a different column layout".into()));
        }
        let split = crate::data::split(audit.dataset(), seed.seed)?;
        if split.test != seed.test_indices {
            return Err(Error::SchemaMismatch("report test rows do not match the data".into()));
        }
        let model = match (&audit.config().model, &seed.model) {
            (_, Some(snapshot)) => AuditedModel::Logistic(snapshot.to_model()?),
            (ModelSource::External { command }, None) => {
                AuditedModel::External(ExternalPredictor::new(command.clone(), audit.dataset().width())?)
            }
            (ModelSource::Logistic(_), None) => {
                return Err(Error::InvalidInput("report has no model weights".into()));
            }
        };
        let ctx = audit.context_with_model(seed.seed, split, model)?;
        let groups = audit.test_membership(&ctx.split.test);
        let neighbors = audit.test_neighbor_lists(&ctx.split.test)?;
        let proposals = seed.proposals.iter().map(|p| (p.query_index, p.clone())).collect();
        let ledger = LedgerStore::open(ledger_path)?;
        Ok(ApiSession {
            predictions: seed.predictions(),
            report,
            report_text,
            audit,
            ctx,
            groups,
            neighbors,
            proposals,
            ledger: Mutex::new(ledger),
        })
    }

    pub fn seed(&self) -> u64 {
        self.ctx.seed
    }

    fn stored(&self, id: usize) -> Option<&ReportedExplanation> {
        self.report
            .explanations
            .iter()
            .find(|e| e.seed == self.ctx.seed && e.id == id)
    }

    fn explanation(&self, id: usize) -> Result<Explanation> {
        if let Some(e) = self.stored(id) {
            return Ok(e.explanation.clone());
        }
        if id >= self.audit.dataset().len() {
            return Err(Error::NotFound(format!("row {id}")));
        }
        self.ctx.explainer.explain_row(id, &self.ctx.model)
    }

    fn is_test_row(&self, id: usize) -> bool {
        self.ctx.split.test.binary_search(&id).is_ok()
    }

    /// Metrics on the review seed's test rows, optionally with the ledger applied.
    pub fn metrics(&self, applied: bool) -> Result<(MetricReport, usize)> {
        let (preds, changed) = if applied {
            let ledger = self.ledger.lock().expect("ledger lock");
            let proposals: Vec<RelabelProposal> = self.proposals.values().cloned().collect();
            let out = apply_ledger_indexed(&self.ctx.split.test, &self.predictions, &proposals, ledger.ledger())?;
            (out.predictions, out.changed)
        } else {
            (self.predictions.clone(), 0)
        };
        let report = self
            .audit
            .metrics(&self.ctx.split.test, &preds, &self.groups, &self.neighbors)?;
        Ok((report, changed))
    }

    fn what_if(&self, request: WhatIf) -> Result<Value> {
        let dataset = self.audit.dataset();
        let schema = dataset.schema();
        let mut record: Vec<Cell> = match (request.row, request.record) {
            (Some(id), None) => dataset
                .raw_row(id)
                .map_err(|_| Error::NotFound(format!("row {id}")))?
                .to_vec(),
            (None, Some(values)) => dataset.encoder().record_from_map(&values)?,
            _ => return Err(Error::InvalidInput("give exactly one of `row` and `record`".into())),
        };
        let original_row = dataset.encoder().encode_record(&record)?;
        for (name, value) in &request.edits {
            let fi = schema
                .feature_index(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown feature `{name}`")))?;
            record[fi] = dataset.encoder().cell_from_value(fi, value)?;
        }
        let model = &self.ctx.model;
        let row = dataset.encoder().encode_record(&record)?;
        let probability = model.predict_proba(&row)?;
        let prediction = probability >= model.threshold();
        let original = model.predict_proba(&original_row)?;
        let changed = (original >= model.threshold()) != prediction;
        Ok(json!({
            "prediction": if prediction { "positive" } else { "negative" },
            "probability": probability,
            "original_prediction": if original >= model.threshold() { "positive" } else { "negative" },
            "original_probability": original,
            "changed": changed,
            "record": record.iter().map(Cell::to_string).collect::<Vec<_>>(),
        }))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatIf {
    #[serde(default)]
    row: Option<usize>,
    #[serde(default)]
    record: Option<BTreeMap<String, Value>>,
    #[serde(default)]
    edits: BTreeMap<String, Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    decision: Decision,
    #[serde(default)]
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct ListItem {
    id: usize,
    verdict: Verdict,
    probability: f64,
    flip_changed: bool,
    proposed_prediction: Option<bool>,
    decision: Option<Decision>,
}

/// API error carrying its HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) | Error::IndexOutOfRange { .. } => StatusCode::NOT_FOUND,
            Error::LedgerConsistency(_) => StatusCode::CONFLICT,
            Error::Io { .. } | Error::External(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "status": self.status.as_u16(), "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;
type Shared = Arc<ApiSession>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn parse_id(raw: &str) -> ApiResult<usize> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("`{raw}` is not a row id")))
}

async fn get_report(State(s): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], s.report_text.clone()).into_response()
}

async fn list_explanations(
    State(s): State<Shared>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let verdict = match q.get("verdict").map(String::as_str) {
        None | Some("unfair") => Verdict::Unfair,
        Some("fair") => Verdict::Fair,
        Some("inconclusive") => Verdict::Inconclusive,
        Some(other) => return Err(ApiError::bad_request(format!("unknown verdict `{other}`"))),
    };
    let page: usize = match q.get("page") {
        None => 1,
        Some(p) => p
            .parse()
            .ok()
            .filter(|&p| p >= 1)
            .ok_or_else(|| ApiError::bad_request("page must be a positive integer"))?,
    };
    let per_page: usize = match q.get("per_page") {
        None => DEFAULT_PAGE_SIZE,
        Some(p) => p
            .parse()
            .ok()
            .filter(|&p| (1..=1000).contains(&p))
            .ok_or_else(|| ApiError::bad_request("per_page must lie in 1..=1000"))?,
    };
    let ledger = s.ledger.lock().expect("ledger lock");
    let matching: Vec<&ReportedExplanation> = s
        .report
        .explanations
        .iter()
        .filter(|e| e.seed == s.seed() && e.explanation.verdict == verdict)
        .collect();
    let items: Vec<ListItem> = matching
        .iter()
        .skip((page - 1) * per_page)
        .take(per_page)
        .map(|e| ListItem {
            id: e.id,
            verdict: e.explanation.verdict,
            probability: e.explanation.query.probability,
            flip_changed: e.explanation.flip.changed,
            proposed_prediction: e.proposal.as_ref().map(|p| p.proposed_prediction),
            decision: ledger.ledger().get(e.id).map(|d| d.decision),
        })
        .collect();
    Ok(Json(json!({
        "seed": s.seed(),
        "page": page,
        "per_page": per_page,
        "total": matching.len(),
        "items": items,
    })))
}

async fn get_explanation(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    let session = s.clone();
    let explanation = tokio::task::spawn_blocking(move || session.explanation(id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({
        "seed": s.seed(),
        "id": id,
        "explanation": explanation,
        "proposal": s.proposals.get(&id),
    })))
}

async fn what_if(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<Value>> {
    let request: WhatIf = parse_body(&body)?;
    Ok(Json(s.what_if(request)?))
}

async fn get_decision(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    if !s.is_test_row(id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("row {id} is not a reviewed test row")));
    }
    let ledger = s.ledger.lock().expect("ledger lock");
    let history: Vec<_> = ledger
        .ledger()
        .events()
        .iter()
        .filter(|e| e.query_index == id)
        .collect();
    Ok(Json(json!({
        "id": id,
        "entry": ledger.ledger().get(id),
        "history": history,
        "proposal": s.proposals.get(&id),
    })))
}

async fn post_decision(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    let request: DecisionBody = parse_body(&body)?;
    if !s.is_test_row(id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("row {id} is not a reviewed test row")));
    }
    if request.decision == Decision::Accepted && !s.proposals.contains_key(&id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("row {id} has no relabel proposal to accept"),
        ));
    }
    let session = s.clone();
    let (recorded, entry) = tokio::task::spawn_blocking(move || {
        let mut ledger = session.ledger.lock().expect("ledger lock");
        let recorded = ledger.record(id, request.decision, request.note)?;
        Ok::<_, Error>((recorded, ledger.ledger().get(id).cloned()))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({ "id": id, "recorded": recorded, "entry": entry })))
}

async fn get_metrics(
    State(s): State<Shared>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let applied = match q.get("ledger").map(String::as_str) {
        None | Some("none") => false,
        Some("applied") => true,
        Some(other) => return Err(ApiError::bad_request(format!("ledger must be none or applied, not `{other}`"))),
    };
    let (metrics, changed) = s.metrics(applied)?;
    Ok(Json(json!({
        "seed": s.seed(),
        "ledger": if applied { "applied" } else { "none" },
        "changed": changed,
        "metrics": metrics,
    })))
}

pub fn router(session: Arc<ApiSession>) -> Router {
    Router::new()
        .route("/api/report", get(get_report))
        .route("/api/explanations", get(list_explanations))
        .route("/api/explanations/{id}", get(get_explanation))
        .route("/api/whatif", post(what_if))
        .route("/api/decisions/{id}", get(get_decision).post(post_decision))
        .route("/api/metrics", get(get_metrics))
        .with_state(session)
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(session: Arc<ApiSession>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("listen address {addr}"), e))?;
    log::info!("serving review API on http://{}", listener.local_addr().map_err(|e| Error::io("socket", e))?);
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io("http server", e))
}
