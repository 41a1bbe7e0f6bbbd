//! Post-processing relabels gated by expert decisions.
//!
//! A [`RelabelProposal`] is the majority vote of the query's nearest training
//! rows. Proposals change nothing on their own: only entries an expert marks
//! `accepted` in the [`DecisionLedger`] are substituted by [`apply_ledger`].
//! The ledger keeps every event and derives the current decision per query
//! from the latest one.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::{Distance, IndexKind, NeighborIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteScope {
    /// Vote over the nearest training rows of either label.
    #[default]
    AllLabels,
    /// Vote over positively labeled rows only (always proposes positive).
    PositivesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteTally {
    pub positive: usize,
    pub negative: usize,
}

impl VoteTally {
    /// Strict majority, or `current` on a tie.
    pub fn decide(&self, current: bool) -> bool {
        match self.positive.cmp(&self.negative) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => current,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelProposal {
    pub query_index: usize,
    pub current_prediction: bool,
    pub proposed_prediction: bool,
    pub vote_tally: VoteTally,
    pub source_k: usize,
}

impl RelabelProposal {
    pub fn flips(&self) -> bool {
        self.current_prediction != self.proposed_prediction
    }
}

/// Neighbor index over the voting rows of one training split.
#[derive(Debug, Clone)]
pub struct Proposer {
    index: NeighborIndex,
    labels: Vec<bool>,
    k: usize,
    distance: Distance,
}

impl Proposer {
    /// `labels` is indexed by matrix row; only `train_rows` take part.
    pub fn new(
        matrix: ArrayView2<'_, f64>,
        labels: &[bool],
        train_rows: &[usize],
        k: usize,
        distance: Distance,
        scope: VoteScope,
        kind: IndexKind,
    ) -> Result<Self> {
        if labels.len() != matrix.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} rows",
                labels.len(),
                matrix.nrows()
            )));
        }
        let voters: Vec<usize> = match scope {
            VoteScope::AllLabels => train_rows.to_vec(),
            VoteScope::PositivesOnly => train_rows.iter().copied().filter(|&i| labels[i]).collect(),
        };
        if k == 0 || k > voters.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must lie in 1..={} (voting rows)",
                voters.len()
            )));
        }
        let index = NeighborIndex::build(kind, matrix, &voters, &distance)?;
        Ok(Proposer {
            index,
            labels: labels.to_vec(),
            k,
            distance,
        })
    }

    pub fn propose(&self, query_index: usize, row: &[f64], current: bool) -> Result<RelabelProposal> {
        let found = self.index.query(row, self.k, &self.distance, None)?;
        let positive = found.iter().filter(|n| self.labels[n.index]).count();
        let vote_tally = VoteTally {
            positive,
            negative: found.len() - positive,
        };
        Ok(RelabelProposal {
            query_index,
            current_prediction: current,
            proposed_prediction: vote_tally.decide(current),
            vote_tally,
            source_k: self.k,
        })
    }
}

/// Training rows of a matrix together with the labels of every matrix row.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub matrix: ArrayView2<'a, f64>,
    pub labels: &'a [bool],
    pub rows: &'a [usize],
}

/// One-off proposal by exhaustive scan over the training rows.
pub fn propose_relabel(
    query_index: usize,
    row: &[f64],
    current: bool,
    train: TrainSet<'_>,
    k: usize,
    distance: &Distance,
) -> Result<RelabelProposal> {
    Proposer::new(
        train.matrix,
        train.labels,
        train.rows,
        k,
        distance.clone(),
        VoteScope::AllLabels,
        IndexKind::Brute,
    )?
    .propose(query_index, row, current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub query_index: usize,
    pub decision: Decision,
    /// RFC 3339 timestamp.
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub decision: Decision,
    pub decided_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Append-only decision history with the current decision per query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "LedgerFile", into = "LedgerFile")]
pub struct DecisionLedger {
    events: Vec<LedgerEvent>,
    entries: BTreeMap<usize, LedgerEntry>,
}

#[derive(Serialize, Deserialize)]
struct LedgerFile {
    events: Vec<LedgerEvent>,
}

impl From<LedgerFile> for DecisionLedger {
    fn from(file: LedgerFile) -> Self {
        DecisionLedger::from_events(file.events)
    }
}

impl From<DecisionLedger> for LedgerFile {
    fn from(ledger: DecisionLedger) -> Self {
        LedgerFile { events: ledger.events }
    }
}

impl DecisionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<LedgerEvent>) -> Self {
        let mut ledger = DecisionLedger::new();
        for e in events {
            ledger.push(e);
        }
        ledger
    }

    fn push(&mut self, event: LedgerEvent) {
        self.entries.insert(
            event.query_index,
            LedgerEntry {
                decision: event.decision,
                decided_at: event.timestamp.clone(),
                note: event.note.clone(),
            },
        );
        self.events.push(event);
    }

    /// Records a decision; returns false when it repeats the current entry
    /// (same decision and note), in which case nothing is appended.
    pub fn record(&mut self, query_index: usize, decision: Decision, note: Option<String>, timestamp: &str) -> bool {
        if let Some(cur) = self.entries.get(&query_index) {
            if cur.decision == decision && cur.note == note {
                return false;
            }
        }
        self.push(LedgerEvent {
            query_index,
            decision,
            timestamp: timestamp.to_string(),
            note,
        });
        true
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn entries(&self) -> &BTreeMap<usize, LedgerEntry> {
        &self.entries
    }

    pub fn get(&self, query_index: usize) -> Option<&LedgerEntry> {
        self.entries.get(&query_index)
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn accepted(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .filter(|(_, e)| e.decision == Decision::Accepted)
            .map(|(&i, _)| i)
    }
}

/// A ledger bound to a file; every accepted mutation is on disk before
/// [`LedgerStore::record`] returns.
#[derive(Debug)]
pub struct LedgerStore {
    path: PathBuf,
    ledger: DecisionLedger,
}

impl LedgerStore {
    /// Opens `path`, starting empty when the file does not exist.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let ledger = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => DecisionLedger::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(LedgerStore { path, ledger })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn ledger(&self) -> &DecisionLedger {
        &self.ledger
    }

    pub fn record(&mut self, query_index: usize, decision: Decision, note: Option<String>) -> Result<bool> {
        let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let mut next = self.ledger.clone();
        if !next.record(query_index, decision, note, &now) {
            return Ok(false);
        }
        write_durably(&self.path, &serde_json::to_vec_pretty(&next)?)?;
        self.ledger = next;
        Ok(true)
    }
}

/// Writes via a synced temporary file renamed over `path`.
pub(crate) fn write_durably(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ledger".into());
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedLedger {
    pub predictions: Vec<bool>,
    pub changed: usize,
}

/// Substitutes the proposed value at every accepted index.
///
/// `predictions` is indexed by position; proposals and ledger entries refer
/// to positions through `query_index`.
pub fn apply_ledger(
    predictions: &[bool],
    proposals: &[RelabelProposal],
    ledger: &DecisionLedger,
) -> Result<AppliedLedger> {
    let ids: Vec<usize> = (0..predictions.len()).collect();
    apply_ledger_indexed(&ids, predictions, proposals, ledger)
}

/// [`apply_ledger`] where position `i` holds the prediction for query `ids[i]`.
pub fn apply_ledger_indexed(
    ids: &[usize],
    predictions: &[bool],
    proposals: &[RelabelProposal],
    ledger: &DecisionLedger,
) -> Result<AppliedLedger> {
    if ids.len() != predictions.len() {
        return Err(Error::InvalidInput(format!(
            "{} ids for {} predictions",
            ids.len(),
            predictions.len()
        )));
    }
    let position: HashMap<usize, usize> = ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let by_index: HashMap<usize, &RelabelProposal> =
        proposals.iter().map(|p| (p.query_index, p)).collect();
    let mut out = predictions.to_vec();
    for idx in ledger.accepted() {
        let proposal = by_index
            .get(&idx)
            .ok_or_else(|| Error::LedgerConsistency(format!("accepted entry {idx} has no proposal")))?;
        let pos = *position
            .get(&idx)
            .ok_or_else(|| Error::LedgerConsistency(format!("accepted entry {idx} is not a scored instance")))?;
        out[pos] = proposal.proposed_prediction;
    }
    let changed = out.iter().zip(predictions).filter(|(a, b)| a != b).count();
    Ok(AppliedLedger { predictions: out, changed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn proposal(i: usize, cur: bool, new: bool) -> RelabelProposal {
        RelabelProposal {
            query_index: i,
            current_prediction: cur,
            proposed_prediction: new,
            vote_tally: VoteTally::default(),
            source_k: 5,
        }
    }

    #[test]
    fn tally_rules() {
        assert!(VoteTally { positive: 3, negative: 2 }.decide(false));
        assert!(!VoteTally { positive: 2, negative: 2 }.decide(false));
        assert!(VoteTally { positive: 2, negative: 2 }.decide(true));
    }

    #[test]
    fn vote_over_line() {
        // rows at 0..6 on a line; labels 1,1,1,0,0,1
        let m = Array2::from_shape_vec((6, 1), (0..6).map(f64::from).collect()).unwrap();
        let labels = [true, true, true, false, false, true];
        let rows: Vec<usize> = (0..6).collect();
        let train = TrainSet { matrix: m.view(), labels: &labels, rows: &rows };
        let p = propose_relabel(9, &[0.0], false, train, 5, &Distance::Euclidean).unwrap();
        assert_eq!(p.vote_tally, VoteTally { positive: 3, negative: 2 });
        assert!(p.proposed_prediction && p.flips());
        let p = propose_relabel(9, &[0.0], false, train, 4, &Distance::Euclidean).unwrap();
        assert!(p.proposed_prediction);
        assert!(matches!(
            propose_relabel(0, &[0.0], false, train, 7, &Distance::Euclidean),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn positives_only_always_positive() {
        let m = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let labels = [false, false, true, true];
        let p = Proposer::new(m.view(), &labels, &[0, 1, 2, 3], 2, Distance::Euclidean, VoteScope::PositivesOnly, IndexKind::Brute)
            .unwrap()
            .propose(0, &[0.0], false)
            .unwrap();
        assert_eq!(p.vote_tally, VoteTally { positive: 2, negative: 0 });
    }

    #[test]
    fn ledger_overwrite_keeps_history() {
        let mut l = DecisionLedger::new();
        assert!(l.record(3, Decision::Accepted, None, "t0"));
        assert!(!l.record(3, Decision::Accepted, None, "t1"));
        assert!(l.record(3, Decision::Rejected, Some("no".into()), "t2"));
        assert_eq!(l.events().len(), 2);
        assert_eq!(l.get(3).unwrap().decision, Decision::Rejected);
        let json = serde_json::to_string(&l).unwrap();
        let back: DecisionLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn apply_rules() {
        let preds = vec![false; 10];
        let proposals: Vec<_> = (0..10).map(|i| proposal(i, false, i % 2 == 0)).collect();
        let out = apply_ledger(&preds, &proposals, &DecisionLedger::new()).unwrap();
        assert_eq!(out.predictions, preds);
        assert_eq!(out.changed, 0);

        let mut l = DecisionLedger::new();
        for i in [0, 2, 4] {
            l.record(i, Decision::Accepted, None, "t");
        }
        l.record(6, Decision::Rejected, None, "t");
        l.record(8, Decision::Pending, None, "t");
        let out = apply_ledger(&preds, &proposals, &l).unwrap();
        assert_eq!(out.changed, 3);

        l.record(11, Decision::Accepted, None, "t");
        assert!(matches!(apply_ledger(&preds, &proposals, &l), Err(Error::LedgerConsistency(_))));
    }

    #[test]
    fn noop_acceptance() {
        let preds = vec![true, false, true];
        let proposals: Vec<_> = (0..3).map(|i| proposal(i, preds[i], preds[i])).collect();
        let mut l = DecisionLedger::new();
        for i in 0..3 {
            l.record(i, Decision::Accepted, None, "t");
        }
        let out = apply_ledger(&preds, &proposals, &l).unwrap();
        assert_eq!((out.predictions, out.changed), (preds, 0));
    }

    #[test]
    fn store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        let mut s = LedgerStore::open(&path).unwrap();
        assert!(s.record(5, Decision::Accepted, Some("ok".into())).unwrap());
        assert!(!s.record(5, Decision::Accepted, Some("ok".into())).unwrap());
        let s2 = LedgerStore::open(&path).unwrap();
        assert_eq!(s2.ledger().get(5).unwrap().decision, Decision::Accepted);
        assert_eq!(s2.ledger().events().len(), 1);
    }
}
