//! Re-annotation workflow: revisions against an original dataset, validator
//! votes, agreement statistics and majority-vote merging, persisted as an
//! append-only JSON-lines event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance, Scheme};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub annotator_id: String,
    pub label: i8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRevision {
    pub record_id: String,
    pub original_label: i8,
    pub revised_label: i8,
    pub validator_votes: Vec<Vote>,
    pub final_label: Option<i8>,
}

impl AnnotationRevision {
    pub fn new(record_id: impl Into<String>, original_label: i8, revised_label: i8) -> Self {
        Self {
            record_id: record_id.into(),
            original_label,
            revised_label,
            validator_votes: Vec::new(),
            final_label: None,
        }
    }

    /// Identifier written into merged provenance.
    pub fn revision_id(&self) -> String {
        format!("rev:{}", self.record_id)
    }

    pub fn has_voted(&self, annotator_id: &str) -> bool {
        self.validator_votes.iter().any(|v| v.annotator_id == annotator_id)
    }

    pub fn add_vote(&mut self, annotator_id: &str, label: i8) -> Result<()> {
        if self.has_voted(annotator_id) {
            return Err(Error::DuplicateVote {
                annotator: annotator_id.to_string(),
                record_id: self.record_id.clone(),
            });
        }
        self.validator_votes.push(Vote {
            annotator_id: annotator_id.to_string(),
            label,
        });
        Ok(())
    }

    pub fn vote_labels(&self) -> Vec<i8> {
        self.validator_votes.iter().map(|v| v.label).collect()
    }
}

/// What a revision without validator votes resolves to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnvotedPolicy {
    #[default]
    KeepRevision,
    KeepOriginal,
}

/// Sets `final_label` on every revision: the majority of its votes, or the
/// policy's label when nobody voted.
pub fn resolve(revisions: &mut [AnnotationRevision], policy: UnvotedPolicy) {
    for r in revisions {
        r.final_label = Some(if r.validator_votes.is_empty() {
            match policy {
                UnvotedPolicy::KeepRevision => r.revised_label,
                UnvotedPolicy::KeepOriginal => r.original_label,
            }
        } else {
            majority_vote(&r.vote_labels(), r.original_label)
        });
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDiff {
    /// Ids whose labels differ, sorted.
    pub changed: Vec<String>,
    pub total: usize,
}

impl AnnotationDiff {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.changed.len() as f64 / self.total as f64
        }
    }

    /// `402/1639 (24.53%)`.
    pub fn summary(&self) -> String {
        format!("{}/{} ({:.2}%)", self.changed.len(), self.total, 100.0 * self.fraction())
    }
}

pub fn diff_annotations(original: &Dataset, revised: &Dataset) -> Result<AnnotationDiff> {
    let a: BTreeMap<&str, i8> = original.records.iter().map(|r| (r.id.as_str(), r.label.value)).collect();
    let b: BTreeMap<&str, i8> = revised.records.iter().map(|r| (r.id.as_str(), r.label.value)).collect();
    if let Some(id) = a.keys().find(|k| !b.contains_key(*k)).or_else(|| b.keys().find(|k| !a.contains_key(*k))) {
        return Err(Error::UnknownRecord(format!("{id} is present in only one of the datasets")));
    }
    let changed = a
        .iter()
        .filter(|(id, label)| b[*id] != **label)
        .map(|(id, _)| id.to_string())
        .collect();
    Ok(AnnotationDiff { changed, total: a.len() })
}

/// `n` ids drawn uniformly without replacement, returned sorted.
pub fn sample_disagreements(ids: &[String], n: usize, seed: u64) -> Result<Vec<String>> {
    if n > ids.len() {
        return Err(Error::InvalidArgument(format!("cannot sample {n} of {} disagreements", ids.len())));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = sample(&mut rng, sorted.len(), n).into_iter().map(|i| sorted[i].clone()).collect();
    picked.sort();
    Ok(picked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    /// Revisions with at least one vote.
    pub sample_size: usize,
    pub total_votes: usize,
    /// Votes equal to the revised label.
    pub agreeing: usize,
    pub rate: f64,
    /// Items whose votes all equal the revised label.
    pub unanimous: usize,
    pub unanimity_rate: f64,
}

/// Vote-level agreement with the revised labels over the revisions that
/// received votes.
pub fn agreement_rate(revisions: &[AnnotationRevision]) -> Result<AgreementStats> {
    let scope: Vec<&AnnotationRevision> = revisions.iter().filter(|r| !r.validator_votes.is_empty()).collect();
    if scope.is_empty() {
        return Err(Error::InvalidArgument("no revision has any validator vote".into()));
    }
    let mut total_votes = 0;
    let mut agreeing = 0;
    let mut unanimous = 0;
    for r in &scope {
        let matching = r.validator_votes.iter().filter(|v| v.label == r.revised_label).count();
        total_votes += r.validator_votes.len();
        agreeing += matching;
        if matching == r.validator_votes.len() {
            unanimous += 1;
        }
    }
    Ok(AgreementStats {
        sample_size: scope.len(),
        total_votes,
        agreeing,
        rate: agreeing as f64 / total_votes as f64,
        unanimous,
        unanimity_rate: unanimous as f64 / scope.len() as f64,
    })
}

/// The label with strictly more votes than any other; ties (and an empty
/// ballot) keep `original`.
pub fn majority_vote(votes: &[i8], original: i8) -> i8 {
    let mut counts: BTreeMap<i8, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_insert(0) += 1;
    }
    let Some(best) = counts.values().copied().max() else {
        return original;
    };
    let mut leaders = counts.iter().filter(|(_, &n)| n == best);
    match (leaders.next(), leaders.next()) {
        (Some((&label, _)), None) => label,
        _ => original,
    }
}

/// Applies resolved revisions. Records without a revision are untouched;
/// provenance keeps the first revision applied to each record, so merging
/// twice equals merging once.
pub fn merge_relabel(dataset: &Dataset, revisions: &[AnnotationRevision]) -> Result<Dataset> {
    let mut out = dataset.clone();
    let index: BTreeMap<String, usize> = out.records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
    for rev in revisions {
        let label = rev
            .final_label
            .ok_or_else(|| Error::UnresolvedRevision(rev.record_id.clone()))?;
        let &i = index
            .get(&rev.record_id)
            .ok_or_else(|| Error::UnknownRecord(rev.record_id.clone()))?;
        if !out.scheme.accepts(label) {
            return Err(Error::InvalidLabel {
                label,
                scheme: format!("{:?}", out.scheme),
            });
        }
        let record = &mut out.records[i];
        out.provenance.entry(rev.record_id.clone()).or_insert(Provenance {
            revision_id: rev.revision_id(),
            previous_label: record.label.value,
        });
        record.label.value = label;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Revise,
    Vote,
    Merge,
}

/// One line of the revision log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub record_id: String,
    pub annotator_id: String,
    pub action: Action,
    pub label: i8,
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Parses a log. A final line without its newline is an interrupted write
/// and is dropped; any other malformed line is corruption.
pub fn parse_events<R: Read>(reader: R) -> Result<Vec<Event>> {
    let mut reader = BufReader::new(reader);
    let mut events = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        number += 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        // only the last line can lack its newline; even if it parses, the
        // write never completed
        if !line.ends_with('\n') {
            log::warn!("dropping unterminated trailing log line {number}");
            break;
        }
        let event = serde_json::from_str::<Event>(text).map_err(|e| Error::CorruptLog {
            line: number,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Append-only JSON-lines file. Every append is flushed and synced before
/// it returns.
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (creating if needed) and reads the log, cutting off an
    /// interrupted trailing write so later appends start on a fresh line.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Event>)> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let events = parse_events(bytes.as_slice())?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if keep < bytes.len() {
            file.set_len(keep as u64)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok((Self { path, file }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Revisions folded from the event log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RevisionState {
    pub revisions: BTreeMap<String, AnnotationRevision>,
}

impl RevisionState {
    /// Applies one event. Votes repeated for the same annotator and record
    /// are ignored.
    pub fn apply(&mut self, e: &Event, originals: &BTreeMap<String, i8>) -> Result<()> {
        match e.action {
            Action::Revise => {
                let original = *originals
                    .get(&e.record_id)
                    .ok_or_else(|| Error::UnknownRecord(e.record_id.clone()))?;
                let rev = self
                    .revisions
                    .entry(e.record_id.clone())
                    .or_insert_with(|| AnnotationRevision::new(&e.record_id, original, e.label));
                rev.revised_label = e.label;
            }
            Action::Vote => {
                let rev = self
                    .revisions
                    .get_mut(&e.record_id)
                    .ok_or_else(|| Error::UnknownRecord(e.record_id.clone()))?;
                if !rev.has_voted(&e.annotator_id) {
                    rev.add_vote(&e.annotator_id, e.label)?;
                }
            }
            Action::Merge => {
                let rev = self
                    .revisions
                    .get_mut(&e.record_id)
                    .ok_or_else(|| Error::UnknownRecord(e.record_id.clone()))?;
                rev.final_label = Some(e.label);
            }
        }
        Ok(())
    }

    pub fn replay(events: &[Event], originals: &BTreeMap<String, i8>) -> Result<Self> {
        let mut state = Self::default();
        for e in events {
            state.apply(e, originals)?;
        }
        Ok(state)
    }

    pub fn list(&self) -> Vec<AnnotationRevision> {
        self.revisions.values().cloned().collect()
    }
}

/// The event log together with the state it folds to. All mutations
/// validate first, then append, then apply.
pub struct AnnotationStore {
    log: EventLog,
    state: RevisionState,
    originals: BTreeMap<String, i8>,
    scheme: Scheme,
}

impl AnnotationStore {
    pub fn open(path: impl AsRef<Path>, original: &Dataset) -> Result<Self> {
        let (log, events) = EventLog::open(path)?;
        let originals: BTreeMap<String, i8> = original.records.iter().map(|r| (r.id.clone(), r.label.value)).collect();
        let state = RevisionState::replay(&events, &originals)?;
        Ok(Self {
            log,
            state,
            originals,
            scheme: original.scheme,
        })
    }

    pub fn state(&self) -> &RevisionState {
        &self.state
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    fn check_label(&self, label: i8) -> Result<()> {
        if self.scheme.accepts(label) {
            Ok(())
        } else {
            Err(Error::InvalidLabel {
                label,
                scheme: format!("{:?}", self.scheme),
            })
        }
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        self.log.append(&event)?;
        self.state.apply(&event, &self.originals)
    }

    pub fn revise(&mut self, record_id: &str, annotator_id: &str, label: i8, ts: u64) -> Result<()> {
        self.check_label(label)?;
        if !self.originals.contains_key(record_id) {
            return Err(Error::UnknownRecord(record_id.to_string()));
        }
        self.commit(Event {
            ts,
            record_id: record_id.to_string(),
            annotator_id: annotator_id.to_string(),
            action: Action::Revise,
            label,
        })
    }

    /// Records a vote; a second vote by the same annotator is rejected and
    /// nothing is written.
    pub fn vote(&mut self, record_id: &str, annotator_id: &str, label: i8, ts: u64) -> Result<()> {
        self.check_label(label)?;
        let rev = self
            .state
            .revisions
            .get(record_id)
            .ok_or_else(|| Error::UnknownRecord(record_id.to_string()))?;
        if rev.has_voted(annotator_id) {
            return Err(Error::DuplicateVote {
                annotator: annotator_id.to_string(),
                record_id: record_id.to_string(),
            });
        }
        self.commit(Event {
            ts,
            record_id: record_id.to_string(),
            annotator_id: annotator_id.to_string(),
            action: Action::Vote,
            label,
        })
    }

    /// Resolves every revision and logs the final labels.
    pub fn merge(&mut self, policy: UnvotedPolicy, annotator_id: &str, ts: u64) -> Result<Vec<AnnotationRevision>> {
        let mut revs = self.state.list();
        resolve(&mut revs, policy);
        for r in &revs {
            self.commit(Event {
                ts,
                record_id: r.record_id.clone(),
                annotator_id: annotator_id.to_string(),
                action: Action::Merge,
                label: r.final_label.expect("resolved"),
            })?;
        }
        Ok(revs)
    }
}

/// Ids with no revision in `state` yet.
pub fn missing_revisions<'a>(state: &RevisionState, ids: &'a [String]) -> Vec<&'a String> {
    let have: BTreeSet<&String> = state.revisions.keys().collect();
    ids.iter().filter(|id| !have.contains(id)).collect()
}
