//! Append-only store of activated obligations, one JSON record per line.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Attribute;
use crate::reasoner::ActivatedObligation;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("obligation store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("obligation store line {line}: {source}")]
    Record {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredActivation {
    pub graph: String,
    pub process: String,
    pub action: String,
    pub args: Vec<Attribute>,
    pub validity: Vec<Attribute>,
    pub stage: Option<String>,
    pub violation: bool,
    pub recorded_at: String,
}

impl StoredActivation {
    pub fn from_activation(graph: &str, a: &ActivatedObligation, recorded_at: &str) -> Self {
        StoredActivation {
            graph: graph.to_string(),
            process: a.triggering_process.clone(),
            action: a.action_class.clone(),
            args: a.args.clone(),
            validity: a.validity.iter().cloned().collect(),
            stage: a.context.stage.clone(),
            violation: a.violation,
            recorded_at: recorded_at.to_string(),
        }
    }

    /// Structural identity: the obligation and how it fired, not where or when.
    pub fn dedup_key(&self) -> (&str, &[Attribute], &[Attribute], Option<&str>, bool) {
        (
            &self.action,
            &self.args,
            &self.validity,
            self.stage.as_deref(),
            self.violation,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreFilter {
    pub process: Option<String>,
    pub action_class: Option<String>,
    pub violations_only: bool,
    pub dedup: bool,
}

impl StoreFilter {
    fn keeps(&self, r: &StoredActivation) -> bool {
        self.process.as_ref().is_none_or(|p| p == &r.process)
            && self.action_class.as_ref().is_none_or(|a| a == &r.action)
            && (!self.violations_only || r.violation)
    }
}

/// Applies `filter` to records, keeping the first of each structural duplicate.
pub fn filter_records(records: Vec<StoredActivation>, filter: &StoreFilter) -> Vec<StoredActivation> {
    let kept = records.into_iter().filter(|r| filter.keeps(r));
    if !filter.dedup {
        return kept.collect();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in kept {
        let key = (
            r.action.clone(),
            r.args.clone(),
            r.validity.clone(),
            r.stage.clone(),
            r.violation,
        );
        if seen.insert(key) {
            out.push(r);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObligationStore {
    path: PathBuf,
}

impl ObligationStore {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        ObligationStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends all activations under an exclusive lock, stamped with the current time.
    pub fn record(&self, graph: &str, activations: &[ActivatedObligation]) -> Result<usize, StoreError> {
        let now = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        let records: Vec<StoredActivation> = activations
            .iter()
            .map(|a| StoredActivation::from_activation(graph, a, &now))
            .collect();
        self.append(&records)?;
        Ok(records.len())
    }

    pub fn append(&self, records: &[StoredActivation]) -> Result<(), StoreError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        file.lock()?;
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("records always serialize"));
            buf.push('\n');
        }
        file.write_all(buf.as_bytes())?;
        file.sync_all()?;
        file.unlock()?;
        Ok(())
    }

    /// All records in insertion order. A missing file is an empty store.
    pub fn list_all(&self) -> Result<Vec<StoredActivation>, StoreError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        file.lock_shared()?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line)
                .map_err(|source| StoreError::Record { line: i + 1, source })?;
            records.push(record);
        }
        file.unlock()?;
        Ok(records)
    }

    pub fn list(&self, filter: &StoreFilter) -> Result<Vec<StoredActivation>, StoreError> {
        Ok(filter_records(self.list_all()?, filter))
    }
}
