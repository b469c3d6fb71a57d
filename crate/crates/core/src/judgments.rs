//! The judgments export/import document.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::estimation::{Judgment, JudgmentLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentsFile {
    pub session_id: String,
    pub corpus_hash: String,
    /// Full submission history, oldest first.
    pub judgments: Vec<Judgment>,
}

impl JudgmentsFile {
    pub fn log(&self) -> JudgmentLog {
        JudgmentLog::from_entries(self.judgments.clone())
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("judgments serialize")
    }

    /// Ids referenced by judgments that are not part of `batch`, sorted.
    pub fn unknown_triples(&self, batch: &Batch) -> Vec<String> {
        let known: BTreeSet<&str> = batch.entries.iter().map(|e| e.record.triple_id.as_str()).collect();
        self.judgments
            .iter()
            .filter(|j| !known.contains(j.triple_id.as_str()))
            .map(|j| j.triple_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}
