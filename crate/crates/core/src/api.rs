//! Request and response bodies exchanged with the annotation service.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::batch::BatchEntry;
use crate::estimation::{EstimateReport, Judgment, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// Distinct batch triples with a judgment.
    pub judged: usize,
    pub total: usize,
    /// Index of the next triple to present.
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub corpus_hash: String,
    pub n_units: usize,
    pub progress: Progress,
    pub converged: bool,
    pub created_at: DateTime<Utc>,
    pub last_saved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriplePayload {
    pub index: usize,
    pub progress: Progress,
    pub entry: BatchEntry,
    /// The triple's effective judgment, if any.
    pub judgment: Option<Judgment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitJudgment {
    pub triple_id: String,
    pub verdict: Verdict,
    /// Display-to-submit time measured by the client.
    pub elapsed_seconds: f64,
    #[serde(default = "default_annotator")]
    pub annotator_id: String,
}

fn default_annotator() -> String {
    "anonymous".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub progress: Progress,
    /// This judgment completed its unit, so the estimate moved.
    pub cluster_complete: bool,
    pub converged: bool,
    /// `converged` differs from its value before this judgment.
    pub converged_changed: bool,
    pub estimate: EstimateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportResponse {
    /// Judgments appended; exact duplicates are skipped.
    pub added: usize,
    pub progress: Progress,
    pub estimate: EstimateReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

/// Messages on a session's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerEvent {
    Estimate { report: EstimateReport },
}
