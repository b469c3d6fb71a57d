//! In-memory session state. Every mutation goes through the store first.

use std::collections::HashMap;
use std::ops::Range;

use chrono::Utc;
use nelaudit_core::api::{Progress, ServerEvent, SessionSummary, SubmitJudgment, SubmitResponse, TriplePayload};
use nelaudit_core::{
    recompute_on_cluster_complete, Batch, EstimateReport, EstimatorConfig, Judgment, JudgmentLog, JudgmentsFile,
};
use tokio::sync::broadcast;

use crate::error::ServiceError;
use crate::store::{SessionMeta, Store, StoredSession};

/// Longest accepted per-triple annotation time.
pub const MAX_ELAPSED_SECONDS: f64 = 24.0 * 3600.0;

pub struct Session {
    meta: SessionMeta,
    batch: Batch,
    /// Triple id to batch position.
    positions: HashMap<String, usize>,
    /// Batch position to unit index.
    unit_of: Vec<usize>,
    unit_ranges: Vec<Range<usize>>,
    log: JudgmentLog,
    config: EstimatorConfig,
    report: EstimateReport,
    events: broadcast::Sender<ServerEvent>,
}

impl Session {
    pub fn from_stored(stored: StoredSession) -> Result<Self, ServiceError> {
        let StoredSession { meta, batch, log } = stored;
        let config = batch
            .estimator_config()
            .map_err(|e| ServiceError::Parse(format!("batch header: {e}")))?;
        let positions = batch
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.record.triple_id.clone(), i))
            .collect();
        let unit_ranges: Vec<Range<usize>> = batch.units().into_iter().map(|u| u.range).collect();
        let mut unit_of = vec![0; batch.len()];
        for (u, range) in unit_ranges.iter().enumerate() {
            unit_of[range.clone()].fill(u);
        }
        let report = recompute_on_cluster_complete(&log, &batch, &config);
        let (events, _) = broadcast::channel(64);
        Ok(Self {
            meta,
            batch,
            positions,
            unit_of,
            unit_ranges,
            log,
            config,
            report,
            events,
        })
    }

    pub fn id(&self) -> &str {
        &self.meta.session_id
    }

    pub fn report(&self) -> &EstimateReport {
        &self.report
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.events.subscribe()
    }

    pub fn progress(&self) -> Progress {
        Progress {
            judged: self.log.n_distinct(),
            total: self.batch.len(),
            cursor: self.meta.cursor,
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.meta.session_id.clone(),
            corpus_hash: self.meta.corpus_hash.clone(),
            n_units: self.unit_ranges.len(),
            progress: self.progress(),
            converged: self.report.converged,
            created_at: self.meta.created_at,
            last_saved_at: self.meta.last_saved_at,
        }
    }

    pub fn triple(&self, index: usize) -> Result<TriplePayload, ServiceError> {
        let entry = self.batch.entries.get(index).ok_or(ServiceError::IndexOutOfRange {
            index,
            len: self.batch.len(),
        })?;
        let judgment = self
            .log
            .entries()
            .iter()
            .rev()
            .find(|j| j.triple_id == entry.record.triple_id)
            .cloned();
        Ok(TriplePayload {
            index,
            progress: self.progress(),
            entry: entry.clone(),
            judgment,
        })
    }

    pub fn submit(&mut self, store: &Store, req: SubmitJudgment) -> Result<SubmitResponse, ServiceError> {
        let Some(&pos) = self.positions.get(&req.triple_id) else {
            return Err(ServiceError::UnknownTriple(vec![req.triple_id]));
        };
        if !(req.elapsed_seconds >= 0.0 && req.elapsed_seconds <= MAX_ELAPSED_SECONDS) {
            return Err(ServiceError::InvalidJudgment(format!(
                "elapsed_seconds must be within [0, {MAX_ELAPSED_SECONDS}], got {}",
                req.elapsed_seconds
            )));
        }
        let judgment = Judgment {
            triple_id: req.triple_id,
            verdict: req.verdict,
            elapsed_seconds: req.elapsed_seconds,
            annotator_id: req.annotator_id,
            submitted_at: Utc::now(),
        };
        store.append(self.id(), std::slice::from_ref(&judgment))?;
        self.log.push(judgment);
        self.meta.cursor = (pos + 1).min(self.batch.len());
        self.save_meta(store)?;

        let was_converged = self.report.converged;
        self.refresh();
        let effective = self.log.effective();
        let cluster_complete = self.unit_ranges[self.unit_of[pos]]
            .clone()
            .all(|i| effective.contains_key(self.batch.entries[i].record.triple_id.as_str()));
        Ok(SubmitResponse {
            progress: self.progress(),
            cluster_complete,
            converged: self.report.converged,
            converged_changed: self.report.converged != was_converged,
            estimate: self.report.clone(),
        })
    }

    /// Merges another export into this session.
    pub fn import(&mut self, store: &Store, file: &JudgmentsFile) -> Result<usize, ServiceError> {
        check_import(&self.meta.corpus_hash, &self.batch, file)?;
        let mut merged = self.log.clone();
        let added = merged.merge(&file.judgments);
        store.append(self.id(), &merged.entries()[self.log.len()..])?;
        self.log = merged;
        self.save_meta(store)?;
        self.refresh();
        Ok(added)
    }

    pub fn export(&self) -> JudgmentsFile {
        JudgmentsFile {
            session_id: self.meta.session_id.clone(),
            corpus_hash: self.meta.corpus_hash.clone(),
            judgments: self.log.entries().to_vec(),
        }
    }

    fn save_meta(&mut self, store: &Store) -> Result<(), ServiceError> {
        let mut meta = self.meta.clone();
        meta.last_saved_at = Utc::now();
        store.save_meta(&meta)?;
        self.meta = meta;
        Ok(())
    }

    /// Recomputes the estimate and notifies subscribers if it moved.
    fn refresh(&mut self) {
        let report = recompute_on_cluster_complete(&self.log, &self.batch, &self.config);
        if report != self.report {
            self.report = report;
            // No subscribers is fine.
            let _ = self.events.send(ServerEvent::Estimate {
                report: self.report.clone(),
            });
        }
    }
}

/// Validates an export against a session's corpus and batch.
pub fn check_import(corpus_hash: &str, batch: &Batch, file: &JudgmentsFile) -> Result<(), ServiceError> {
    if file.corpus_hash != corpus_hash {
        return Err(ServiceError::HashMismatch {
            found: file.corpus_hash.clone(),
            expected: corpus_hash.to_string(),
        });
    }
    let unknown = file.unknown_triples(batch);
    if !unknown.is_empty() {
        return Err(ServiceError::UnknownTriple(unknown));
    }
    if let Some(j) = file
        .judgments
        .iter()
        .find(|j| !(j.elapsed_seconds >= 0.0 && j.elapsed_seconds <= MAX_ELAPSED_SECONDS))
    {
        return Err(ServiceError::InvalidJudgment(format!(
            "judgment for {} has elapsed_seconds {}",
            j.triple_id, j.elapsed_seconds
        )));
    }
    Ok(())
}
