//! HTTP/JSON annotation service.
//!
//! A session wraps one static batch. Annotators fetch triples by index,
//! submit verdicts, and watch the estimate converge. Judgments are flushed
//! to an append-only log before a submission is acknowledged, and sessions
//! are reloaded from the data directory on startup.

mod error;
mod session;
mod store;

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use futures::{Stream, StreamExt};
use nelaudit_core::api::{ImportResponse, ServerEvent, SessionSummary, SubmitJudgment, SubmitResponse, TriplePayload};
use nelaudit_core::{Batch, EstimateReport, JudgmentsFile};
use tokio::net::TcpListener;
use tokio::sync::{watch, Mutex, RwLock};
use tokio_stream::wrappers::BroadcastStream;

pub use error::ServiceError;
pub use session::MAX_ELAPSED_SECONDS;
use session::{check_import, Session};
use store::{SessionMeta, Store};

/// Batches with full abstracts run to tens of megabytes.
const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    corpus_hash: String,
    store: Store,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    /// Flips to true on shutdown so open event streams end.
    closing: watch::Sender<bool>,
}

impl AppState {
    /// Opens the data directory and loads every saved session.
    pub fn open(data_dir: impl Into<PathBuf>, corpus_hash: impl Into<String>) -> Result<Self, ServiceError> {
        let store = Store::open(data_dir)?;
        let mut sessions = HashMap::new();
        for stored in store.load_all()? {
            let session = Session::from_stored(stored)?;
            sessions.insert(session.id().to_string(), Arc::new(Mutex::new(session)));
        }
        tracing::info!(dir = %store.root().display(), sessions = sessions.len(), "loaded sessions");
        Ok(Self {
            inner: Arc::new(Inner {
                corpus_hash: corpus_hash.into(),
                store,
                sessions: RwLock::new(sessions),
                closing: watch::Sender::new(false),
            }),
        })
    }

    pub fn corpus_hash(&self) -> &str {
        &self.inner.corpus_hash
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Creates a session over `batch`, optionally seeded with earlier judgments.
    pub async fn create_session(
        &self,
        batch: Batch,
        judgments: Option<JudgmentsFile>,
    ) -> Result<SessionSummary, ServiceError> {
        if batch.header.corpus_hash != self.inner.corpus_hash {
            return Err(ServiceError::BatchMismatch {
                batch: batch.header.corpus_hash.clone(),
                loaded: self.inner.corpus_hash.clone(),
            });
        }
        if let Some(file) = &judgments {
            check_import(&self.inner.corpus_hash, &batch, file)?;
        }
        let now = Utc::now();
        let meta = SessionMeta {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            corpus_hash: self.inner.corpus_hash.clone(),
            cursor: 0,
            created_at: now,
            last_saved_at: now,
        };
        let store = &self.inner.store;
        store.create(&meta, &batch)?;
        let mut session = Session::from_stored(store::StoredSession {
            meta,
            batch,
            log: Default::default(),
        })?;
        if let Some(file) = &judgments {
            session.import(store, file)?;
        }
        let summary = session.summary();
        tracing::info!(session = %summary.session_id, triples = summary.progress.total, "created session");
        self.inner
            .sessions
            .write()
            .await
            .insert(summary.session_id.clone(), Arc::new(Mutex::new(session)));
        Ok(summary)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/triples/{index}", get(get_triple))
        .route("/sessions/{id}/judgments", post(submit_judgment))
        .route("/sessions/{id}/estimate", get(get_estimate))
        .route("/sessions/{id}/export", get(export_session))
        .route("/sessions/{id}/import", post(import_session))
        .route("/sessions/{id}/events", get(events))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes event streams and drains
/// in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let closing = state.inner.closing.clone();
    let signal = async move {
        shutdown.await;
        closing.send_replace(true);
    };
    axum::serve(listener, router(state))
        .with_graceful_shutdown(signal)
        .await
}

async fn create_session(State(state): State<AppState>, mut form: Multipart) -> Result<impl IntoResponse, ServiceError> {
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::Parse(format!("multipart: {e}"));
    let mut batch = None;
    let mut judgments = None;
    while let Some(field) = form.next_field().await.map_err(bad)? {
        match field.name() {
            Some("batch") => {
                let text = field.text().await.map_err(bad)?;
                batch = Some(Batch::parse(&text).map_err(|e| ServiceError::Parse(format!("batch: {e}")))?);
            }
            Some("judgments") => {
                let text = field.text().await.map_err(bad)?;
                judgments =
                    Some(JudgmentsFile::parse(&text).map_err(|e| ServiceError::Parse(format!("judgments: {e}")))?);
            }
            _ => {}
        }
    }
    let batch = batch.ok_or_else(|| ServiceError::Parse("missing multipart field \"batch\"".into()))?;
    let summary = state.create_session(batch, judgments).await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    let sessions: Vec<_> = state.inner.sessions.read().await.values().cloned().collect();
    let mut out = Vec::with_capacity(sessions.len());
    for s in sessions {
        out.push(s.lock().await.summary());
    }
    out.sort_by(|a, b| {
        a.created_at
            .cmp(&b.created_at)
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    Json(out)
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionSummary>, ServiceError> {
    Ok(Json(state.session(&id).await?.lock().await.summary()))
}

async fn get_triple(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
) -> Result<Json<TriplePayload>, ServiceError> {
    Ok(Json(state.session(&id).await?.lock().await.triple(index)?))
}

async fn submit_judgment(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SubmitJudgment>,
) -> Result<Json<SubmitResponse>, ServiceError> {
    let session = state.session(&id).await?;
    let mut session = session.lock().await;
    Ok(Json(session.submit(&state.inner.store, req)?))
}

async fn get_estimate(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<EstimateReport>, ServiceError> {
    Ok(Json(state.session(&id).await?.lock().await.report().clone()))
}

async fn export_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<JudgmentsFile>, ServiceError> {
    Ok(Json(state.session(&id).await?.lock().await.export()))
}

async fn import_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(file): Json<JudgmentsFile>,
) -> Result<Json<ImportResponse>, ServiceError> {
    let session = state.session(&id).await?;
    let mut session = session.lock().await;
    let added = session.import(&state.inner.store, &file)?;
    Ok(Json(ImportResponse {
        added,
        progress: session.progress(),
        estimate: session.report().clone(),
    }))
}

/// Sends the current estimate, then one message per change.
async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let session = state.session(&id).await?;
    let (current, rx) = {
        let s = session.lock().await;
        (s.report().clone(), s.subscribe())
    };
    let first = futures::stream::once(async move { ServerEvent::Estimate { report: current } });
    // A lagging subscriber skips to newer estimates.
    let updates = BroadcastStream::new(rx).filter_map(|msg| async move { msg.ok() });
    let mut closing = state.inner.closing.subscribe();
    let closed = async move {
        let _ = closing.wait_for(|&c| c).await;
    };
    let stream = first.chain(updates).take_until(closed).map(|ev| {
        let data = serde_json::to_string(&ev).expect("events serialize");
        Ok(Event::default().event("estimate").data(data))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
