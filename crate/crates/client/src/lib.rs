//! Thin async client for the annotation service.

use nelaudit_core::api::{ErrorBody, ImportResponse, SessionSummary, SubmitJudgment, SubmitResponse, TriplePayload};
use nelaudit_core::{EstimateReport, JudgmentsFile};
use reqwest::multipart::{Form, Part};
use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    /// The service answered with an error body.
    #[error("{error_code} ({status}): {message}")]
    Api {
        status: StatusCode,
        error_code: String,
        message: String,
    },
}

impl ClientError {
    pub fn error_code(&self) -> Option<&str> {
        match self {
            Self::Api { error_code, .. } => Some(error_code),
            Self::Http(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` such as `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_http(base_url, reqwest::Client::new())
    }

    pub fn with_http(base_url: impl Into<String>, http: reqwest::Client) -> Self {
        let base = base_url.into().trim_end_matches('/').to_string();
        Self { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Uploads a batch file's text and starts a session.
    pub async fn create_session(&self, batch_jsonl: String) -> Result<SessionSummary, ClientError> {
        self.create_session_with(batch_jsonl, None).await
    }

    /// Like [`Client::create_session`], seeding the session with an export.
    pub async fn create_session_with(
        &self,
        batch_jsonl: String,
        judgments_json: Option<String>,
    ) -> Result<SessionSummary, ClientError> {
        let mut form = Form::new().part("batch", Part::text(batch_jsonl).file_name("batch.jsonl"));
        if let Some(j) = judgments_json {
            form = form.part("judgments", Part::text(j).file_name("judgments.json"));
        }
        send(self.http.post(self.url("/sessions")).multipart(form)).await
    }

    pub async fn list_sessions(&self) -> Result<Vec<SessionSummary>, ClientError> {
        send(self.http.get(self.url("/sessions"))).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionSummary, ClientError> {
        send(self.http.get(self.url(&format!("/sessions/{id}")))).await
    }

    pub async fn triple(&self, id: &str, index: usize) -> Result<TriplePayload, ClientError> {
        send(self.http.get(self.url(&format!("/sessions/{id}/triples/{index}")))).await
    }

    pub async fn submit(&self, id: &str, judgment: &SubmitJudgment) -> Result<SubmitResponse, ClientError> {
        send(
            self.http
                .post(self.url(&format!("/sessions/{id}/judgments")))
                .json(judgment),
        )
        .await
    }

    pub async fn estimate(&self, id: &str) -> Result<EstimateReport, ClientError> {
        send(self.http.get(self.url(&format!("/sessions/{id}/estimate")))).await
    }

    /// The estimate as the exact bytes the service sent.
    pub async fn estimate_raw(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        let resp = check(
            self.http
                .get(self.url(&format!("/sessions/{id}/estimate")))
                .send()
                .await?,
        )
        .await?;
        Ok(resp.bytes().await?.to_vec())
    }

    pub async fn export(&self, id: &str) -> Result<JudgmentsFile, ClientError> {
        send(self.http.get(self.url(&format!("/sessions/{id}/export")))).await
    }

    pub async fn import(&self, id: &str, file: &JudgmentsFile) -> Result<ImportResponse, ClientError> {
        send(self.http.post(self.url(&format!("/sessions/{id}/import"))).json(file)).await
    }
}

async fn check(resp: reqwest::Response) -> Result<reqwest::Response, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await?;
    let (error_code, message) = match serde_json::from_str::<ErrorBody>(&text).ok() {
        Some(b) => (b.error_code, b.message),
        None => ("HttpError".to_string(), text),
    };
    Err(ClientError::Api {
        status,
        error_code,
        message,
    })
}

async fn send<T: DeserializeOwned>(req: RequestBuilder) -> Result<T, ClientError> {
    Ok(check(req.send().await?).await?.json().await?)
}
