//! Async client for the annotation HTTP API.

use probunk_service::api::{
    ApiError, ImportSummary, ProblemDetail, ProblemPage, Progress, PutAnnotation, PutResponse, Status,
};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("not found: {}", .0.error)]
    NotFound(ApiError),
    #[error("conflict: {}", .0.error)]
    Conflict(ApiError),
    #[error("rejected: {}", .0.error)]
    Invalid(ApiError),
    #[error("server returned {status}: {body}")]
    Status { status: StatusCode, body: String },
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    /// Revision held by the server when a write conflicted.
    pub fn current_revision(&self) -> Option<u64> {
        match self {
            ClientError::Conflict(e) => e.current_revision,
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn list_problems(&self, status: Option<Status>, offset: usize, limit: usize) -> Result<ProblemPage> {
        let mut url = self.url(&format!("/api/problems?offset={offset}&limit={limit}"));
        if let Some(s) = status {
            url.push_str("&status=");
            url.push_str(s.as_str());
        }
        json(self.http.get(url).send().await?).await
    }

    pub async fn problem(&self, id: &str) -> Result<ProblemDetail> {
        json(self.http.get(self.url(&format!("/api/problems/{}", encode(id)))).send().await?).await
    }

    pub async fn put_annotation(&self, id: &str, body: &PutAnnotation) -> Result<PutResponse> {
        let url = self.url(&format!("/api/problems/{}/annotation", encode(id)));
        json(self.http.put(url).json(body).send().await?).await
    }

    /// The annotation JSONL export, byte for byte.
    pub async fn export(&self) -> Result<String> {
        let r = check(self.http.get(self.url("/api/export")).send().await?).await?;
        Ok(r.text().await?)
    }

    pub async fn import(&self, jsonl: &str) -> Result<ImportSummary> {
        json(self.http.post(self.url("/api/import")).body(jsonl.to_owned()).send().await?).await
    }

    pub async fn progress(&self) -> Result<Progress> {
        json(self.http.get(self.url("/api/progress")).send().await?).await
    }
}

fn encode(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

async fn check(r: Response) -> Result<Response> {
    let status = r.status();
    if status.is_success() {
        return Ok(r);
    }
    let body = r.text().await?;
    let api: Option<ApiError> = serde_json::from_str(&body).ok();
    Err(match (status, api) {
        (StatusCode::NOT_FOUND, Some(e)) => ClientError::NotFound(e),
        (StatusCode::CONFLICT, Some(e)) => ClientError::Conflict(e),
        (StatusCode::UNPROCESSABLE_ENTITY, Some(e)) => ClientError::Invalid(e),
        _ => ClientError::Status { status, body },
    })
}

async fn json<T: DeserializeOwned>(r: Response) -> Result<T> {
    Ok(check(r).await?.json().await?)
}
