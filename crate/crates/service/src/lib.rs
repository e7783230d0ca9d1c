//! HTTP annotation service over a fixed corpus.
//!
//! Reads go straight to the immutable corpus. Writes go through one
//! mutex-guarded store, so the journal has a single writer.

pub mod api;
mod store;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use probunk_core::corpus::{Corpus, Problem};
use serde::Deserialize;
use tokio::net::TcpListener;

use api::{ApiError, ImportSummary, ProblemDetail, ProblemPage, ProblemSummary, Progress, PutAnnotation, PutResponse, Status};
pub use store::{AnnotationStore, Stored, StoreError};

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 1000;

pub struct AppState {
    corpus: Arc<Corpus>,
    store: Mutex<AnnotationStore>,
}

impl AppState {
    pub fn new(corpus: Arc<Corpus>, store: AnnotationStore) -> Arc<Self> {
        Arc::new(AppState {
            corpus,
            store: Mutex::new(store),
        })
    }

    fn store(&self) -> MutexGuard<'_, AnnotationStore> {
        // A panic mid-write leaves the in-memory map consistent with the
        // journal, so a poisoned lock is still usable.
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn problem(&self, id: &str) -> Result<&Problem, AppError> {
        self.corpus
            .problem(id)
            .ok_or_else(|| AppError(StoreError::NotFound(id.to_owned())))
    }
}

fn status_of(store: &AnnotationStore, id: &str) -> Status {
    match store.get(id) {
        None => Status::Unlabeled,
        Some(s) if s.record.unclear => Status::Unclear,
        Some(_) => Status::Labeled,
    }
}

struct AppError(StoreError);

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        AppError(e)
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let error = self.0.to_string();
        let (code, body) = match self.0 {
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, ApiError { error, spans: vec![], current_revision: None }),
            StoreError::Conflict { current, .. } => (
                StatusCode::CONFLICT,
                ApiError { error, spans: vec![], current_revision: Some(current) },
            ),
            StoreError::Invalid(spans) => (StatusCode::UNPROCESSABLE_ENTITY, ApiError { error, spans, current_revision: None }),
            StoreError::Rejected(_) | StoreError::Core(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, ApiError { error, spans: vec![], current_revision: None })
            }
            StoreError::Journal { .. } | StoreError::Io { .. } => {
                tracing::error!("{error}");
                (StatusCode::INTERNAL_SERVER_ERROR, ApiError { error, spans: vec![], current_revision: None })
            }
        };
        (code, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<Status>,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

async fn list_problems(State(state): State<Arc<AppState>>, Query(q): Query<ListQuery>) -> Json<ProblemPage> {
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT).min(MAX_LIMIT);
    let store = state.store();
    let matching: Vec<ProblemSummary> = state
        .corpus
        .problems()
        .iter()
        .map(|p| ProblemSummary {
            id: p.id.clone(),
            split: p.split,
            status: status_of(&store, &p.id),
            revision: store.revision(&p.id),
            sentence_count: p.sentence_count(),
        })
        .filter(|s| q.status.is_none_or(|want| s.status == want))
        .collect();
    Json(ProblemPage {
        total: matching.len(),
        offset: q.offset,
        limit,
        items: matching.into_iter().skip(q.offset).take(limit).collect(),
    })
}

async fn get_problem(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ProblemDetail>, AppError> {
    let p = state.problem(&id)?;
    let store = state.store();
    let stored = store.get(&id);
    Ok(Json(ProblemDetail {
        id: p.id.clone(),
        text: p.text.clone(),
        sentences: p.sentences.clone(),
        status: status_of(&store, &id),
        annotation: stored.map(|s| s.record.clone()),
        revision: stored.map_or(0, |s| s.revision),
    }))
}

async fn put_annotation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PutAnnotation>,
) -> Result<Json<PutResponse>, AppError> {
    let p = state.problem(&id)?;
    let stored = state.store().put(p, &body)?;
    tracing::info!(problem = %id, revision = stored.revision, "annotation saved");
    Ok(Json(PutResponse {
        revision: stored.revision,
        annotation: stored.record,
    }))
}

async fn export(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    let body = state.store().export();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body)
}

async fn import(State(state): State<Arc<AppState>>, body: String) -> Result<Json<ImportSummary>, AppError> {
    let summary = state.store().import(&state.corpus, &body)?;
    tracing::info!(imported = summary.imported, unchanged = summary.unchanged, "annotations imported");
    Ok(Json(summary))
}

async fn progress(State(state): State<Arc<AppState>>) -> Json<Progress> {
    let store = state.store();
    let mut out = Progress {
        total: state.corpus.len(),
        ..Progress::default()
    };
    for p in state.corpus.problems() {
        match status_of(&store, &p.id) {
            Status::Unlabeled => out.unlabeled += 1,
            Status::Labeled => out.labeled += 1,
            Status::Unclear => out.unclear += 1,
        }
    }
    Json(out)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/problems", get(list_problems))
        .route("/api/problems/{id}", get(get_problem))
        .route("/api/problems/{id}/annotation", put(put_annotation))
        .route("/api/export", get(export))
        .route("/api/import", post(import))
        .route("/api/progress", get(progress))
        .with_state(state)
}

/// Serves on an already bound listener until the future is dropped.
pub async fn serve_on(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
