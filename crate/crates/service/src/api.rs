//! Request and response bodies of the annotation HTTP API.

use probunk_core::corpus::{Sentence, Split};
use probunk_core::unknown::{AnnotationRecord, SpanError, SpanInput};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Unlabeled,
    Labeled,
    Unclear,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Unlabeled => "unlabeled",
            Status::Labeled => "labeled",
            Status::Unclear => "unclear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub id: String,
    pub split: Split,
    pub status: Status,
    pub revision: u64,
    pub sentence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemPage {
    /// Problems matching the filter, before paging.
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<ProblemSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDetail {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
    pub status: Status,
    pub annotation: Option<AnnotationRecord>,
    /// 0 until the first annotation is saved.
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutAnnotation {
    #[serde(default)]
    pub spans: Vec<SpanInput>,
    #[serde(default)]
    pub unclear: bool,
    /// The revision the edit is based on.
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutResponse {
    pub revision: u64,
    pub annotation: AnnotationRecord,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub unclear: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<SpanError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_revision: Option<u64>,
}

pub use crate::store::ImportSummary;
