use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_slice, Problem, CODE_PLACEHOLDER};
use crate::error::{Error, Result};

/// A span as submitted by an annotator, in character offsets into the
/// problem text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanInput {
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub sentence_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub problem_id: String,
    pub spans: Vec<Span>,
    pub sentence_labels: Vec<u8>,
    pub unclear: bool,
}

/// Reason a submitted span was rejected, with its position in the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanError {
    pub span: usize,
    pub message: String,
}

impl std::fmt::Display for SpanError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "span {}: {}", self.span, self.message)
    }
}

/// True when a span boundary falls strictly inside a code placeholder.
fn crosses_placeholder(text: &str, start: usize, end: usize) -> bool {
    let width = CODE_PLACEHOLDER.chars().count();
    let mut chars = 0;
    let mut last = 0;
    for (byte, _) in text.match_indices(CODE_PLACEHOLDER) {
        chars += text[last..byte].chars().count();
        last = byte;
        let inside = |x: usize| chars < x && x < chars + width;
        if inside(start) || inside(end) {
            return true;
        }
    }
    false
}

fn check_span(problem: &Problem, s: &SpanInput) -> std::result::Result<String, String> {
    if s.char_start >= s.char_end {
        return Err(format!("empty range [{}, {})", s.char_start, s.char_end));
    }
    let text = char_slice(&problem.text, s.char_start, s.char_end)
        .ok_or_else(|| format!("range [{}, {}) is outside the text", s.char_start, s.char_end))?;
    if text.trim().is_empty() {
        return Err("span text is blank".into());
    }
    let sentence = problem
        .sentences
        .get(s.sentence_index)
        .ok_or_else(|| format!("no sentence {}", s.sentence_index))?;
    if !(sentence.char_start() <= s.char_start && s.char_start < sentence.char_end()) {
        return Err(format!("span does not start in sentence {}", s.sentence_index));
    }
    if crosses_placeholder(&problem.text, s.char_start, s.char_end) {
        return Err(format!("span cuts through a {CODE_PLACEHOLDER} placeholder"));
    }
    Ok(text.to_owned())
}

/// Sentence j is 1 iff some span overlaps it.
pub fn sentence_labels(problem: &Problem, spans: &[Span]) -> Vec<u8> {
    problem
        .sentences
        .iter()
        .map(|s| spans.iter().any(|sp| s.overlaps(sp.char_start, sp.char_end)) as u8)
        .collect()
}

impl AnnotationRecord {
    /// Validates spans against the problem, sorts them and derives labels.
    /// An unclear record carries no spans.
    pub fn from_spans(
        problem: &Problem,
        spans: &[SpanInput],
        unclear: bool,
    ) -> std::result::Result<Self, Vec<SpanError>> {
        let mut errors = Vec::new();
        let mut out = Vec::with_capacity(spans.len());
        for (i, s) in spans.iter().enumerate() {
            if unclear {
                errors.push(SpanError {
                    span: i,
                    message: "an unclear problem cannot carry spans".into(),
                });
                continue;
            }
            match check_span(problem, s) {
                Ok(text) => out.push(Span {
                    sentence_index: s.sentence_index,
                    char_start: s.char_start,
                    char_end: s.char_end,
                    text,
                }),
                Err(message) => errors.push(SpanError { span: i, message }),
            }
        }
        let mut sorted: Vec<usize> = (0..out.len()).collect();
        sorted.sort_by_key(|&i| (out[i].char_start, out[i].char_end));
        for w in sorted.windows(2) {
            let (a, b) = (&out[w[0]], &out[w[1]]);
            if a.char_start == b.char_start && a.char_end == b.char_end {
                errors.push(SpanError {
                    span: w[1],
                    message: "duplicate span".into(),
                });
            }
        }
        if !errors.is_empty() {
            errors.sort_by_key(|e| e.span);
            return Err(errors);
        }
        out.sort_by_key(|s| (s.char_start, s.char_end));
        let sentence_labels = sentence_labels(problem, &out);
        Ok(AnnotationRecord {
            problem_id: problem.id.clone(),
            spans: out,
            sentence_labels,
            unclear,
        })
    }

    pub fn span_inputs(&self) -> Vec<SpanInput> {
        self.spans
            .iter()
            .map(|s| SpanInput {
                sentence_index: s.sentence_index,
                char_start: s.char_start,
                char_end: s.char_end,
            })
            .collect()
    }

    /// Checks every invariant against `problem`.
    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if self.problem_id != problem.id {
            return Err(Error::invalid(format!(
                "annotation for {} checked against problem {}",
                self.problem_id, problem.id
            )));
        }
        let rebuilt = AnnotationRecord::from_spans(problem, &self.span_inputs(), self.unclear).map_err(|e| {
            Error::invalid(format!(
                "annotation {}: {}",
                self.problem_id,
                e.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
            ))
        })?;
        if &rebuilt != self {
            return Err(Error::invalid(format!(
                "annotation {} text or labels disagree with the problem",
                self.problem_id
            )));
        }
        Ok(())
    }
}

pub type AnnotationSet = BTreeMap<String, AnnotationRecord>;

pub fn read_annotations<R: BufRead>(reader: R) -> Result<AnnotationSet> {
    let mut out = AnnotationSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.contains_key(&rec.problem_id) {
            return Err(Error::Duplicate {
                what: "annotation",
                key: rec.problem_id,
            });
        }
        out.insert(rec.problem_id.clone(), rec);
    }
    Ok(out)
}

pub fn read_annotations_file(path: &Path) -> Result<AnnotationSet> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_annotations(std::io::BufReader::new(f))
}

/// One record per line in problem-id order.
pub fn annotations_jsonl<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>) -> Result<String> {
    let mut sorted: Vec<&AnnotationRecord> = records.into_iter().collect();
    sorted.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    let mut out = String::new();
    for r in sorted {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
