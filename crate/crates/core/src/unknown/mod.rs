//! Sentence-level unknown extraction: annotations, the sentence dataset,
//! the context + sentence model, and the non-learning baselines.

mod annotation;
mod model;

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Problem, Split};
use crate::error::{Error, Result};

pub use annotation::{
    annotations_jsonl, read_annotations, read_annotations_file, sentence_labels, AnnotationRecord, AnnotationSet,
    Span, SpanError, SpanInput,
};
pub use model::{
    extract_unknowns, score_sentence, train_unknown_model, ContextKind, SentenceScore, TrainedUnknown,
    UnknownConfig, UnknownModel, UNKNOWN_KIND,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceInstance {
    pub problem_id: String,
    pub sentence_index: usize,
    pub y: u8,
}

/// One instance per sentence of every annotated, not-unclear problem
/// (optionally restricted to one split). Unannotated problems are skipped.
pub fn build_sentence_dataset(
    corpus: &Corpus,
    annotations: &AnnotationSet,
    split: Option<Split>,
) -> Result<Vec<SentenceInstance>> {
    let mut out = Vec::new();
    for p in corpus.problems().iter().filter(|p| split.is_none_or(|s| p.split == s)) {
        let Some(rec) = annotations.get(&p.id) else { continue };
        if rec.unclear {
            continue;
        }
        if rec.sentence_labels.len() != p.sentence_count() {
            return Err(Error::invalid(format!(
                "annotation of {} has {} labels for {} sentences",
                p.id,
                rec.sentence_labels.len(),
                p.sentence_count()
            )));
        }
        out.extend(rec.sentence_labels.iter().enumerate().map(|(j, &y)| SentenceInstance {
            problem_id: p.id.clone(),
            sentence_index: j,
            y,
        }));
    }
    Ok(out)
}

/// Which sentence the position baseline marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NthRule {
    /// 1-based position.
    Nth(usize),
    Last,
}

impl std::str::FromStr for NthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "last" {
            return Ok(NthRule::Last);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(NthRule::Nth(n)),
            _ => Err(Error::invalid(format!("sentence position must be >= 1 or 'last', got {s}"))),
        }
    }
}

/// Marks one sentence per problem; problems that are too short get none.
pub fn baseline_nth(problems: &[&Problem], rule: NthRule) -> Result<Vec<Vec<u8>>> {
    if rule == NthRule::Nth(0) {
        return Err(Error::invalid("sentence position must be >= 1"));
    }
    Ok(problems
        .iter()
        .map(|p| {
            let n = p.sentence_count();
            let target = match rule {
                NthRule::Nth(k) => k - 1,
                NthRule::Last => n.saturating_sub(1),
            };
            (0..n).map(|j| (j == target) as u8).collect()
        })
        .collect())
}

/// Predicts the majority label 0 everywhere.
pub fn baseline_majority(problems: &[&Problem]) -> Vec<Vec<u8>> {
    problems.iter().map(|p| vec![0; p.sentence_count()]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub problem_id: String,
    pub sentence_index: usize,
    pub p_u: f64,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<u8>,
}

pub fn predictions_jsonl(rows: &[PredictionRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Ids of annotated, not-unclear problems.
pub fn labelled_ids(annotations: &AnnotationSet) -> BTreeSet<&str> {
    annotations
        .values()
        .filter(|r| !r.unclear)
        .map(|r| r.problem_id.as_str())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Answer;

    fn corpus() -> Corpus {
        let ps = vec![
            Problem::new("a", "One die. Two dice. What is the mean?", ["mean"], "x").unwrap(),
            Problem::new("b", "Coins are fair. Find the variance.", ["variance"], "y").unwrap(),
            Problem::new("c", "Nothing here. Still nothing.", ["mean"], "z").unwrap(),
        ];
        let ans = ["x", "y", "z"]
            .iter()
            .zip(["a", "b", "c"])
            .map(|(id, p)| Answer {
                id: id.to_string(),
                problem_id: p.into(),
                text: "ok".into(),
            })
            .collect();
        Corpus::new(ps, ans).unwrap()
    }

    fn record(corpus: &Corpus, id: &str, sentence: usize, unclear: bool) -> AnnotationRecord {
        let p = corpus.problem(id).unwrap();
        let s = &p.sentences[sentence];
        let spans = if unclear {
            vec![]
        } else {
            vec![SpanInput {
                sentence_index: sentence,
                char_start: s.char_start(),
                char_end: s.char_end(),
            }]
        };
        AnnotationRecord::from_spans(p, &spans, unclear).unwrap()
    }

    #[test]
    fn dataset_counts_and_labels() {
        let c = corpus();
        let mut ann = AnnotationSet::new();
        ann.insert("a".into(), record(&c, "a", 2, false));
        ann.insert("b".into(), record(&c, "b", 1, false));
        ann.insert("c".into(), record(&c, "c", 0, true));
        let ds = build_sentence_dataset(&c, &ann, None).unwrap();
        assert_eq!(ds.len(), 5);
        let a: Vec<u8> = ds.iter().filter(|i| i.problem_id == "a").map(|i| i.y).collect();
        assert_eq!(a, vec![0, 0, 1]);
        assert!(ds.iter().all(|i| i.problem_id != "c"));
    }

    #[test]
    fn label_count_mismatch_is_an_error() {
        let c = corpus();
        let mut rec = record(&c, "a", 0, false);
        rec.sentence_labels.push(0);
        let ann = AnnotationSet::from([("a".to_string(), rec)]);
        assert!(build_sentence_dataset(&c, &ann, None).is_err());
    }

    #[test]
    fn position_baselines() {
        let c = corpus();
        let ps: Vec<&Problem> = c.problems().iter().collect();
        assert_eq!(baseline_nth(&ps, NthRule::Nth(1)).unwrap()[0], vec![1, 0, 0]);
        assert_eq!(baseline_nth(&ps, NthRule::Nth(3)).unwrap()[1], vec![0, 0]);
        assert_eq!(baseline_nth(&ps, NthRule::Last).unwrap()[0], vec![0, 0, 1]);
        assert!(baseline_nth(&ps, NthRule::Nth(0)).is_err());
        assert_eq!(baseline_majority(&ps)[2], vec![0, 0]);
        assert!(baseline_majority(&[]).is_empty());
        assert!("0".parse::<NthRule>().is_err());
        assert_eq!("last".parse::<NthRule>().unwrap(), NthRule::Last);
    }
}
