//! Scoring trained models and baselines on a corpus split.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::concept::{build_prototypes, classify_by_prototype, predict_concepts, ConceptModel, ProtoModel};
use crate::corpus::{Concept, Corpus, Problem, Split};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{class_metrics, multilabel_metrics, EvalReport};
use crate::unknown::{baseline_majority, baseline_nth, extract_unknowns, AnnotationSet, NthRule, PredictionRow, UnknownModel};

/// Annotated, not-unclear problems of `split`, in corpus order.
pub fn labelled_problems<'a>(corpus: &'a Corpus, annotations: &AnnotationSet, split: Split) -> Result<Vec<&'a Problem>> {
    let out: Vec<&Problem> = corpus
        .split(split)
        .filter(|p| annotations.get(&p.id).is_some_and(|r| !r.unclear))
        .collect();
    if out.is_empty() {
        return Err(Error::invalid(format!("split {split} has no labelled problems")));
    }
    for p in &out {
        annotations[&p.id].validate(p)?;
    }
    Ok(out)
}

fn binary_report(
    task: &str,
    split: Split,
    golds: &[u8],
    preds: &[u8],
    seed: Option<u64>,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let classes = class_metrics(golds, preds, &[0u8, 1u8])?;
    Ok(EvalReport::new(task, split.as_str(), classes, seed, config))
}

/// Sentence-level report over classes {0, 1} plus one prediction row per
/// sentence.
pub fn evaluate_unknown_model(
    model: &UnknownModel,
    corpus: &Corpus,
    table: &EmbeddingTable,
    annotations: &AnnotationSet,
    split: Split,
) -> Result<(EvalReport, Vec<PredictionRow>)> {
    let problems = labelled_problems(corpus, annotations, split)?;
    let (mut golds, mut preds, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for p in problems {
        let labels = &annotations[&p.id].sentence_labels;
        for (s, &y) in extract_unknowns(model, table, p)?.into_iter().zip(labels) {
            golds.push(y);
            preds.push(s.flagged as u8);
            rows.push(PredictionRow {
                problem_id: p.id.clone(),
                sentence_index: s.sentence_index,
                p_u: s.p_u,
                flagged: s.flagged,
                gold: Some(y),
            });
        }
    }
    let config = serde_json::to_value(&model.config)?;
    let report = binary_report("unknown", split, &golds, &preds, Some(model.config.seed), config)?;
    Ok((report, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Majority,
    Position(NthRule),
}

impl Baseline {
    fn name(self) -> String {
        match self {
            Baseline::Majority => "majority".into(),
            Baseline::Position(NthRule::Nth(k)) => format!("nth-{k}"),
            Baseline::Position(NthRule::Last) => "last".into(),
        }
    }
}

pub fn evaluate_unknown_baseline(
    baseline: Baseline,
    corpus: &Corpus,
    annotations: &AnnotationSet,
    split: Split,
) -> Result<(EvalReport, Vec<PredictionRow>)> {
    let problems = labelled_problems(corpus, annotations, split)?;
    let predicted = match baseline {
        Baseline::Majority => baseline_majority(&problems),
        Baseline::Position(rule) => baseline_nth(&problems, rule)?,
    };
    let (mut golds, mut preds, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for (p, ys) in problems.iter().zip(predicted) {
        for (j, (&y, yhat)) in annotations[&p.id].sentence_labels.iter().zip(ys).enumerate() {
            golds.push(y);
            preds.push(yhat);
            rows.push(PredictionRow {
                problem_id: p.id.clone(),
                sentence_index: j,
                p_u: yhat as f64,
                flagged: yhat == 1,
                gold: Some(y),
            });
        }
    }
    let config = json!({ "baseline": baseline.name() });
    let report = binary_report("unknown", split, &golds, &preds, None, config)?;
    Ok((report, rows))
}

/// Multi-label report over the model's classes.
pub fn evaluate_concept_model(
    model: &ConceptModel,
    corpus: &Corpus,
    table: &EmbeddingTable,
    split: Split,
) -> Result<EvalReport> {
    let problems: Vec<&Problem> = corpus.split(split).collect();
    if problems.is_empty() {
        return Err(Error::invalid(format!("split {split} is empty")));
    }
    let golds: Vec<BTreeSet<String>> = problems.iter().map(|p| p.concept_tags.clone()).collect();
    let preds: Vec<BTreeSet<String>> = problems
        .iter()
        .map(|p| predict_concepts(model, table, p))
        .collect::<Result<_>>()?;
    let classes = multilabel_metrics(&golds, &preds, &model.classes)?;
    let config = serde_json::to_value(&model.config)?;
    Ok(EvalReport::new("concept", split.as_str(), classes, Some(model.config.seed), config))
}

/// Nearest-prototype classification of the single-concept problems of
/// `split`, with prototypes averaged over every single-concept train
/// problem of the same concepts.
pub fn evaluate_prototypes(
    model: &ProtoModel,
    corpus: &Corpus,
    table: &EmbeddingTable,
    concepts: &[Concept],
    split: Split,
) -> Result<EvalReport> {
    let single = |s: Split| -> BTreeMap<String, Vec<String>> {
        let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in corpus.split(s).filter(|p| p.concept_tags.len() == 1) {
            let c = p.concept_tags.iter().next().expect("one tag");
            m.entry(c.clone()).or_default().push(p.id.clone());
        }
        m
    };
    let mut support = single(Split::Train);
    if let Some(allowed) = &model.config.classes {
        support.retain(|c, _| allowed.contains(c));
    }
    if support.is_empty() {
        return Err(Error::invalid("no single-concept train problems to build prototypes from"));
    }
    let set = build_prototypes(model, table, concepts, &support)?;
    let (mut golds, mut preds) = (Vec::new(), Vec::new());
    for (c, ids) in single(split).into_iter().filter(|(c, _)| support.contains_key(c)) {
        for id in ids {
            preds.push(classify_by_prototype(model, &set, table, &id)?);
            golds.push(c.clone());
        }
    }
    if golds.is_empty() {
        return Err(Error::invalid(format!("split {split} has no single-concept problems of the prototype classes")));
    }
    let classes: Vec<String> = support.keys().cloned().collect();
    let metrics = class_metrics(&golds, &preds, &classes)?;
    let config = serde_json::to_value(&model.config)?;
    Ok(EvalReport::new("concept-prototype", split.as_str(), metrics, Some(model.config.seed), config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::shipped_concepts;
    use crate::metrics::majority_closed_form;
    use crate::synth::{synthesize, SynthConfig};

    #[test]
    fn majority_baseline_matches_closed_form() {
        let d = synthesize(&SynthConfig { problems: 80, seed: 5, ..SynthConfig::default() }, &shipped_concepts()).unwrap();
        for split in Split::ALL {
            let (r, rows) = evaluate_unknown_baseline(Baseline::Majority, &d.corpus, &d.annotations, split).unwrap();
            let q = rows.iter().filter(|r| r.gold == Some(0)).count() as f64 / rows.len() as f64;
            assert!((r.macro_f1 - majority_closed_form(q)).abs() < 1e-12);
            assert_eq!(r.classes.len(), 2);
        }
    }

    #[test]
    fn split_without_labels_is_an_error() {
        let d = synthesize(&SynthConfig { problems: 40, seed: 6, ..SynthConfig::default() }, &shipped_concepts()).unwrap();
        let empty = AnnotationSet::new();
        assert!(evaluate_unknown_baseline(Baseline::Majority, &d.corpus, &empty, Split::Dev).is_err());
    }

    #[test]
    fn first_sentence_baseline_rows() {
        let d = synthesize(&SynthConfig { problems: 40, seed: 7, ..SynthConfig::default() }, &shipped_concepts()).unwrap();
        let (r, rows) =
            evaluate_unknown_baseline(Baseline::Position(NthRule::Nth(1)), &d.corpus, &d.annotations, Split::Train).unwrap();
        assert!(rows.iter().all(|r| r.flagged == (r.sentence_index == 0)));
        assert_eq!(r.config, json!({"baseline": "nth-1"}));
        assert!(r.macro_f1 < 1.0);
    }
}
