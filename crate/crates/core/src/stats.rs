//! Corpus histograms.

use std::collections::BTreeMap;

use crate::corpus::Corpus;
use crate::unknown::AnnotationSet;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    /// Sentence count -> number of problems.
    pub sentences_per_problem: BTreeMap<usize, usize>,
    /// 1-based sentence position -> number of unknown sentences there.
    pub unknown_position: BTreeMap<usize, usize>,
}

pub fn corpus_stats(corpus: &Corpus, annotations: Option<&AnnotationSet>) -> CorpusStats {
    let mut out = CorpusStats::default();
    for p in corpus.problems() {
        *out.sentences_per_problem.entry(p.sentence_count()).or_default() += 1;
        let Some(rec) = annotations.and_then(|a| a.get(&p.id)) else { continue };
        if rec.unclear {
            continue;
        }
        for (j, &y) in rec.sentence_labels.iter().enumerate() {
            if y == 1 {
                *out.unknown_position.entry(j + 1).or_default() += 1;
            }
        }
    }
    out
}

impl CorpusStats {
    /// `histogram,bin,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("histogram,bin,count\n");
        for (name, h) in [
            ("sentences_per_problem", &self.sentences_per_problem),
            ("unknown_position", &self.unknown_position),
        ] {
            for (bin, count) in h {
                out.push_str(&format!("{name},{bin},{count}\n"));
            }
        }
        out
    }
}
