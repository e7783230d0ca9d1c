//! Corpus construction: dump parsing, tag filtering, sentence segmentation
//! and train/dev/test splits.

mod concepts;
mod dump;
mod filter;
mod markup;
mod segment;
mod split;

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use concepts::{load_concepts, load_concepts_file, shipped_concepts, Concept};
pub use dump::{parse_dump, parse_dump_file, PostType, RawPost};
pub use filter::{filter_problems, FilterReport, TagPolicy};
pub use markup::{math_spans, strip_markup, CODE_PLACEHOLDER};
pub use segment::{char_slice, segment_sentences, Sentence};
pub use split::{assign_splits, Split, SplitAssignment, SplitFractions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
    pub concept_tags: BTreeSet<String>,
    pub answer_id: String,
    pub split: Split,
}

impl Problem {
    /// Builds a problem from plain text, segmenting it into sentences.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        concept_tags: impl IntoIterator<Item = impl Into<String>>,
        answer_id: impl Into<String>,
    ) -> Result<Self> {
        let text = text.into();
        let sentences = segment_sentences(&text)?;
        Ok(Problem {
            id: id.into(),
            text,
            sentences,
            concept_tags: concept_tags.into_iter().map(Into::into).collect(),
            answer_id: answer_id.into(),
            split: Split::Train,
        })
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub id: String,
    pub problem_id: String,
    pub text: String,
}

/// An immutable set of problems and their accepted answers.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    problems: Vec<Problem>,
    answers: Vec<Answer>,
    problem_index: HashMap<String, usize>,
    answer_index: HashMap<String, usize>,
}

pub const PROBLEMS_FILE: &str = "problems.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";

impl Corpus {
    pub fn new(problems: Vec<Problem>, answers: Vec<Answer>) -> Result<Self> {
        let mut problem_index = HashMap::with_capacity(problems.len());
        for (i, p) in problems.iter().enumerate() {
            if problem_index.insert(p.id.clone(), i).is_some() {
                return Err(Error::Duplicate {
                    what: "problem id",
                    key: p.id.clone(),
                });
            }
            if p.concept_tags.is_empty() {
                return Err(Error::invalid(format!("problem {} has no concept tags", p.id)));
            }
        }
        let mut answer_index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if answer_index.insert(a.id.clone(), i).is_some() {
                return Err(Error::Duplicate {
                    what: "answer id",
                    key: a.id.clone(),
                });
            }
        }
        for p in &problems {
            match answer_index.get(&p.answer_id) {
                Some(&i) if answers[i].problem_id == p.id => {}
                Some(_) => {
                    return Err(Error::invalid(format!(
                        "answer {} does not point back to problem {}",
                        p.answer_id, p.id
                    )))
                }
                None => {
                    return Err(Error::NotFound(format!(
                        "answer {} of problem {}",
                        p.answer_id, p.id
                    )))
                }
            }
        }
        Ok(Corpus {
            problems,
            answers,
            problem_index,
            answer_index,
        })
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn answers(&self) -> &[Answer] {
        &self.answers
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problem_index.get(id).map(|&i| &self.problems[i])
    }

    pub fn answer(&self, id: &str) -> Option<&Answer> {
        self.answer_index.get(id).map(|&i| &self.answers[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Problem> {
        self.problems.iter().filter(move |p| p.split == split)
    }

    /// Concept ids used by at least one problem, sorted.
    pub fn concept_ids(&self) -> BTreeSet<String> {
        self.problems
            .iter()
            .flat_map(|p| p.concept_tags.iter().cloned())
            .collect()
    }

    pub fn with_splits(mut self, assignment: &SplitAssignment) -> Result<Self> {
        for p in &mut self.problems {
            p.split = assignment
                .get(&p.id)
                .copied()
                .ok_or_else(|| Error::NotFound(format!("split for problem {}", p.id)))?;
        }
        Ok(self)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(PROBLEMS_FILE), &self.problems)?;
        write_jsonl(&dir.join(ANSWERS_FILE), &self.answers)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let problems = read_jsonl(&dir.join(PROBLEMS_FILE))?;
        let answers = read_jsonl(&dir.join(ANSWERS_FILE))?;
        Corpus::new(problems, answers)
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        items.push(item);
    }
    Ok(items)
}
