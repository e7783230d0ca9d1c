//! Annotation store persisted as an append-only JSONL journal.
//!
//! Each line is `{"revision": n, "record": {...}}`. Replay keeps the last
//! line per problem. Compaction rewrites the journal with one line per
//! record via a temporary file and a rename.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use probunk_core::corpus::{Corpus, Problem};
use probunk_core::unknown::{annotations_jsonl, read_annotations, AnnotationRecord, SpanError, SpanInput};
use serde::{Deserialize, Serialize};

use crate::api::PutAnnotation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stored {
    pub revision: u64,
    pub record: AnnotationRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown problem {0}")]
    NotFound(String),
    #[error("stale revision {given}, current is {current}")]
    Conflict { given: u64, current: u64 },
    #[error("invalid annotation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<SpanError>),
    #[error("{0}")]
    Rejected(String),
    #[error("journal {path}, line {line}: {message}")]
    Journal { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Core(#[from] probunk_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub imported: usize,
    pub unchanged: usize,
}

pub struct AnnotationStore {
    path: PathBuf,
    records: BTreeMap<String, Stored>,
    journal: BufWriter<File>,
    lines: usize,
    compact_after: usize,
}

impl std::fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationStore")
            .field("path", &self.path)
            .field("records", &self.records.len())
            .field("lines", &self.lines)
            .finish()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

impl AnnotationStore {
    /// Default number of superseded journal lines tolerated before an
    /// automatic compaction.
    pub const COMPACT_AFTER: usize = 256;

    /// Opens or creates the journal at `path`, replaying it against
    /// `corpus`. A torn final line is dropped.
    pub fn open(path: &Path, corpus: &Corpus) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(path)(e)),
        };
        let mut records: BTreeMap<String, Stored> = BTreeMap::new();
        let mut lines = 0;
        let mut torn = false;
        let complete = text.ends_with('\n');
        let all: Vec<&str> = text.lines().collect();
        for (i, line) in all.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: Stored = match serde_json::from_str(line) {
                Ok(e) => e,
                Err(_) if i + 1 == all.len() && !complete => {
                    torn = true;
                    break;
                }
                Err(e) => return Err(journal_err(path, i, e.to_string())),
            };
            let problem = corpus
                .problem(&entry.record.problem_id)
                .ok_or_else(|| journal_err(path, i, format!("unknown problem {}", entry.record.problem_id)))?;
            entry
                .record
                .validate(problem)
                .map_err(|e| journal_err(path, i, e.to_string()))?;
            if let Some(prev) = records.get(&entry.record.problem_id) {
                if entry.revision <= prev.revision {
                    return Err(journal_err(
                        path,
                        i,
                        format!("revision {} does not exceed {}", entry.revision, prev.revision),
                    ));
                }
            }
            records.insert(entry.record.problem_id.clone(), entry);
            lines += 1;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut store = AnnotationStore {
            path: path.to_owned(),
            records,
            journal: BufWriter::new(file),
            lines,
            compact_after: Self::COMPACT_AFTER,
        };
        if torn || store.stale() > 0 {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn with_compact_after(mut self, n: usize) -> Self {
        self.compact_after = n;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, problem_id: &str) -> Option<&Stored> {
        self.records.get(problem_id)
    }

    pub fn revision(&self, problem_id: &str) -> u64 {
        self.records.get(problem_id).map_or(0, |s| s.revision)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.values().map(|s| &s.record)
    }

    /// Journal lines superseded by a later line.
    pub fn stale(&self) -> usize {
        self.lines - self.records.len()
    }

    /// Validates and stores an annotation if `req.revision` is current.
    pub fn put(&mut self, problem: &Problem, req: &PutAnnotation) -> Result<Stored> {
        let current = self.revision(&problem.id);
        if req.revision != current {
            return Err(StoreError::Conflict {
                given: req.revision,
                current,
            });
        }
        let record = build_record(problem, &req.spans, req.unclear)?;
        self.append(Stored {
            revision: current + 1,
            record,
        })
    }

    /// Stores every record of a JSONL export. Nothing is written unless
    /// all records validate. Records equal to the stored ones keep their
    /// revision.
    pub fn import(&mut self, corpus: &Corpus, jsonl: &str) -> Result<ImportSummary> {
        let set = read_annotations(jsonl.as_bytes())?;
        let mut changed = Vec::new();
        let mut summary = ImportSummary::default();
        for rec in set.into_values() {
            let problem = corpus
                .problem(&rec.problem_id)
                .ok_or_else(|| StoreError::NotFound(rec.problem_id.clone()))?;
            let rebuilt = build_record(problem, &rec.span_inputs(), rec.unclear)?;
            if rebuilt != rec {
                return Err(StoreError::Rejected(format!(
                    "record of {} does not match its spans",
                    rec.problem_id
                )));
            }
            if self.get(&rec.problem_id).is_some_and(|s| s.record == rec) {
                summary.unchanged += 1;
            } else {
                changed.push(rec);
            }
        }
        for rec in changed {
            let revision = self.revision(&rec.problem_id) + 1;
            self.append(Stored { revision, record: rec })?;
            summary.imported += 1;
        }
        Ok(summary)
    }

    /// One record per line, ordered by problem id.
    pub fn export(&self) -> String {
        annotations_jsonl(self.records()).expect("records serialize")
    }

    fn append(&mut self, stored: Stored) -> Result<Stored> {
        let line = serde_json::to_string(&stored).map_err(probunk_core::Error::from)?;
        let path = self.path.clone();
        self.journal.write_all(line.as_bytes()).map_err(io_err(&path))?;
        self.journal.write_all(b"\n").map_err(io_err(&path))?;
        self.journal.flush().map_err(io_err(&path))?;
        self.journal.get_ref().sync_data().map_err(io_err(&path))?;
        self.records.insert(stored.record.problem_id.clone(), stored.clone());
        self.lines += 1;
        if self.stale() >= self.compact_after {
            self.compact()?;
        }
        Ok(stored)
    }

    /// Rewrites the journal with only the live line of each record.
    pub fn compact(&mut self) -> Result<()> {
        let tmp = self.path.with_extension("compact.tmp");
        {
            let file = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut out = BufWriter::new(file);
            for stored in self.records.values() {
                serde_json::to_writer(&mut out, stored).map_err(probunk_core::Error::from)?;
                out.write_all(b"\n").map_err(io_err(&tmp))?;
            }
            out.flush().map_err(io_err(&tmp))?;
            out.get_ref().sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        let file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        self.journal = BufWriter::new(file);
        self.lines = self.records.len();
        Ok(())
    }
}

fn journal_err(path: &Path, i: usize, message: String) -> StoreError {
    StoreError::Journal {
        path: path.to_owned(),
        line: i + 1,
        message,
    }
}

/// A labelled record needs at least one span; an unclear one needs none.
fn build_record(problem: &Problem, spans: &[SpanInput], unclear: bool) -> Result<AnnotationRecord> {
    if !unclear && spans.is_empty() {
        return Err(StoreError::Rejected(
            "an annotation needs at least one span or the unclear flag".into(),
        ));
    }
    AnnotationRecord::from_spans(problem, spans, unclear).map_err(StoreError::Invalid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use probunk_core::corpus::Answer;

    fn corpus() -> Corpus {
        let ps = vec![
            Problem::new("p1", "Two dice are rolled. What is the probability that both are six?", ["probability"], "a1")
                .unwrap(),
            Problem::new("p2", "A coin is fair. Derive the variance.", ["variance"], "a2").unwrap(),
        ];
        let answers = vec![
            Answer { id: "a1".into(), problem_id: "p1".into(), text: "1/36".into() },
            Answer { id: "a2".into(), problem_id: "p2".into(), text: "1/4".into() },
        ];
        Corpus::new(ps, answers).unwrap()
    }

    fn whole(p: &Problem, j: usize) -> SpanInput {
        SpanInput {
            sentence_index: j,
            char_start: p.sentences[j].char_start(),
            char_end: p.sentences[j].char_end(),
        }
    }

    fn req(spans: Vec<SpanInput>, unclear: bool, revision: u64) -> PutAnnotation {
        PutAnnotation { spans, unclear, revision }
    }

    #[test]
    fn revisions_increase_and_stale_writes_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus();
        let p = c.problem("p1").unwrap();
        let mut s = AnnotationStore::open(&dir.path().join("j.jsonl"), &c).unwrap();
        assert_eq!(s.put(p, &req(vec![whole(p, 1)], false, 0)).unwrap().revision, 1);
        assert!(matches!(
            s.put(p, &req(vec![whole(p, 0)], false, 0)),
            Err(StoreError::Conflict { given: 0, current: 1 })
        ));
        assert_eq!(s.put(p, &req(vec![], true, 1)).unwrap().revision, 2);
        assert!(s.get("p1").unwrap().record.unclear);
    }

    #[test]
    fn invalid_spans_are_never_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let c = corpus();
        let p = c.problem("p1").unwrap();
        let mut s = AnnotationStore::open(&path, &c).unwrap();
        let bad = SpanInput { sentence_index: 0, char_start: 3, char_end: 3 };
        assert!(matches!(s.put(p, &req(vec![bad], false, 0)), Err(StoreError::Invalid(e)) if e[0].span == 0));
        assert!(matches!(s.put(p, &req(vec![], false, 0)), Err(StoreError::Rejected(_))));
        assert!(s.is_empty());
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn replay_restores_state_and_compaction_keeps_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let c = corpus();
        let (p1, p2) = (c.problem("p1").unwrap(), c.problem("p2").unwrap());
        let mut s = AnnotationStore::open(&path, &c).unwrap().with_compact_after(1000);
        s.put(p1, &req(vec![whole(p1, 0)], false, 0)).unwrap();
        s.put(p1, &req(vec![whole(p1, 1)], false, 1)).unwrap();
        s.put(p2, &req(vec![whole(p2, 1)], false, 0)).unwrap();
        let export = s.export();
        assert_eq!(s.stale(), 1);
        drop(s);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);

        let s = AnnotationStore::open(&path, &c).unwrap();
        assert_eq!(s.export(), export);
        assert_eq!(s.revision("p1"), 2);
        assert_eq!(s.stale(), 0);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn torn_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let c = corpus();
        let p = c.problem("p2").unwrap();
        let mut s = AnnotationStore::open(&path, &c).unwrap();
        s.put(p, &req(vec![whole(p, 1)], false, 0)).unwrap();
        drop(s);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"revision\":2,\"rec").unwrap();
        drop(f);
        let s = AnnotationStore::open(&path, &c).unwrap();
        assert_eq!(s.revision("p2"), 1);
        assert!(fs::read_to_string(&path).unwrap().ends_with("}\n"));
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        fs::write(&path, "not json\n").unwrap();
        assert!(matches!(AnnotationStore::open(&path, &corpus()), Err(StoreError::Journal { line: 1, .. })));
    }

    #[test]
    fn import_is_all_or_nothing_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus();
        let p1 = c.problem("p1").unwrap();
        let mut a = AnnotationStore::open(&dir.path().join("a.jsonl"), &c).unwrap();
        a.put(p1, &req(vec![whole(p1, 1)], false, 0)).unwrap();
        let p2 = c.problem("p2").unwrap();
        a.put(p2, &req(vec![], true, 0)).unwrap();
        let export = a.export();

        let mut b = AnnotationStore::open(&dir.path().join("b.jsonl"), &c).unwrap();
        assert_eq!(b.import(&c, &export).unwrap(), ImportSummary { imported: 2, unchanged: 0 });
        assert_eq!(b.export(), export);
        assert_eq!(b.import(&c, &export).unwrap(), ImportSummary { imported: 0, unchanged: 2 });

        let tampered = export.replace("\"sentence_labels\":[0,1]", "\"sentence_labels\":[1,1]");
        assert_ne!(tampered, export);
        let mut fresh = AnnotationStore::open(&dir.path().join("c.jsonl"), &c).unwrap();
        assert!(fresh.import(&c, &tampered).is_err());
        assert!(fresh.is_empty());
    }

    #[test]
    fn empty_store_exports_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let s = AnnotationStore::open(&dir.path().join("j.jsonl"), &corpus()).unwrap();
        assert_eq!(s.export(), "");
    }
}
