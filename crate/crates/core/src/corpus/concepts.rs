use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../../data/concepts.jsonl");

/// A background probability concept with its place in the textbook ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub chapter: u32,
    pub section: u32,
    #[serde(rename = "order")]
    pub order_index: u32,
    #[serde(default)]
    pub definitions: Vec<String>,
    #[serde(default)]
    pub examples: Vec<String>,
    /// Dump tags that denote this concept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl Concept {
    /// Text whose pooled embedding becomes the concept's graph feature.
    pub fn definition_text(&self) -> String {
        if self.definitions.is_empty() {
            self.name.clone()
        } else {
            self.definitions.join(" ")
        }
    }
}

/// The 69 background concepts.
pub fn shipped_concepts() -> Vec<Concept> {
    load_concepts(SHIPPED.as_bytes()).expect("shipped concept file is valid")
}

pub fn load_concepts_file(path: &Path) -> Result<Vec<Concept>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_concepts(BufReader::new(file))
}

/// Reads concepts from JSONL; file order is preserved.
pub fn load_concepts<R: BufRead>(reader: R) -> Result<Vec<Concept>> {
    let mut concepts: Vec<Concept> = Vec::new();
    let (mut ids, mut names, mut orders) = (HashSet::new(), HashSet::new(), HashSet::new());
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Concept = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if c.chapter == 0 || c.section == 0 {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("concept `{}` needs chapter and section >= 1", c.name),
            });
        }
        let dup = |what, key: &str| Error::Duplicate {
            what,
            key: key.to_owned(),
        };
        if !names.insert(c.name.to_lowercase()) {
            return Err(dup("concept name", &c.name));
        }
        if !ids.insert(c.id.clone()) {
            return Err(dup("concept id", &c.id));
        }
        if !orders.insert(c.order_index) {
            return Err(dup("concept order", &c.order_index.to_string()));
        }
        concepts.push(c);
    }
    if concepts.is_empty() {
        return Err(Error::invalid("concept file is empty"));
    }
    Ok(concepts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_has_69_concepts() {
        let c = shipped_concepts();
        assert_eq!(c.len(), 69);
        assert!(c.windows(2).all(|w| w[0].order_index < w[1].order_index));
        assert_eq!(c[33].name, "Gaussian");
        assert_eq!(c[34].name, "Normal");
        assert_ne!(c[33].id, c[34].id);
        let chapters: HashSet<u32> = c.iter().map(|c| c.chapter).collect();
        assert_eq!(chapters.len(), 5);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(load_concepts("".as_bytes()).is_err());
    }

    #[test]
    fn duplicate_names_are_an_error() {
        let line = r#"{"id":"a","name":"Mean","chapter":1,"section":1,"order":1}"#;
        let line2 = r#"{"id":"b","name":"mean","chapter":1,"section":1,"order":2}"#;
        let src = format!("{line}\n{line2}\n");
        assert!(matches!(load_concepts(src.as_bytes()), Err(Error::Duplicate { .. })));
    }
}
