//! Per-class precision/recall/F1 and macro averaging with the 0/0 = 0 rule.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ClassMetrics {
    pub fn from_counts(name: impl Into<String>, tp: usize, fp: usize, fn_: usize) -> Self {
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ClassMetrics {
            name: name.into(),
            p,
            r,
            f1,
            support: tp + fn_,
        }
    }
}

pub fn macro_average(classes: &[ClassMetrics]) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    classes.iter().map(|c| c.f1).sum::<f64>() / classes.len() as f64
}

/// Single-label metrics over an explicit class list (binary tasks use [0, 1]).
pub fn class_metrics<T: PartialEq + ToString>(golds: &[T], preds: &[T], classes: &[T]) -> Result<Vec<ClassMetrics>> {
    if golds.len() != preds.len() {
        return Err(Error::shape(format!("{} golds but {} predictions", golds.len(), preds.len())));
    }
    Ok(classes
        .iter()
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (g, p) in golds.iter().zip(preds) {
                match (g == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            ClassMetrics::from_counts(c.to_string(), tp, fp, fn_)
        })
        .collect())
}

pub fn macro_f1<T: PartialEq + ToString>(golds: &[T], preds: &[T], classes: &[T]) -> Result<f64> {
    Ok(macro_average(&class_metrics(golds, preds, classes)?))
}

/// Multi-label metrics: each class is scored over its indicator column.
pub fn multilabel_metrics(
    golds: &[BTreeSet<String>],
    preds: &[BTreeSet<String>],
    classes: &[String],
) -> Result<Vec<ClassMetrics>> {
    if golds.len() != preds.len() {
        return Err(Error::shape(format!("{} golds but {} predictions", golds.len(), preds.len())));
    }
    Ok(classes
        .iter()
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (g, p) in golds.iter().zip(preds) {
                match (g.contains(c), p.contains(c)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            ClassMetrics::from_counts(c.clone(), tp, fp, fn_)
        })
        .collect())
}

/// Macro F1 of always predicting 0 when a fraction `q` of labels is 0.
pub fn majority_closed_form(q: f64) -> f64 {
    q / (q + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub split: String,
    pub classes: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub seed: Option<u64>,
    pub config: Value,
    /// Left empty by default so reports are reproducible byte for byte.
    pub train_seconds: Option<f64>,
}

impl EvalReport {
    pub fn new(task: &str, split: &str, classes: Vec<ClassMetrics>, seed: Option<u64>, config: Value) -> Self {
        EvalReport {
            task: task.into(),
            split: split.into(),
            macro_f1: macro_average(&classes),
            classes,
            seed,
            config,
            train_seconds: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
