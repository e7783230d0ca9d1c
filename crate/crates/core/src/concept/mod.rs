//! Multi-label concept classification and prototypical networks.

mod pca;
mod proto;

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{Corpus, Problem, Split};
use crate::embed::{EmbeddingTable, ItemKey};
use crate::encoder::{EncoderConfig, EncoderKind, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, bce_with_logits, join, sigmoid, zeros_like, AdamConfig, AdamState, Checkpoint, Dropout, Mlp,
    Module, ParamSet,
};

pub use pca::{export_prototypes, is_prototypical, pca_2d, prototype_csv, ExportConfig, ProtoPoint, ProtoPointKind};
pub use proto::{
    build_prototypes, classify_by_prototype, nearest_prototype, train_prototypical, EpisodeConfig, EpisodeLog,
    ProtoModel, Prototype, PrototypeSet, PROTO_KIND,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// One affine layer (per-concept logistic regression).
    Maxent,
    /// Hidden ReLU stack, then the affine output layer.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConceptConfig {
    pub encoder: EncoderConfig,
    pub head: HeadKind,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for ConceptConfig {
    fn default() -> Self {
        ConceptConfig {
            encoder: EncoderConfig::default(),
            head: HeadKind::Maxent,
            mlp_hidden: 512,
            mlp_layers: 3,
            epochs: 20,
            batch_size: 16,
            dropout: 0.0,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl ConceptConfig {
    /// Named presets: maxent, mlp, lstm, gru, cnn.
    pub fn preset(name: &str) -> Result<Self> {
        let d = ConceptConfig::default();
        Ok(match name {
            "maxent" => ConceptConfig {
                encoder: EncoderConfig::of_kind(EncoderKind::Bow),
                epochs: 300,
                seed: 3,
                ..d
            },
            "mlp" => ConceptConfig {
                encoder: EncoderConfig::of_kind(EncoderKind::Bow),
                head: HeadKind::Mlp,
                epochs: 300,
                seed: 1,
                ..d
            },
            "lstm" => ConceptConfig {
                encoder: EncoderConfig::of_kind(EncoderKind::Lstm),
                epochs: 300,
                seed: 2,
                ..d
            },
            "gru" => ConceptConfig {
                encoder: EncoderConfig::of_kind(EncoderKind::Gru),
                epochs: 300,
                seed: 2,
                ..d
            },
            "cnn" => ConceptConfig {
                epochs: 20,
                seed: 10000,
                ..d
            },
            _ => return Err(Error::invalid(format!("unknown concept model {name}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptModel {
    pub config: ConceptConfig,
    pub classes: Vec<String>,
    pub input_dim: usize,
    pub encoder: TextEncoder,
    pub head: Mlp,
}

impl Module for ConceptModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

pub const CONCEPT_KIND: &str = "concept-classifier";

impl ConceptModel {
    pub fn new(config: ConceptConfig, classes: Vec<String>, input_dim: usize) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("concept model needs at least one class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = TextEncoder::new(&mut rng, &config.encoder, input_dim)?;
        let layers = match config.head {
            HeadKind::Maxent => 0,
            HeadKind::Mlp => config.mlp_layers,
        };
        let head = Mlp::new(&mut rng, encoder.output_dim(), config.mlp_hidden, layers, classes.len());
        Ok(ConceptModel {
            config,
            classes,
            input_dim,
            encoder,
            head,
        })
    }

    pub fn logits(&self, table: &EmbeddingTable, problem_id: &str) -> Result<Array1<f64>> {
        let input = self.encoder.input(table, &ItemKey::problem(problem_id))?;
        let (v, _) = self.encoder.forward(input.view())?;
        Ok(self.head.forward(v.view())?.0)
    }

    pub fn predict(&self, table: &EmbeddingTable, problem_id: &str) -> Result<BTreeSet<String>> {
        Ok(labels_above_half(&self.logits(table, problem_id)?, &self.classes))
    }

    pub fn to_checkpoint(&self, log: &[f64]) -> Checkpoint {
        Checkpoint {
            kind: CONCEPT_KIND.into(),
            config: json!({"model": self.config, "classes": self.classes, "input_dim": self.input_dim}),
            params: ParamSet::capture(self, self.config.seed),
            log: json!({ "epoch_loss": log }),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CONCEPT_KIND {
            return Err(Error::Format(format!("expected a {CONCEPT_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: ConceptConfig = serde_json::from_value(ck.config["model"].clone())?;
        let classes: Vec<String> = serde_json::from_value(ck.config["classes"].clone())?;
        let input_dim: usize = serde_json::from_value(ck.config["input_dim"].clone())?;
        let mut m = ConceptModel::new(config, classes, input_dim)?;
        ck.params.restore(&mut m)?;
        Ok(m)
    }
}

/// Concepts whose sigmoid score exceeds 0.5.
pub fn labels_above_half(logits: &Array1<f64>, classes: &[String]) -> BTreeSet<String> {
    logits
        .iter()
        .zip(classes)
        .filter(|(&z, _)| sigmoid(z) > 0.5)
        .map(|(_, c)| c.clone())
        .collect()
}

pub fn predict_concepts(model: &ConceptModel, table: &EmbeddingTable, problem: &Problem) -> Result<BTreeSet<String>> {
    model.predict(table, &problem.id)
}

pub struct TrainedConcept {
    pub model: ConceptModel,
    pub epoch_loss: Vec<f64>,
}

/// Trains per-concept sigmoid outputs with summed BCE over the train split.
/// Classes are the corpus concept ids in sorted order unless given.
pub fn train_concept_classifier(
    corpus: &Corpus,
    table: &EmbeddingTable,
    cfg: &ConceptConfig,
    classes: Option<Vec<String>>,
) -> Result<TrainedConcept> {
    let train: Vec<&Problem> = corpus.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let classes = classes.unwrap_or_else(|| corpus.concept_ids().into_iter().collect());
    let mut model = ConceptModel::new(cfg.clone(), classes, table.dim())?;
    let inputs: Vec<Array2<f64>> = train
        .iter()
        .map(|p| model.encoder.input(table, &ItemKey::problem(&p.id)))
        .collect::<Result<_>>()?;
    let targets: Vec<Array1<f64>> = train
        .iter()
        .map(|p| {
            Array1::from_iter(
                model
                    .classes
                    .iter()
                    .map(|c| if p.concept_tags.contains(c) { 1.0 } else { 0.0 }),
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let dropout = Dropout::new(cfg.dropout);
    let mut adam = AdamState::new(cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = zeros_like(&model);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (enc, cache) = model.encoder.forward(inputs[i].view())?;
                let mask = dropout.mask(&mut rng, enc.len());
                let enc = &enc * &mask;
                let (z, hc) = model.head.forward(enc.view())?;
                let mut dz = Array1::zeros(z.len());
                for (k, (&zk, &yk)) in z.iter().zip(targets[i].iter()).enumerate() {
                    let (l, g) = bce_with_logits(zk, yk);
                    total += l;
                    dz[k] = g * scale;
                }
                let denc = model.head.backward(&hc, dz.view(), &mut grad.head) * &mask;
                model.encoder.backward(&cache, denc.view(), &mut grad.encoder);
            }
            adam_step(&mut model, &grad, &mut adam)?;
        }
        epoch_loss.push(total / train.len() as f64);
    }
    Ok(TrainedConcept { model, epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Answer;
    use crate::embed::fake_embeddings;
    use crate::nn::param_count;
    use rand::Rng;

    fn corpus_with(problems: Vec<(&str, &str, Vec<&str>)>) -> Corpus {
        let mut ps = Vec::new();
        let mut ans = Vec::new();
        for (id, text, tags) in problems {
            ps.push(Problem::new(id, text, tags, format!("a{id}")).unwrap());
            ans.push(Answer {
                id: format!("a{id}"),
                problem_id: id.into(),
                text: "ok".into(),
            });
        }
        Corpus::new(ps, ans).unwrap()
    }

    #[test]
    fn head_sizes_match_reported_counts() {
        let classes: Vec<String> = (0..11).map(|i| format!("c{i}")).collect();
        let maxent = ConceptModel::new(ConceptConfig::preset("maxent").unwrap(), classes.clone(), 768).unwrap();
        assert_eq!(param_count(&maxent), 8_459);
        let mlp = ConceptModel::new(ConceptConfig::preset("mlp").unwrap(), classes, 768).unwrap();
        assert_eq!(param_count(&mlp), 924_683);
    }

    #[test]
    fn overfits_single_problem() {
        let corpus = corpus_with(vec![("1", "What is the variance of X?", vec!["variance"])]);
        let table = fake_embeddings(&corpus, &[], 1, 16).unwrap();
        let cfg = ConceptConfig {
            encoder: EncoderConfig::of_kind(EncoderKind::Bow),
            epochs: 200,
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            ..ConceptConfig::default()
        };
        let out = train_concept_classifier(&corpus, &table, &cfg, None).unwrap();
        assert!(*out.epoch_loss.last().unwrap() < 0.01, "{:?}", out.epoch_loss.last());
        assert!(out.epoch_loss[0] > *out.epoch_loss.last().unwrap());
    }

    #[test]
    fn same_seed_same_params() {
        let corpus = corpus_with(vec![
            ("1", "Find the mean of the die.", vec!["mean"]),
            ("2", "Is the variance finite?", vec!["variance"]),
        ]);
        let table = fake_embeddings(&corpus, &[], 1, 8).unwrap();
        let cfg = ConceptConfig {
            encoder: EncoderConfig {
                kind: EncoderKind::Cnn,
                widths: vec![1, 2],
                kernels: 4,
                hidden: 0,
            },
            epochs: 3,
            ..ConceptConfig::default()
        };
        let a = train_concept_classifier(&corpus, &table, &cfg, None).unwrap();
        let b = train_concept_classifier(&corpus, &table, &cfg, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_loss, b.epoch_loss);
        let ck = a.model.to_checkpoint(&a.epoch_loss);
        let back = ConceptModel::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, a.model);
    }

    #[test]
    fn empty_train_split_is_an_error() {
        let corpus = corpus_with(vec![("1", "Find the mean.", vec!["mean"])]);
        let mut split = crate::corpus::SplitAssignment::new();
        split.insert("1".into(), Split::Dev);
        let corpus = corpus.with_splits(&split).unwrap();
        let table = fake_embeddings(&corpus, &[], 1, 4).unwrap();
        assert!(train_concept_classifier(&corpus, &table, &ConceptConfig::default(), None).is_err());
    }

    #[test]
    fn thresholding() {
        let classes: Vec<String> = ["mean", "variance", "normal"].iter().map(|s| s.to_string()).collect();
        assert!(labels_above_half(&Array1::from_elem(3, -10.0), &classes).is_empty());
        let got = labels_above_half(&ndarray::array![-4.0, 4.0, -4.0], &classes);
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec!["variance".to_string()]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let z: Array1<f64> = Array1::from_shape_fn(3, |_| rng.random_range(-3.0..3.0));
            let oracle: BTreeSet<String> = (0..3)
                .filter(|&k| 1.0 / (1.0 + (-z[k]).exp()) > 0.5)
                .map(|k| classes[k].clone())
                .collect();
            assert_eq!(labels_above_half(&z, &classes), oracle);
        }
    }

    #[test]
    fn raising_a_logit_keeps_the_label() {
        let classes: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let mut z = ndarray::array![0.3, -1.0];
        assert!(labels_above_half(&z, &classes).contains("a"));
        z[0] += 5.0;
        assert!(labels_above_half(&z, &classes).contains("a"));
    }
}
