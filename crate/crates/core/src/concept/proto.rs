use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{Concept, Corpus, Problem, Split};
use crate::embed::{EmbeddingTable, ItemKey};
use crate::encoder::{EncoderCache, EncoderConfig, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{adam_step, prototype_loss, zeros_like, AdamConfig, AdamState, Checkpoint, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub encoder: EncoderConfig,
    /// Classes per episode; all eligible classes when absent.
    pub n_way: Option<usize>,
    pub support: usize,
    pub query: usize,
    pub episodes: usize,
    /// Restrict training to these concepts; otherwise every concept with a
    /// single-concept train problem.
    pub classes: Option<Vec<String>>,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            encoder: EncoderConfig::default(),
            n_way: None,
            support: 10,
            query: 15,
            episodes: 100,
            classes: None,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub loss: f64,
    /// Nearest-prototype accuracy on the episode's queries before the update.
    pub query_accuracy: f64,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoModel {
    pub config: EpisodeConfig,
    pub input_dim: usize,
    pub encoder: TextEncoder,
}

pub const PROTO_KIND: &str = "prototype-encoder";

impl ProtoModel {
    pub fn new(config: EpisodeConfig, input_dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = TextEncoder::new(&mut rng, &config.encoder, input_dim)?;
        Ok(ProtoModel {
            config,
            input_dim,
            encoder,
        })
    }

    pub fn encode(&self, table: &EmbeddingTable, problem_id: &str) -> Result<Array1<f64>> {
        let x = self.encoder.input(table, &ItemKey::problem(problem_id))?;
        Ok(self.encoder.forward(x.view())?.0)
    }

    pub fn to_checkpoint(&self, log: &[EpisodeLog]) -> Checkpoint {
        Checkpoint {
            kind: PROTO_KIND.into(),
            config: json!({"model": self.config, "input_dim": self.input_dim}),
            params: ParamSet::capture(&self.encoder, self.config.seed),
            log: json!({ "episodes": log }),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != PROTO_KIND {
            return Err(Error::Format(format!("expected a {PROTO_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: EpisodeConfig = serde_json::from_value(ck.config["model"].clone())?;
        let input_dim: usize = serde_json::from_value(ck.config["input_dim"].clone())?;
        let mut m = ProtoModel::new(config, input_dim)?;
        ck.params.restore(&mut m.encoder)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub concept_id: String,
    pub order_index: u32,
    pub vector: Vec<f64>,
    pub support: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Vec<Prototype>,
}

/// Single-concept problems of one split, grouped by concept.
pub(crate) fn single_concept_groups(corpus: &Corpus, split: Split) -> BTreeMap<String, Vec<&Problem>> {
    let mut m: BTreeMap<String, Vec<&Problem>> = BTreeMap::new();
    for p in corpus.split(split).filter(|p| p.concept_tags.len() == 1) {
        let c = p.concept_tags.iter().next().expect("one tag").clone();
        m.entry(c).or_default().push(p);
    }
    m
}

fn mean_rows(rows: &[Array1<f64>]) -> Array1<f64> {
    let mut m = Array1::zeros(rows[0].len());
    for r in rows {
        m += r;
    }
    m / rows.len() as f64
}

/// Index of the prototype nearest to `query` in squared Euclidean distance;
/// ties go to the smaller order_index.
pub fn nearest_prototype(query: &[f64], prototypes: &[Prototype]) -> Option<usize> {
    let mut best: Option<(f64, u32, usize)> = None;
    for (i, p) in prototypes.iter().enumerate() {
        let d: f64 = query.iter().zip(&p.vector).map(|(a, b)| (a - b) * (a - b)).sum();
        let better = match best {
            None => true,
            Some((bd, bo, _)) => d < bd || (d == bd && p.order_index < bo),
        };
        if better {
            best = Some((d, p.order_index, i));
        }
    }
    best.map(|(_, _, i)| i)
}

pub fn classify_by_prototype(
    model: &ProtoModel,
    prototypes: &PrototypeSet,
    table: &EmbeddingTable,
    problem_id: &str,
) -> Result<String> {
    if prototypes.prototypes.is_empty() {
        return Err(Error::invalid("no prototypes"));
    }
    let q = model.encode(table, problem_id)?;
    let i = nearest_prototype(q.as_slice().expect("contiguous"), &prototypes.prototypes).expect("non-empty");
    Ok(prototypes.prototypes[i].concept_id.clone())
}

/// Prototypes as means of the encoded `support` problems per concept.
pub fn build_prototypes(
    model: &ProtoModel,
    table: &EmbeddingTable,
    concepts: &[Concept],
    support: &BTreeMap<String, Vec<String>>,
) -> Result<PrototypeSet> {
    let order: BTreeMap<&str, u32> = concepts.iter().map(|c| (c.id.as_str(), c.order_index)).collect();
    let mut prototypes = Vec::new();
    for (cid, ids) in support {
        if ids.is_empty() {
            return Err(Error::invalid(format!("no support problems for {cid}")));
        }
        let enc: Vec<Array1<f64>> = ids.iter().map(|id| model.encode(table, id)).collect::<Result<_>>()?;
        prototypes.push(Prototype {
            concept_id: cid.clone(),
            order_index: *order
                .get(cid.as_str())
                .ok_or_else(|| Error::NotFound(format!("concept {cid}")))?,
            vector: mean_rows(&enc).to_vec(),
            support: ids.clone(),
        });
    }
    Ok(PrototypeSet { prototypes })
}

/// Episodic training over single-concept train problems.
pub fn train_prototypical(
    corpus: &Corpus,
    table: &EmbeddingTable,
    cfg: &EpisodeConfig,
) -> Result<(ProtoModel, Vec<EpisodeLog>)> {
    let groups = single_concept_groups(corpus, Split::Train);
    let classes: Vec<String> = match &cfg.classes {
        Some(c) => c.clone(),
        None => groups.keys().cloned().collect(),
    };
    let need = cfg.support + cfg.query;
    if cfg.support == 0 || cfg.query == 0 {
        return Err(Error::invalid("support and query sizes must be positive"));
    }
    let short: Vec<String> = classes
        .iter()
        .filter(|c| groups.get(*c).map_or(0, Vec::len) < need)
        .map(|c| format!("{c} ({})", groups.get(c).map_or(0, Vec::len)))
        .collect();
    if !short.is_empty() {
        return Err(Error::invalid(format!(
            "classes with fewer than {need} single-concept train problems: {}",
            short.join(", ")
        )));
    }
    let n_way = cfg.n_way.unwrap_or(classes.len());
    if n_way < 2 || n_way > classes.len() {
        return Err(Error::invalid(format!(
            "n_way {n_way} needs between 2 and {} eligible classes",
            classes.len()
        )));
    }

    let mut model = ProtoModel::new(cfg.clone(), table.dim())?;
    let mut inputs: BTreeMap<&str, Array2<f64>> = BTreeMap::new();
    for c in &classes {
        for p in &groups[c] {
            inputs.insert(&p.id, model.encoder.input(table, &ItemKey::problem(&p.id))?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut adam = AdamState::new(cfg.adam);
    let mut log = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let mut picked: Vec<&String> = classes.choose_multiple(&mut rng, n_way).collect();
        picked.sort();
        let mut support: Vec<Vec<(Array1<f64>, EncoderCache)>> = Vec::new();
        let mut queries: Vec<(Array1<f64>, EncoderCache, usize)> = Vec::new();
        for (k, c) in picked.iter().enumerate() {
            let mut pool: Vec<&Problem> = groups[*c].clone();
            pool.shuffle(&mut rng);
            let mut s = Vec::with_capacity(cfg.support);
            for (j, p) in pool.iter().take(need).enumerate() {
                let (v, cache) = model.encoder.forward(inputs[p.id.as_str()].view())?;
                if j < cfg.support {
                    s.push((v, cache));
                } else {
                    queries.push((v, cache, k));
                }
            }
            support.push(s);
        }
        let dim = model.encoder.output_dim();
        let mut protos = Array2::zeros((n_way, dim));
        for (k, s) in support.iter().enumerate() {
            let rows: Vec<Array1<f64>> = s.iter().map(|(v, _)| v.clone()).collect();
            protos.row_mut(k).assign(&mean_rows(&rows));
        }
        let mut qm = Array2::zeros((queries.len(), dim));
        for (i, (v, _, _)) in queries.iter().enumerate() {
            qm.row_mut(i).assign(v);
        }
        let labels: Vec<usize> = queries.iter().map(|q| q.2).collect();
        let correct = (0..queries.len())
            .filter(|&i| {
                let d = |k: usize| (&qm.row(i) - &protos.row(k)).mapv(|x| x * x).sum();
                (0..n_way).min_by(|&a, &b| d(a).total_cmp(&d(b))) == Some(labels[i])
            })
            .count();
        let out = prototype_loss(qm.view(), &labels, protos.view())?;
        let mut grad = zeros_like(&model.encoder);
        for (i, (_, cache, _)) in queries.iter().enumerate() {
            model.encoder.backward(cache, out.d_queries.row(i), &mut grad);
        }
        for (k, s) in support.iter().enumerate() {
            let d = out.d_prototypes.row(k).to_owned() / s.len() as f64;
            for (_, cache) in s {
                model.encoder.backward(cache, d.view(), &mut grad);
            }
        }
        adam_step(&mut model.encoder, &grad, &mut adam)?;
        log.push(EpisodeLog {
            episode,
            loss: out.loss,
            query_accuracy: correct as f64 / queries.len() as f64,
            classes: picked.iter().map(|c| (*c).clone()).collect(),
        });
    }
    Ok((model, log))
}

pub(crate) fn encode_all<'a>(
    model: &ProtoModel,
    table: &EmbeddingTable,
    ids: impl Iterator<Item = &'a str>,
) -> Result<BTreeMap<String, Array1<f64>>> {
    ids.map(|id| Ok((id.to_owned(), model.encode(table, id)?))).collect()
}

pub(crate) fn stack(rows: &[&Array1<f64>]) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal lengths")
}
