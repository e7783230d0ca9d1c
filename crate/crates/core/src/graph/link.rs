use std::collections::{BTreeMap, HashSet};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Gcn, HeteroGraph, NodeKind, Relation};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::nn::{adam_step, bce_with_logits, sigmoid, zeros_like, AdamConfig, AdamState, Checkpoint, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Keep dev/test problem-has-type edges as message-passing structure.
    pub include_eval_types: bool,
    /// Start from all-zero parameters instead of Glorot init.
    pub zero_init: bool,
    pub adam: AdamConfig,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            hidden: 100,
            layers: 3,
            epochs: 200,
            seed: 0,
            include_eval_types: false,
            zero_init: false,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_pos_mean: f64,
    pub train_neg_mean: f64,
    /// Mean score of held-out problem-has-type edges; absent without dev edges.
    pub dev_pos_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub gcn: Gcn,
    pub config: LinkConfig,
    pub log: Vec<EpochLog>,
}

pub const LINK_KIND: &str = "gcn-link";

impl LinkModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: LINK_KIND.into(),
            config: json!({"model": self.config, "input_dim": self.gcn.layers[0].input_dim()}),
            params: ParamSet::capture(&self.gcn, self.config.seed),
            log: json!({ "epochs": self.log }),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != LINK_KIND {
            return Err(Error::Format(format!("expected a {LINK_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: LinkConfig = serde_json::from_value(ck.config["model"].clone())?;
        let input_dim: usize = serde_json::from_value(ck.config["input_dim"].clone())?;
        let log: Vec<EpochLog> = serde_json::from_value(ck.log["epochs"].clone())?;
        let mut gcn = Gcn::zeros(input_dim, config.hidden, config.layers);
        ck.params.restore(&mut gcn)?;
        Ok(LinkModel { gcn, config, log })
    }
}

pub fn link_score(h: &Array2<f64>, u: usize, v: usize) -> f64 {
    sigmoid(h.row(u).dot(&h.row(v)))
}

/// Uniform (problem, concept) pairs that are not problem-has-type edges in
/// any split.
fn sample_negatives(
    rng: &mut ChaCha8Rng,
    problems: &[usize],
    concepts: &[usize],
    edges: &HashSet<(usize, usize)>,
    n: usize,
) -> Vec<(usize, usize)> {
    let capacity = problems.len() * concepts.len();
    let free = capacity.saturating_sub(problems.iter().map(|p| concepts.iter().filter(|&&c| edges.contains(&(*p, c))).count()).sum());
    if free == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = problems[rng.random_range(0..problems.len())];
        let c = concepts[rng.random_range(0..concepts.len())];
        if !edges.contains(&(p, c)) {
            out.push((p, c));
        }
    }
    out
}

/// Trains the GCN on problem-has-type link prediction, full batch, with a
/// fresh set of negatives each epoch.
pub fn train_link_prediction(graph: &HeteroGraph, cfg: &LinkConfig) -> Result<LinkModel> {
    let adj = graph.structure(cfg.include_eval_types);
    let mut all_types = HashSet::new();
    let mut pos = Vec::new();
    let mut dev = Vec::new();
    for e in graph.edges.iter().filter(|e| e.relation == Relation::ProblemHasType) {
        let (p, c) = if graph.nodes[e.u].kind == NodeKind::Problem { (e.u, e.v) } else { (e.v, e.u) };
        all_types.insert((p, c));
        match graph.nodes[p].split {
            Some(Split::Train) => pos.push((p, c)),
            Some(Split::Dev) => dev.push((p, c)),
            _ => {}
        }
    }
    if pos.is_empty() {
        return Err(Error::invalid("no train problem-has-type edges"));
    }
    let train_problems: Vec<usize> = {
        let mut v: Vec<usize> = pos.iter().map(|&(p, _)| p).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let concepts: Vec<usize> = (0..graph.len()).filter(|&i| graph.nodes[i].kind == NodeKind::Concept).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gcn = if cfg.zero_init {
        Gcn::zeros(graph.features.ncols(), cfg.hidden, cfg.layers)
    } else {
        Gcn::new(&mut rng, graph.features.ncols(), cfg.hidden, cfg.layers)?
    };
    let mut adam = AdamState::new(cfg.adam);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let neg = sample_negatives(&mut rng, &train_problems, &concepts, &all_types, pos.len());
        let (h, cache) = gcn.forward(&adj, graph.features.view())?;
        let n_pairs = (pos.len() + neg.len()) as f64;
        let mut dh = Array2::zeros(h.raw_dim());
        let mut loss = 0.0;
        let (mut pos_sum, mut neg_sum) = (0.0, 0.0);
        for (label, pairs) in [(1.0, &pos), (0.0, &neg)] {
            for &(u, v) in pairs.iter() {
                let z = h.row(u).dot(&h.row(v));
                let (l, g) = bce_with_logits(z, label);
                loss += l / n_pairs;
                let g = g / n_pairs;
                let (hu, hv) = (h.row(u).to_owned(), h.row(v).to_owned());
                dh.row_mut(u).scaled_add(g, &hv);
                dh.row_mut(v).scaled_add(g, &hu);
                if label == 1.0 {
                    pos_sum += sigmoid(z);
                } else {
                    neg_sum += sigmoid(z);
                }
            }
        }
        let dev_pos_mean =
            (!dev.is_empty()).then(|| dev.iter().map(|&(u, v)| link_score(&h, u, v)).sum::<f64>() / dev.len() as f64);
        log.push(EpochLog {
            epoch,
            loss,
            train_pos_mean: pos_sum / pos.len() as f64,
            train_neg_mean: if neg.is_empty() { 0.0 } else { neg_sum / neg.len() as f64 },
            dev_pos_mean,
        });
        let mut grad = zeros_like(&gcn);
        gcn.backward(&adj, &cache, dh.view(), &mut grad, false);
        adam_step(&mut gcn, &grad, &mut adam)?;
    }
    Ok(LinkModel {
        gcn,
        config: cfg.clone(),
        log,
    })
}

/// Final-layer embedding of a problem node.
pub fn context_of(graph: &HeteroGraph, model: &LinkModel, problem_id: &str) -> Result<Array1<f64>> {
    let i = graph
        .node(NodeKind::Problem, problem_id)
        .ok_or_else(|| Error::NotFound(format!("problem node {problem_id}")))?;
    let (h, _) = model.gcn.forward(&graph.structure(model.config.include_eval_types), graph.features.view())?;
    Ok(h.row(i).to_owned())
}

/// Context vectors of every problem node.
pub fn contexts(graph: &HeteroGraph, model: &LinkModel) -> Result<BTreeMap<String, Array1<f64>>> {
    let (h, _) = model.gcn.forward(&graph.structure(model.config.include_eval_types), graph.features.view())?;
    Ok(graph
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::Problem)
        .map(|(i, n)| (n.id.clone(), h.row(i).to_owned()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy;
    use super::super::build_graph;
    use super::*;
    use crate::embed::fake_embeddings;

    fn toy_graph() -> HeteroGraph {
        let (corpus, concepts) = toy();
        let table = fake_embeddings(&corpus, &concepts, 7, 16).unwrap();
        build_graph(&corpus, &concepts, &table).unwrap()
    }

    fn small_cfg() -> LinkConfig {
        LinkConfig {
            hidden: 8,
            epochs: 200,
            seed: 3,
            ..LinkConfig::default()
        }
    }

    #[test]
    fn zero_init_scores_one_half() {
        let g = toy_graph();
        let cfg = LinkConfig {
            zero_init: true,
            epochs: 1,
            ..small_cfg()
        };
        let m = train_link_prediction(&g, &cfg).unwrap();
        assert_eq!(m.log[0].train_pos_mean, 0.5);
        assert_eq!(m.log[0].train_neg_mean, 0.5);
    }

    #[test]
    fn positives_outrank_negatives_after_training() {
        let g = toy_graph();
        let m = train_link_prediction(&g, &small_cfg()).unwrap();
        let last = m.log.last().unwrap();
        assert!(last.train_pos_mean > last.train_neg_mean, "{last:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let g = toy_graph();
        let a = train_link_prediction(&g, &small_cfg()).unwrap();
        let b = train_link_prediction(&g, &small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn context_errors_for_concepts() {
        let g = toy_graph();
        let m = train_link_prediction(&g, &LinkConfig { epochs: 2, ..small_cfg() }).unwrap();
        assert!(context_of(&g, &m, "mean").is_err());
        let all = contexts(&g, &m).unwrap();
        assert_eq!(context_of(&g, &m, "p1").unwrap(), all["p1"]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = toy_graph();
        let m = train_link_prediction(&g, &LinkConfig { epochs: 3, ..small_cfg() }).unwrap();
        let bytes = m.to_checkpoint().to_bytes().unwrap();
        let back = LinkModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn score_is_symmetric() {
        let h = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1 - 0.5);
        assert_eq!(link_score(&h, 0, 2), link_score(&h, 2, 0));
    }
}
