use std::collections::BTreeMap;

use indexmap::IndexMap;
use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::SentenceInstance;
use crate::corpus::{Corpus, Problem};
use crate::embed::{EmbeddingTable, ItemKey};
use crate::encoder::{EncoderCache, EncoderConfig, EncoderKind, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, bce_with_logits, join, sigmoid, zeros_like, AdamConfig, AdamState, Checkpoint, Dropout, Mlp,
    Module, ParamSet, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "bow")]
    Bow,
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "cnn+graph")]
    CnnGraph,
}

impl std::str::FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ContextKind::None),
            "bow" => Ok(ContextKind::Bow),
            "cnn" => Ok(ContextKind::Cnn),
            "cnn+graph" => Ok(ContextKind::CnnGraph),
            _ => Err(Error::invalid(format!("unknown context kind {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnknownConfig {
    pub context: ContextKind,
    pub sentence: EncoderKind,
    /// Put the hidden ReLU stack in front of the output unit.
    pub mlp_head: bool,
    pub widths: Vec<usize>,
    pub kernels: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for UnknownConfig {
    fn default() -> Self {
        UnknownConfig {
            context: ContextKind::Cnn,
            sentence: EncoderKind::Cnn,
            mlp_head: false,
            widths: vec![1, 2],
            kernels: 192,
            hidden: 384,
            mlp_hidden: 512,
            mlp_layers: 3,
            epochs: 20,
            dropout: 0.2,
            seed: 4,
            adam: AdamConfig::default(),
        }
    }
}

impl UnknownConfig {
    pub const PRESETS: [&'static str; 7] =
        ["maxent", "mlp", "cnn", "cnn_nocontext", "cnn_graph", "cnn_graph_lstm", "cnn_graph_gru"];

    pub fn preset(name: &str) -> Result<Self> {
        let d = UnknownConfig::default();
        Ok(match name {
            "maxent" => UnknownConfig {
                context: ContextKind::Bow,
                sentence: EncoderKind::Bow,
                epochs: 30,
                seed: 3,
                ..d
            },
            "mlp" => UnknownConfig {
                context: ContextKind::Bow,
                sentence: EncoderKind::Bow,
                mlp_head: true,
                epochs: 30,
                seed: 10,
                ..d
            },
            "cnn" => d,
            "cnn_nocontext" => UnknownConfig {
                context: ContextKind::None,
                epochs: 30,
                seed: 0,
                ..d
            },
            "cnn_graph" => UnknownConfig {
                context: ContextKind::CnnGraph,
                epochs: 30,
                seed: 0,
                ..d
            },
            "cnn_graph_lstm" => UnknownConfig {
                context: ContextKind::CnnGraph,
                sentence: EncoderKind::Lstm,
                epochs: 30,
                seed: 10000,
                ..d
            },
            "cnn_graph_gru" => UnknownConfig {
                context: ContextKind::CnnGraph,
                sentence: EncoderKind::Gru,
                epochs: 30,
                seed: 10,
                ..d
            },
            _ => return Err(Error::invalid(format!("unknown unknown-model preset {name}"))),
        })
    }

    fn encoder(&self, kind: EncoderKind) -> EncoderConfig {
        EncoderConfig {
            kind,
            widths: self.widths.clone(),
            kernels: self.kernels,
            hidden: self.hidden,
        }
    }

    /// Dimension of the context vector c_i.
    pub fn context_dim(&self, input_dim: usize, graph_dim: usize) -> usize {
        match self.context {
            ContextKind::None => 0,
            ContextKind::Bow => input_dim,
            ContextKind::Cnn => self.encoder(EncoderKind::Cnn).output_dim(input_dim),
            ContextKind::CnnGraph => self.encoder(EncoderKind::Cnn).output_dim(input_dim) + graph_dim,
        }
    }

    pub fn sentence_dim(&self, input_dim: usize) -> usize {
        self.encoder(self.sentence).output_dim(input_dim)
    }
}

/// p_u = sigmoid(head([c_i; x_ij])).
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownModel {
    pub config: UnknownConfig,
    pub input_dim: usize,
    pub context: Option<TextEncoder>,
    pub sentence: TextEncoder,
    /// Frozen graph contexts by problem id (cnn+graph only).
    pub graph_context: BTreeMap<String, Array1<f64>>,
    pub head: Mlp,
}

pub const UNKNOWN_KIND: &str = "unknown-model";

impl Module for UnknownModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(c) = &self.context {
            c.visit(&join(prefix, "context"), f);
        }
        self.sentence.visit(&join(prefix, "sentence"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(c) = &mut self.context {
            c.visit_mut(&join(prefix, "context"), f);
        }
        self.sentence.visit_mut(&join(prefix, "sentence"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub sentence_index: usize,
    pub text: String,
    pub p_u: f64,
    pub flagged: bool,
}

struct ProblemInputs {
    context: Option<Array2<f64>>,
    sentences: Vec<Array2<f64>>,
}

impl UnknownModel {
    pub fn new(
        config: UnknownConfig,
        input_dim: usize,
        graph_context: Option<BTreeMap<String, Array1<f64>>>,
    ) -> Result<Self> {
        let graph_context = graph_context.unwrap_or_default();
        let graph_dim = match config.context {
            ContextKind::CnnGraph => {
                let d = graph_context
                    .values()
                    .next()
                    .ok_or_else(|| Error::invalid("cnn+graph context needs trained graph contexts"))?
                    .len();
                if graph_context.values().any(|v| v.len() != d) {
                    return Err(Error::shape("graph contexts differ in length"));
                }
                d
            }
            _ => {
                if !graph_context.is_empty() {
                    return Err(Error::invalid("graph contexts given to a model without graph context"));
                }
                0
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let context = match config.context {
            ContextKind::None => None,
            ContextKind::Bow => Some(TextEncoder::Bow { dim: input_dim }),
            ContextKind::Cnn | ContextKind::CnnGraph => {
                Some(TextEncoder::new(&mut rng, &config.encoder(EncoderKind::Cnn), input_dim)?)
            }
        };
        let sentence = TextEncoder::new(&mut rng, &config.encoder(config.sentence), input_dim)?;
        let head_in = config.context_dim(input_dim, graph_dim) + sentence.output_dim();
        let layers = if config.mlp_head { config.mlp_layers } else { 0 };
        let head = Mlp::new(&mut rng, head_in, config.mlp_hidden, layers, 1);
        Ok(UnknownModel {
            config,
            input_dim,
            context,
            sentence,
            graph_context,
            head,
        })
    }

    pub fn context_dim(&self) -> usize {
        self.head.input_dim() - self.sentence.output_dim()
    }

    fn inputs(&self, table: &EmbeddingTable, problem: &Problem) -> Result<ProblemInputs> {
        let context = match &self.context {
            Some(enc) => Some(enc.input(table, &ItemKey::problem(&problem.id))?),
            None => None,
        };
        let sentences = (0..problem.sentence_count())
            .map(|j| self.sentence.input(table, &ItemKey::sentence(&problem.id, j)))
            .collect::<Result<_>>()?;
        Ok(ProblemInputs { context, sentences })
    }

    fn context_forward(
        &self,
        problem_id: &str,
        input: Option<&Array2<f64>>,
    ) -> Result<(Array1<f64>, Option<EncoderCache>)> {
        let (mut c, cache) = match (&self.context, input) {
            (Some(enc), Some(x)) => {
                let (v, k) = enc.forward(x.view())?;
                (v, Some(k))
            }
            _ => (Array1::zeros(0), None),
        };
        if self.config.context == ContextKind::CnnGraph {
            let g = self
                .graph_context
                .get(problem_id)
                .ok_or_else(|| Error::NotFound(format!("graph context for problem {problem_id}")))?;
            c = concatenate![Axis(0), c, g.view()];
        }
        Ok((c, cache))
    }

    fn logit(&self, ctx: &Array1<f64>, sentence: &Array2<f64>) -> Result<f64> {
        let (x, _) = self.sentence.forward(sentence.view())?;
        let input = concatenate![Axis(0), ctx.view(), x.view()];
        Ok(self.head.forward(input.view())?.0[0])
    }

    /// Logit of every sentence of `problem`, context computed once.
    pub fn logits(&self, table: &EmbeddingTable, problem: &Problem) -> Result<Vec<f64>> {
        let inputs = self.inputs(table, problem)?;
        let (ctx, _) = self.context_forward(&problem.id, inputs.context.as_ref())?;
        inputs.sentences.iter().map(|s| self.logit(&ctx, s)).collect()
    }

    pub fn to_checkpoint(&self, epoch_loss: &[f64]) -> Checkpoint {
        let mut params = ParamSet::capture(self, self.config.seed);
        let ids: Vec<&String> = self.graph_context.keys().collect();
        if let Some(first) = self.graph_context.values().next() {
            let data = self.graph_context.values().flat_map(|v| v.iter().copied()).collect();
            params.tensors.insert(
                GRAPH_TENSOR.into(),
                Tensor {
                    shape: vec![ids.len(), first.len()],
                    data,
                },
            );
        }
        Checkpoint {
            kind: UNKNOWN_KIND.into(),
            config: json!({"model": self.config, "input_dim": self.input_dim, "graph_ids": ids}),
            params,
            log: json!({ "epoch_loss": epoch_loss }),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != UNKNOWN_KIND {
            return Err(Error::Format(format!("expected a {UNKNOWN_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: UnknownConfig = serde_json::from_value(ck.config["model"].clone())?;
        let input_dim: usize = serde_json::from_value(ck.config["input_dim"].clone())?;
        let ids: Vec<String> = serde_json::from_value(ck.config["graph_ids"].clone())?;
        let mut params = ck.params.clone();
        let graph = match params.tensors.shift_remove(GRAPH_TENSOR) {
            Some(t) => {
                if t.shape.len() != 2 || t.shape[0] != ids.len() {
                    return Err(Error::shape("graph context tensor does not match its ids"));
                }
                let d = t.shape[1];
                let m: BTreeMap<String, Array1<f64>> = ids
                    .into_iter()
                    .enumerate()
                    .map(|(i, id)| (id, Array1::from(t.data[i * d..(i + 1) * d].to_vec())))
                    .collect();
                Some(m)
            }
            None => None,
        };
        let mut m = UnknownModel::new(config, input_dim, graph)?;
        params.restore(&mut m)?;
        Ok(m)
    }
}

const GRAPH_TENSOR: &str = "graph_context";

pub fn score_sentence(model: &UnknownModel, table: &EmbeddingTable, problem: &Problem, j: usize) -> Result<f64> {
    let s = problem
        .sentences
        .get(j)
        .ok_or_else(|| Error::NotFound(format!("sentence {j} of problem {}", problem.id)))?;
    let inputs = ProblemInputs {
        context: match &model.context {
            Some(enc) => Some(enc.input(table, &ItemKey::problem(&problem.id))?),
            None => None,
        },
        sentences: vec![model.sentence.input(table, &ItemKey::sentence(&problem.id, s.index))?],
    };
    let (ctx, _) = model.context_forward(&problem.id, inputs.context.as_ref())?;
    Ok(sigmoid(model.logit(&ctx, &inputs.sentences[0])?))
}

/// Per-sentence scores in sentence order, flagged when above 0.5.
pub fn extract_unknowns(model: &UnknownModel, table: &EmbeddingTable, problem: &Problem) -> Result<Vec<SentenceScore>> {
    Ok(model
        .logits(table, problem)?
        .into_iter()
        .zip(&problem.sentences)
        .map(|(z, s)| {
            let p = sigmoid(z);
            SentenceScore {
                sentence_index: s.index,
                text: s.text.clone(),
                p_u: p,
                flagged: p > 0.5,
            }
        })
        .collect())
}

pub struct TrainedUnknown {
    pub model: UnknownModel,
    pub epoch_loss: Vec<f64>,
}

/// Adam over binary cross-entropy, one update per problem with the
/// context encoded once and gradients summed over its sentences.
pub fn train_unknown_model(
    dataset: &[SentenceInstance],
    corpus: &Corpus,
    table: &EmbeddingTable,
    cfg: &UnknownConfig,
    graph_context: Option<BTreeMap<String, Array1<f64>>>,
) -> Result<TrainedUnknown> {
    if dataset.is_empty() {
        return Err(Error::invalid("unknown-extraction dataset is empty"));
    }
    let mut model = UnknownModel::new(cfg.clone(), table.dim(), graph_context)?;
    let mut groups: IndexMap<&str, Vec<(usize, f64)>> = IndexMap::new();
    for inst in dataset {
        groups
            .entry(inst.problem_id.as_str())
            .or_default()
            .push((inst.sentence_index, inst.y as f64));
    }
    let mut batches = Vec::with_capacity(groups.len());
    for (id, items) in &groups {
        let p = corpus
            .problem(id)
            .ok_or_else(|| Error::NotFound(format!("problem {id}")))?;
        if let Some(&(j, _)) = items.iter().find(|(j, _)| *j >= p.sentence_count()) {
            return Err(Error::invalid(format!("problem {id} has no sentence {j}")));
        }
        batches.push((p, model.inputs(table, p)?, items.clone()));
    }

    let dropout = Dropout::new(cfg.dropout);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1b5_4a32_d192_ed03);
    let mut adam = AdamState::new(cfg.adam);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let enc_ctx_dim = model.context.as_ref().map_or(0, TextEncoder::output_dim);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &b in &order {
            let (p, inputs, items) = &batches[b];
            let mut grad = zeros_like(&model);
            let (ctx, ctx_cache) = model.context_forward(&p.id, inputs.context.as_ref())?;
            let cmask = dropout.mask(&mut rng, ctx.len());
            let ctx = &ctx * &cmask;
            let cd = ctx.len();
            let mut dctx: Array1<f64> = Array1::zeros(cd);
            for &(j, y) in items {
                let (x, xcache) = model.sentence.forward(inputs.sentences[j].view())?;
                let xmask = dropout.mask(&mut rng, x.len());
                let x = &x * &xmask;
                let input = concatenate![Axis(0), ctx.view(), x.view()];
                let (z, hcache) = model.head.forward(input.view())?;
                let (l, g) = bce_with_logits(z[0], y);
                total += l;
                let din = model.head.backward(&hcache, ndarray::aview1(&[g]), &mut grad.head);
                dctx += &din.slice(s![..cd]);
                let dx = &din.slice(s![cd..]) * &xmask;
                model.sentence.backward(&xcache, dx.view(), &mut grad.sentence);
            }
            if let (Some(enc), Some(cache), Some(genc)) = (&model.context, &ctx_cache, grad.context.as_mut()) {
                let d = &dctx * &cmask;
                enc.backward(cache, d.slice(s![..enc_ctx_dim]), genc);
            }
            adam_step(&mut model, &grad, &mut adam)?;
        }
        epoch_loss.push(total / dataset.len() as f64);
    }
    Ok(TrainedUnknown { model, epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Answer;
    use crate::embed::fake_embeddings;
    use crate::nn::param_count;

    fn all_configs() -> Vec<UnknownConfig> {
        let mut out = Vec::new();
        for context in [ContextKind::None, ContextKind::Bow, ContextKind::Cnn, ContextKind::CnnGraph] {
            for sentence in [EncoderKind::Bow, EncoderKind::Cnn, EncoderKind::Lstm, EncoderKind::Gru] {
                out.push(UnknownConfig {
                    context,
                    sentence,
                    widths: vec![1, 2],
                    kernels: 3,
                    hidden: 2,
                    ..UnknownConfig::default()
                });
            }
        }
        out
    }

    #[test]
    fn head_input_bookkeeping_for_all_configs() {
        let graph = BTreeMap::from([("p".to_string(), Array1::zeros(5))]);
        for cfg in all_configs() {
            let g = (cfg.context == ContextKind::CnnGraph).then(|| graph.clone());
            let m = UnknownModel::new(cfg.clone(), 4, g).unwrap();
            let gd = if cfg.context == ContextKind::CnnGraph { 5 } else { 0 };
            assert_eq!(m.head.input_dim(), cfg.context_dim(4, gd) + cfg.sentence_dim(4), "{cfg:?}");
            assert_eq!(m.context_dim(), cfg.context_dim(4, gd));
        }
    }

    #[test]
    fn maxent_has_1537_parameters() {
        let m = UnknownModel::new(UnknownConfig::preset("maxent").unwrap(), 768, None).unwrap();
        assert_eq!(param_count(&m), 1_537);
        let mlp = UnknownModel::new(UnknownConfig::preset("mlp").unwrap(), 768, None).unwrap();
        assert_eq!(param_count(&mlp), 1_312_769);
    }

    #[test]
    fn cnn_vectors_are_384_wide() {
        let m = UnknownModel::new(UnknownConfig::preset("cnn").unwrap(), 16, None).unwrap();
        assert_eq!(m.context_dim(), 384);
        assert_eq!(m.sentence.output_dim(), 384);
    }

    #[test]
    fn graph_context_required() {
        assert!(UnknownModel::new(UnknownConfig::preset("cnn_graph").unwrap(), 8, None).is_err());
    }

    fn tiny() -> (Corpus, EmbeddingTable) {
        let p = Problem::new("p", "Alpha beta. What is the probability that it rains?", ["mean"], "a").unwrap();
        let c = Corpus::new(
            vec![p],
            vec![Answer {
                id: "a".into(),
                problem_id: "p".into(),
                text: "Half.".into(),
            }],
        )
        .unwrap();
        let t = fake_embeddings(&c, &[], 3, 2).unwrap();
        (c, t)
    }

    #[test]
    fn closed_form_scores() {
        let (c, t) = tiny();
        let p = c.problem("p").unwrap();
        let mut m = UnknownModel::new(UnknownConfig::preset("maxent").unwrap(), 2, None).unwrap();
        m.head.out.w.fill(0.0);
        m.head.out.b.fill(0.0);
        assert_eq!(score_sentence(&m, &t, p, 0).unwrap(), 0.5);
        m.head.out.b[0] = 3f64.ln();
        assert!((score_sentence(&m, &t, p, 1).unwrap() - 0.75).abs() < 1e-15);
        m.head.out.b[0] = -10.0;
        assert!(extract_unknowns(&m, &t, p).unwrap().iter().all(|s| !s.flagged));
    }

    #[test]
    fn extraction_agrees_with_scoring() {
        let (c, t) = tiny();
        let p = c.problem("p").unwrap();
        let m = UnknownModel::new(
            UnknownConfig {
                kernels: 4,
                ..UnknownConfig::default()
            },
            2,
            None,
        )
        .unwrap();
        for s in extract_unknowns(&m, &t, p).unwrap() {
            assert_eq!(s.p_u, score_sentence(&m, &t, p, s.sentence_index).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip_with_graph() {
        let graph = BTreeMap::from([
            ("p".to_string(), Array1::from(vec![0.5, -1.0])),
            ("q".to_string(), Array1::from(vec![2.0, 0.0])),
        ]);
        let cfg = UnknownConfig {
            context: ContextKind::CnnGraph,
            sentence: EncoderKind::Gru,
            kernels: 2,
            hidden: 2,
            ..UnknownConfig::default()
        };
        let m = UnknownModel::new(cfg, 3, Some(graph)).unwrap();
        let ck = Checkpoint::from_bytes(&m.to_checkpoint(&[0.1]).to_bytes().unwrap()).unwrap();
        assert_eq!(UnknownModel::from_checkpoint(&ck).unwrap(), m);
    }
}
