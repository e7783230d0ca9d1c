//! Heterogeneous concept/problem/answer graph, the GCN over it and
//! problem-has-type link prediction.

mod gcn;
mod link;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Concept, Corpus, Split};
use crate::embed::{EmbeddingTable, ItemKey};
use crate::error::{Error, Result};

pub use gcn::{Activation, Gcn, GcnCache};
pub(crate) use gcn::gcn_check_instance;
pub use link::{context_of, contexts, link_score, train_link_prediction, EpochLog, LinkConfig, LinkModel, LINK_KIND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Concept,
    Problem,
    Answer,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Concept => "concept",
            NodeKind::Problem => "problem",
            NodeKind::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "problem-has-type")]
    ProblemHasType,
    #[serde(rename = "problem-has-answer")]
    ProblemHasAnswer,
    #[serde(rename = "same-section-as")]
    SameSectionAs,
    #[serde(rename = "mentioned-in-before-chapters")]
    MentionedInBeforeChapters,
    #[serde(rename = "same-chapter-as")]
    SameChapterAs,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::ProblemHasType,
        Relation::ProblemHasAnswer,
        Relation::SameSectionAs,
        Relation::MentionedInBeforeChapters,
        Relation::SameChapterAs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::ProblemHasType => "problem-has-type",
            Relation::ProblemHasAnswer => "problem-has-answer",
            Relation::SameSectionAs => "same-section-as",
            Relation::MentionedInBeforeChapters => "mentioned-in-before-chapters",
            Relation::SameChapterAs => "same-chapter-as",
        }
    }

    /// Endpoint kinds (unordered) the relation may connect.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        match self {
            Relation::ProblemHasType => (NodeKind::Problem, NodeKind::Concept),
            Relation::ProblemHasAnswer => (NodeKind::Problem, NodeKind::Answer),
            _ => (NodeKind::Concept, NodeKind::Concept),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    /// Split of the problem node itself, or of the problem an answer belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Undirected edge, stored once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// One feature row per node.
    pub features: Array2<f64>,
    index: HashMap<(NodeKind, String), usize>,
}

impl HeteroGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != nodes.len() {
            return Err(Error::shape(format!(
                "{} nodes but {} feature rows",
                nodes.len(),
                features.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert((n.kind, n.id.clone()), i).is_some() {
                return Err(Error::Duplicate {
                    what: "graph node",
                    key: format!("{}:{}", n.kind.as_str(), n.id),
                });
            }
        }
        for e in &edges {
            let (a, b) = match (nodes.get(e.u), nodes.get(e.v)) {
                (Some(a), Some(b)) => (a.kind, b.kind),
                _ => return Err(Error::invalid("edge endpoint out of range")),
            };
            let (x, y) = e.relation.endpoints();
            if !((a, b) == (x, y) || (b, a) == (x, y)) || e.u == e.v {
                return Err(Error::invalid(format!(
                    "{} edge between {} and {}",
                    e.relation.as_str(),
                    a.as_str(),
                    b.as_str()
                )));
            }
        }
        Ok(HeteroGraph {
            nodes,
            edges,
            features,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, kind: NodeKind, id: &str) -> Option<usize> {
        self.index.get(&(kind, id.to_owned())).copied()
    }

    /// Neighbour lists including a self-loop on every node, over the edges
    /// accepted by `keep`.
    pub fn neighbourhoods(&self, keep: impl Fn(&Edge) -> bool) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = (0..self.len()).map(|i| vec![i]).collect();
        for e in self.edges.iter().filter(|e| keep(e)) {
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Message-passing structure used for training and context extraction.
    /// Problem-has-type edges of non-train problems are left out unless
    /// `include_eval_types` is set.
    pub fn structure(&self, include_eval_types: bool) -> Vec<Vec<usize>> {
        self.neighbourhoods(|e| include_eval_types || !self.is_eval_type_edge(e))
    }

    fn is_eval_type_edge(&self, e: &Edge) -> bool {
        e.relation == Relation::ProblemHasType
            && [e.u, e.v]
                .iter()
                .any(|&i| self.nodes[i].kind == NodeKind::Problem && self.nodes[i].split != Some(Split::Train))
    }

    pub fn count_nodes(&self) -> BTreeMap<NodeKind, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.kind).or_insert(0) += 1;
        }
        m
    }

    pub fn count_edges(&self) -> BTreeMap<Relation, usize> {
        let mut m = BTreeMap::new();
        for e in &self.edges {
            *m.entry(e.relation).or_insert(0) += 1;
        }
        m
    }

    /// `section,key,count` rows with node and edge totals.
    pub fn stats_csv(&self) -> String {
        let mut out = String::from("section,key,count\n");
        for (k, n) in self.count_nodes() {
            let _ = writeln!(out, "node,{},{n}", k.as_str());
        }
        let _ = writeln!(out, "node,total,{}", self.nodes.len());
        let edges = self.count_edges();
        for r in Relation::ALL {
            let _ = writeln!(out, "edge,{},{}", r.as_str(), edges.get(&r).copied().unwrap_or(0));
        }
        let _ = writeln!(out, "edge,total,{}", self.edges.len());
        out
    }

    /// Writes `nodes.jsonl` and `edges.jsonl` into `dir`.
    pub fn export_jsonl(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("nodes.jsonl");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        for (i, n) in self.nodes.iter().enumerate() {
            let line = serde_json::json!({"index": i, "id": n.id, "kind": n.kind, "split": n.split});
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = dir.join("edges.jsonl");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        for e in &self.edges {
            let line = serde_json::json!({
                "u": self.nodes[e.u].id, "u_kind": self.nodes[e.u].kind,
                "v": self.nodes[e.v].id, "v_kind": self.nodes[e.v].kind,
                "relation": e.relation,
            });
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Concept-concept relation implied by the textbook ordering, if any.
pub fn concept_relation(a: &Concept, b: &Concept) -> Relation {
    if a.chapter == b.chapter && a.section == b.section {
        Relation::SameSectionAs
    } else if a.chapter == b.chapter {
        Relation::SameChapterAs
    } else {
        Relation::MentionedInBeforeChapters
    }
}

/// Builds the graph with node order: concepts (by order_index), problems,
/// answers. Features are pooled embeddings from `table`.
pub fn build_graph(corpus: &Corpus, concepts: &[Concept], table: &EmbeddingTable) -> Result<HeteroGraph> {
    let mut concepts: Vec<&Concept> = concepts.iter().collect();
    concepts.sort_by_key(|c| c.order_index);
    let mut nodes = Vec::new();
    let mut keys = Vec::new();
    for c in &concepts {
        nodes.push(Node {
            id: c.id.clone(),
            kind: NodeKind::Concept,
            split: None,
        });
        keys.push(ItemKey::concept(&c.id));
    }
    let concept_at: HashMap<&str, usize> = concepts.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let p0 = nodes.len();
    for p in corpus.problems() {
        nodes.push(Node {
            id: p.id.clone(),
            kind: NodeKind::Problem,
            split: Some(p.split),
        });
        keys.push(ItemKey::problem(&p.id));
    }
    let a0 = nodes.len();
    let answer_at: HashMap<&str, usize> = corpus
        .answers()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), a0 + i))
        .collect();
    for a in corpus.answers() {
        nodes.push(Node {
            id: a.id.clone(),
            kind: NodeKind::Answer,
            split: corpus.problem(&a.problem_id).map(|p| p.split),
        });
        keys.push(ItemKey::answer(&a.id));
    }

    let mut edges = Vec::new();
    for (pi, p) in corpus.problems().iter().enumerate() {
        for tag in &p.concept_tags {
            let &c = concept_at
                .get(tag.as_str())
                .ok_or_else(|| Error::NotFound(format!("concept {tag} tagged on problem {}", p.id)))?;
            edges.push(Edge {
                u: p0 + pi,
                v: c,
                relation: Relation::ProblemHasType,
            });
        }
        let &a = answer_at
            .get(p.answer_id.as_str())
            .ok_or_else(|| Error::NotFound(format!("answer {} of problem {}", p.answer_id, p.id)))?;
        edges.push(Edge {
            u: p0 + pi,
            v: a,
            relation: Relation::ProblemHasAnswer,
        });
    }
    for i in 0..concepts.len() {
        for j in i + 1..concepts.len() {
            edges.push(Edge {
                u: i,
                v: j,
                relation: concept_relation(concepts[i], concepts[j]),
            });
        }
    }

    let mut features = Array2::zeros((nodes.len(), table.dim()));
    for (i, k) in keys.iter().enumerate() {
        features.row_mut(i).assign(&table.pooled(k)?);
    }
    HeteroGraph::new(nodes, edges, features)
}
