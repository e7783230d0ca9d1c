//! Text encoders shared by the concept and unknown models.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingTable, ItemKey};
use crate::error::{Error, Result};
use crate::nn::{BiRnn, BiRnnCache, CellKind, ConvCache, ConvEncoder, Module};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Bow,
    Cnn,
    Lstm,
    Gru,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(EncoderKind::Bow),
            "cnn" => Ok(EncoderKind::Cnn),
            "lstm" => Ok(EncoderKind::Lstm),
            "gru" => Ok(EncoderKind::Gru),
            _ => Err(Error::invalid(format!("unknown encoder kind {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub widths: Vec<usize>,
    pub kernels: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Cnn,
            widths: vec![3, 4, 5, 6],
            kernels: 192,
            hidden: 384,
        }
    }
}

impl EncoderConfig {
    pub fn of_kind(kind: EncoderKind) -> Self {
        EncoderConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self.kind {
            EncoderKind::Bow => input_dim,
            EncoderKind::Cnn => self.widths.len() * self.kernels,
            EncoderKind::Lstm | EncoderKind::Gru => 2 * self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextEncoder {
    /// Mean-pooled embedding, no parameters.
    Bow { dim: usize },
    Cnn(ConvEncoder),
    Rnn(BiRnn),
}

#[derive(Debug, Clone)]
pub enum EncoderCache {
    Bow,
    Cnn(ConvCache),
    Rnn(BiRnnCache),
}

impl TextEncoder {
    pub fn new<R: Rng>(rng: &mut R, cfg: &EncoderConfig, dim: usize) -> Result<Self> {
        Ok(match cfg.kind {
            EncoderKind::Bow => TextEncoder::Bow { dim },
            EncoderKind::Cnn => TextEncoder::Cnn(ConvEncoder::new(rng, dim, &cfg.widths, cfg.kernels)?),
            EncoderKind::Lstm => TextEncoder::Rnn(BiRnn::new(rng, CellKind::Lstm, dim, cfg.hidden)?),
            EncoderKind::Gru => TextEncoder::Rnn(BiRnn::new(rng, CellKind::Gru, dim, cfg.hidden)?),
        })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TextEncoder::Bow { dim } => *dim,
            TextEncoder::Cnn(c) => c.output_dim(),
            TextEncoder::Rnn(r) => r.output_dim(),
        }
    }

    pub fn is_bow(&self) -> bool {
        matches!(self, TextEncoder::Bow { .. })
    }

    /// What `forward` consumes for `key`: a 1-row pooled vector for bag of
    /// words, the token matrix otherwise.
    pub fn input(&self, table: &EmbeddingTable, key: &ItemKey) -> Result<Array2<f64>> {
        if self.is_bow() {
            Ok(table.pooled(key)?.insert_axis(Axis(0)))
        } else {
            table.token_matrix(key)
        }
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<(Array1<f64>, EncoderCache)> {
        match self {
            TextEncoder::Bow { dim } => {
                if input.ncols() != *dim {
                    return Err(Error::shape(format!("bow expects dim {dim}, got {}", input.ncols())));
                }
                let v = input.mean_axis(Axis(0)).ok_or_else(|| Error::invalid("empty encoder input"))?;
                Ok((v, EncoderCache::Bow))
            }
            TextEncoder::Cnn(c) => c.forward(input).map(|(v, k)| (v, EncoderCache::Cnn(k))),
            TextEncoder::Rnn(r) => r.forward(input).map(|(v, k)| (v, EncoderCache::Rnn(k))),
        }
    }

    pub fn backward(&self, cache: &EncoderCache, dout: ArrayView1<'_, f64>, grad: &mut TextEncoder) {
        match (self, cache, grad) {
            (TextEncoder::Cnn(c), EncoderCache::Cnn(k), TextEncoder::Cnn(g)) => {
                c.backward(k, dout, g, false);
            }
            (TextEncoder::Rnn(r), EncoderCache::Rnn(k), TextEncoder::Rnn(g)) => {
                r.backward(k, dout, g, false);
            }
            _ => {}
        }
    }
}

impl Module for TextEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match self {
            TextEncoder::Bow { .. } => {}
            TextEncoder::Cnn(c) => c.visit(prefix, f),
            TextEncoder::Rnn(r) => r.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            TextEncoder::Bow { .. } => {}
            TextEncoder::Cnn(c) => c.visit_mut(prefix, f),
            TextEncoder::Rnn(r) => r.visit_mut(prefix, f),
        }
    }
}
