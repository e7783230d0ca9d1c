//! Token-level embedding tables and their on-disk format.
//!
//! Data file: the 8-byte magic `PUNKEMB1`, a little-endian `u32` dimension,
//! then row-major little-endian `f32` token rows. The JSON index sidecar
//! lists `{kind, id, sub_index, offset, n_tokens}` per item, where `offset`
//! is the byte offset of the item's first row in the data file.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Concept, Corpus};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PUNKEMB1";
pub const HEADER_LEN: usize = 12;
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Problem,
    Sentence,
    Answer,
    Concept,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemKey {
    pub kind: ItemKind,
    pub id: String,
    pub sub_index: Option<usize>,
}

impl ItemKey {
    pub fn problem(id: &str) -> Self {
        ItemKey {
            kind: ItemKind::Problem,
            id: id.to_owned(),
            sub_index: None,
        }
    }

    pub fn sentence(problem_id: &str, index: usize) -> Self {
        ItemKey {
            kind: ItemKind::Sentence,
            id: problem_id.to_owned(),
            sub_index: Some(index),
        }
    }

    pub fn answer(id: &str) -> Self {
        ItemKey {
            kind: ItemKind::Answer,
            id: id.to_owned(),
            sub_index: None,
        }
    }

    pub fn concept(id: &str) -> Self {
        ItemKey {
            kind: ItemKind::Concept,
            id: id.to_owned(),
            sub_index: None,
        }
    }
}

impl std::fmt::Display for ItemKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}:{}", self.kind, self.id)?;
        if let Some(i) = self.sub_index {
            write!(f, "#{i}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    n_tokens: usize,
    /// Index of the first float of the item in `data`.
    start: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    dim: usize,
    items: Vec<IndexItem>,
}

#[derive(Serialize, Deserialize)]
struct IndexItem {
    kind: ItemKind,
    id: String,
    sub_index: Option<usize>,
    offset: u64,
    n_tokens: usize,
}

/// An immutable-after-build table of token matrices keyed by item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: IndexMap<ItemKey, Entry>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be at least 1"));
        }
        Ok(EmbeddingTable {
            dim,
            entries: IndexMap::new(),
            data: Vec::new(),
        })
    }

    /// Builds a table from `(key, token matrix)` pairs, rejecting mixed dims
    /// and duplicate keys.
    pub fn from_items<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ItemKey, ArrayView2<'a, f32>)>,
    {
        let mut table: Option<EmbeddingTable> = None;
        for (key, rows) in items {
            let t = match &mut table {
                Some(t) => t,
                None => table.insert(EmbeddingTable::new(rows.ncols())?),
            };
            t.insert(key, rows)?;
        }
        table.ok_or_else(|| Error::invalid("no items to write"))
    }

    pub fn insert(&mut self, key: ItemKey, rows: ArrayView2<'_, f32>) -> Result<()> {
        if rows.ncols() != self.dim {
            return Err(Error::shape(format!(
                "item {key} has dim {} but the table has dim {}",
                rows.ncols(),
                self.dim
            )));
        }
        if rows.nrows() == 0 {
            return Err(Error::invalid(format!("item {key} has no tokens")));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Duplicate {
                what: "embedding key",
                key: key.to_string(),
            });
        }
        let entry = Entry {
            n_tokens: rows.nrows(),
            start: self.data.len(),
        };
        self.data.extend(rows.iter());
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ItemKey> {
        self.entries.keys()
    }

    pub fn contains(&self, key: &ItemKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn tokens(&self, key: &ItemKey) -> Result<ArrayView2<'_, f32>> {
        let e = self
            .entries
            .get(key)
            .ok_or_else(|| Error::NotFound(format!("embeddings for {key}")))?;
        let slice = &self.data[e.start..e.start + e.n_tokens * self.dim];
        Ok(ArrayView2::from_shape((e.n_tokens, self.dim), slice).expect("entry is in bounds"))
    }

    /// Token rows widened to `f64` for model input.
    pub fn token_matrix(&self, key: &ItemKey) -> Result<Array2<f64>> {
        Ok(self.tokens(key)?.mapv(f64::from))
    }

    /// Mean of the item's token rows.
    pub fn pooled(&self, key: &ItemKey) -> Result<Array1<f64>> {
        let rows = self.tokens(key)?;
        let mut acc = Array1::<f64>::zeros(self.dim);
        for row in rows.rows() {
            acc.zip_mut_with(&row, |a, &x| *a += f64::from(x));
        }
        acc /= rows.nrows() as f64;
        Ok(acc)
    }

    pub fn write(&self, index_path: &Path, data_path: &Path) -> Result<()> {
        let mut items = Vec::with_capacity(self.entries.len());
        for (key, e) in &self.entries {
            items.push(IndexItem {
                kind: key.kind,
                id: key.id.clone(),
                sub_index: key.sub_index,
                offset: (HEADER_LEN + e.start * 4) as u64,
                n_tokens: e.n_tokens,
            });
        }
        let index = IndexFile {
            dim: self.dim,
            items,
        };
        let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(data_path, e);
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for x in &self.data {
            out.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        out.flush().map_err(io)?;
        let json = serde_json::to_vec(&index)?;
        fs::write(index_path, json).map_err(|e| Error::io(index_path, e))
    }

    pub fn read(index_path: &Path, data_path: &Path) -> Result<Self> {
        let index: IndexFile = serde_json::from_slice(
            &fs::read(index_path).map_err(|e| Error::io(index_path, e))?,
        )?;
        let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing PUNKEMB1 magic".into()));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if dim != index.dim || dim == 0 {
            return Err(Error::Format(format!(
                "data header dim {dim} disagrees with index dim {}",
                index.dim
            )));
        }
        let payload = &bytes[HEADER_LEN..];
        if payload.len() % 4 != 0 {
            return Err(Error::Format("payload is not a whole number of f32".into()));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();

        let mut entries = IndexMap::with_capacity(index.items.len());
        for item in index.items {
            let key = ItemKey {
                kind: item.kind,
                id: item.id,
                sub_index: item.sub_index,
            };
            let off = item.offset as usize;
            if off < HEADER_LEN || !(off - HEADER_LEN).is_multiple_of(4) {
                return Err(Error::Format(format!("misaligned offset for {key}")));
            }
            let start = (off - HEADER_LEN) / 4;
            if item.n_tokens == 0 || start + item.n_tokens * dim > floats.len() {
                return Err(Error::Format(format!("item {key} is out of bounds")));
            }
            let entry = Entry {
                n_tokens: item.n_tokens,
                start,
            };
            if entries.insert(key.clone(), entry).is_some() {
                return Err(Error::Duplicate {
                    what: "embedding key",
                    key: key.to_string(),
                });
            }
        }
        Ok(EmbeddingTable {
            dim,
            entries,
            data: floats,
        })
    }

    /// Reads `<prefix>.index.json` and `<prefix>.bin`.
    pub fn read_prefix(prefix: &Path) -> Result<Self> {
        let (index, data) = prefix_paths(prefix);
        Self::read(&index, &data)
    }

    pub fn write_prefix(&self, prefix: &Path) -> Result<()> {
        let (index, data) = prefix_paths(prefix);
        if let Some(parent) = index.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.write(&index, &data)
    }
}

pub fn prefix_paths(prefix: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let s = prefix.as_os_str().to_string_lossy();
    (format!("{s}.index.json").into(), format!("{s}.bin").into())
}

/// Splits text into word tokens (alphanumeric runs) and single-character
/// punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// FNV-1a over the seed and the lowercased token, with a final avalanche.
pub fn hash64(token: &str, seed: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().into_iter().chain(token.to_lowercase().bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Deterministic context-free token embeddings standing in for a pretrained
/// encoder.
pub struct FakeEncoder {
    seed: u64,
    dim: usize,
    cache: HashMap<String, Vec<f32>>,
}

impl FakeEncoder {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be at least 1"));
        }
        Ok(FakeEncoder {
            seed,
            dim,
            cache: HashMap::new(),
        })
    }

    pub fn token_vector(&mut self, token: &str) -> &[f32] {
        let key = token.to_lowercase();
        let (seed, dim) = (self.seed, self.dim);
        self.cache.entry(key).or_insert_with_key(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(hash64(k, seed));
            (0..dim).map(|_| rng.random_range(-1.0f32..=1.0)).collect()
        })
    }

    pub fn encode(&mut self, text: &str) -> Array2<f32> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(String::new());
        }
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (mut row, tok) in out.rows_mut().into_iter().zip(&tokens) {
            row.assign(&ndarray::aview1(self.token_vector(tok)));
        }
        out
    }
}

/// Embeds every problem, sentence, answer and concept definition.
pub fn fake_embeddings(
    corpus: &Corpus,
    concepts: &[Concept],
    seed: u64,
    dim: usize,
) -> Result<EmbeddingTable> {
    let mut enc = FakeEncoder::new(seed, dim)?;
    let mut table = EmbeddingTable::new(dim)?;
    for p in corpus.problems() {
        table.insert(ItemKey::problem(&p.id), enc.encode(&p.text).view())?;
        for s in &p.sentences {
            table.insert(ItemKey::sentence(&p.id, s.index), enc.encode(&s.text).view())?;
        }
    }
    for a in corpus.answers() {
        table.insert(ItemKey::answer(&a.id), enc.encode(&a.text).view())?;
    }
    for c in concepts {
        table.insert(ItemKey::concept(&c.id), enc.encode(&c.definition_text()).view())?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn single_item_payload_size() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[1.0f32, 2.0, 3.0]];
        let t = EmbeddingTable::from_items([(ItemKey::problem("a"), m.view())]).unwrap();
        let (idx, data) = (dir.path().join("e.index.json"), dir.path().join("e.bin"));
        t.write(&idx, &data).unwrap();
        let bytes = fs::read(&data).unwrap();
        assert_eq!(bytes.len() - HEADER_LEN, 12);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn mixed_dims_rejected() {
        let a = Array2::<f32>::zeros((1, 3));
        let b = Array2::<f32>::zeros((1, 4));
        let err = EmbeddingTable::from_items([
            (ItemKey::problem("a"), a.view()),
            (ItemKey::problem("b"), b.view()),
        ]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn duplicate_key_rejected() {
        let a = Array2::<f32>::zeros((1, 3));
        let err = EmbeddingTable::from_items([
            (ItemKey::sentence("a", 0), a.view()),
            (ItemKey::sentence("a", 0), a.view()),
        ]);
        assert!(matches!(err, Err(Error::Duplicate { .. })));
    }

    #[test]
    fn pooling() {
        let t = EmbeddingTable::from_items([
            (ItemKey::problem("one"), array![[0.25f32, -1.0]].view()),
            (ItemKey::problem("two"), array![[1.0f32, 3.0], [3.0, 1.0]].view()),
        ])
        .unwrap();
        assert_eq!(t.pooled(&ItemKey::problem("one")).unwrap().to_vec(), vec![0.25, -1.0]);
        assert_eq!(t.pooled(&ItemKey::problem("two")).unwrap().to_vec(), vec![2.0, 2.0]);
        assert!(t.pooled(&ItemKey::problem("three")).is_err());
    }

    #[test]
    fn pooling_matches_elementwise_sum() {
        let mut enc = FakeEncoder::new(5, 768).unwrap();
        let m = enc.encode("alpha beta gamma");
        assert_eq!(m.nrows(), 3);
        let t = EmbeddingTable::from_items([(ItemKey::problem("p"), m.view())]).unwrap();
        let pooled = t.pooled(&ItemKey::problem("p")).unwrap();
        for d in 0..768 {
            let mut sum = 0.0f64;
            for r in 0..3 {
                sum += f64::from(m[[r, d]]);
            }
            assert!((pooled[d] - sum / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fake_vectors_are_deterministic_and_bounded() {
        let mut a = FakeEncoder::new(1, 16).unwrap();
        let mut b = FakeEncoder::new(2, 16).unwrap();
        let m = a.encode("Variance of the variance");
        assert_eq!(m.row(0), m.row(3));
        assert!(m.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_ne!(m.row(0), b.encode("variance").row(0));
        let mut a2 = FakeEncoder::new(1, 16).unwrap();
        assert_eq!(m, a2.encode("Variance of the variance"));
    }

    #[test]
    fn tokenizer() {
        assert_eq!(
            tokenize("What is P(X=0.5)?"),
            vec!["What", "is", "P", "(", "X", "=", "0", ".", "5", ")", "?"]
        );
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            items in proptest::collection::vec(
                (1usize..4, proptest::collection::vec(any::<f32>(), 12)), 1..6)
        ) {
            let dim = 3;
            let mut table = EmbeddingTable::new(dim).unwrap();
            for (i, (n, vals)) in items.iter().enumerate() {
                let m = Array2::from_shape_vec((*n, dim), vals[..n * dim].to_vec()).unwrap();
                table.insert(ItemKey::sentence("p", i), m.view()).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let prefix = dir.path().join("t");
            table.write_prefix(&prefix).unwrap();
            let back = EmbeddingTable::read_prefix(&prefix).unwrap();
            prop_assert_eq!(back.dim, table.dim);
            prop_assert_eq!(&back.entries, &table.entries);
            let bits = |t: &EmbeddingTable| t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&table));
        }

        #[test]
        fn pooled_is_row_order_free(rows in proptest::collection::vec(proptest::collection::vec(-10.0f32..10.0, 4), 1..8), seed: u64) {
            use rand::seq::SliceRandom;
            let n = rows.len();
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            let m = Array2::from_shape_vec((n, 4), flat).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p = m.select(ndarray::Axis(0), &perm);
            let t = EmbeddingTable::from_items([
                (ItemKey::problem("a"), m.view()),
                (ItemKey::problem("b"), p.view()),
            ]).unwrap();
            let (x, y) = (t.pooled(&ItemKey::problem("a")).unwrap(), t.pooled(&ItemKey::problem("b")).unwrap());
            for (u, v) in x.iter().zip(y.iter()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
