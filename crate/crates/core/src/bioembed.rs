//! Frozen medical word features fused into token embeddings.
//!
//! English subword tokens are reassembled into words, each word is looked up
//! in a frozen [`EmbeddingTable`] (width `h_B`), a trainable [`LinearMapper`]
//! projects hits to the encoder width `h_M`, and the projected word vector is
//! added to every subword position of that word. Misses (out-of-table words)
//! contribute exactly zero; the mapper bias is not applied to them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{BridgedInput, Lang, CONTINUATION};

/// Immutable word to vector map with case-folded lookup.
#[derive(Debug)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
    lookups: AtomicU64,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        EmbeddingTable {
            words: self.words.clone(),
            index: self.index.clone(),
            vectors: self.vectors.clone(),
            lookups: AtomicU64::new(0),
        }
    }
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.vectors == other.vectors
    }
}

impl EmbeddingTable {
    /// Words are stored lowercased; two words that fold to the same key are
    /// rejected.
    pub fn new(words: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} words but {} vectors",
                words.len(),
                vectors.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        let mut folded = Vec::with_capacity(words.len());
        for (i, w) in words.into_iter().enumerate() {
            let key = w.to_lowercase();
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    what: "embedding table",
                    line: i + 2,
                    reason: "word is empty or contains whitespace".into(),
                });
            }
            if index.insert(key.clone(), i).is_some() {
                return Err(Error::Duplicate {
                    what: "embedding word",
                    key,
                    line: i + 2,
                });
            }
            folded.push(key);
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding table".into()));
        }
        Ok(EmbeddingTable {
            words: folded,
            index,
            vectors,
            lookups: AtomicU64::new(0),
        })
    }

    /// Parses `word_count h_B` followed by `word v1 .. v_hB` lines.
    pub fn parse(content: &str) -> Result<Self> {
        let mut lines = content.lines();
        let header = lines.next().ok_or(Error::Parse {
            what: "embedding table",
            line: 1,
            reason: "missing header".into(),
        })?;
        let head: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                what: "embedding table header",
                line: 1,
                reason: e.to_string(),
            })
        };
        if head.len() != 2 {
            return Err(Error::Parse {
                what: "embedding table header",
                line: 1,
                reason: "expected `word_count dim`".into(),
            });
        }
        let (count, dim) = (parse_usize(head[0])?, parse_usize(head[1])?);
        if dim == 0 {
            return Err(Error::Parse {
                what: "embedding table header",
                line: 1,
                reason: "dimension must be positive".into(),
            });
        }
        let mut words = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line");
            let before = data.len();
            for p in parts {
                let v: f64 = p.parse().map_err(|_| Error::Parse {
                    what: "embedding table",
                    line: line_no,
                    reason: format!("invalid number `{p}`"),
                })?;
                data.push(v);
            }
            let got = data.len() - before;
            if got != dim {
                return Err(Error::Parse {
                    what: "embedding table",
                    line: line_no,
                    reason: format!("expected {dim} values, found {got}"),
                });
            }
            words.push(word.to_string());
        }
        if words.len() != count {
            return Err(Error::Parse {
                what: "embedding table",
                line: 1,
                reason: format!("header promises {count} words, found {}", words.len()),
            });
        }
        let vectors = Array2::from_shape_vec((count, dim), data).expect("shape checked");
        Self::new(words, vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content)
    }

    /// Shortest round-trip float formatting, so `parse(to_text())` is exact.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.words.len(), self.dim()).unwrap();
        for (w, row) in self.words.iter().zip(self.vectors.rows()) {
            s.push_str(w);
            for v in row {
                write!(s, " {v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        self.index
            .get(&word.to_lowercase())
            .map(|&i| self.vectors.row(i))
    }

    /// Number of [`get`](Self::get) calls since construction or the last reset.
    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn reset_lookup_count(&self) {
        self.lookups.store(0, Ordering::Relaxed);
    }
}

/// One reassembled English word and the token positions it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnglishWordSpan {
    pub word: String,
    pub token_start: usize,
    pub token_end: usize,
}

/// Groups consecutive English tokens that share a `word_id`.
pub fn reconstruct_words(tok: &BridgedInput) -> Vec<EnglishWordSpan> {
    let seq = &tok.seq;
    let mut spans: Vec<EnglishWordSpan> = Vec::new();
    for i in 0..seq.len() {
        if seq.lang[i] != Lang::Eng || seq.attn_mask[i] == 0 {
            continue;
        }
        let piece = seq.tokens[i]
            .strip_prefix(CONTINUATION)
            .unwrap_or(&seq.tokens[i]);
        match spans.last_mut() {
            Some(s) if s.token_end == i && seq.word_id[i - 1] == seq.word_id[i] => {
                s.word.push_str(piece);
                s.token_end = i + 1;
            }
            _ => spans.push(EnglishWordSpan {
                word: piece.to_string(),
                token_start: i,
                token_end: i + 1,
            }),
        }
    }
    spans
}

/// `m x h_B` feature rows plus hit flags; misses are zero rows.
pub fn extract_bio_features(
    spans: &[EnglishWordSpan],
    table: &EmbeddingTable,
) -> (Array2<f64>, Vec<bool>) {
    let mut raw = Array2::zeros((spans.len(), table.dim()));
    let mut hits = Vec::with_capacity(spans.len());
    for (i, s) in spans.iter().enumerate() {
        match table.get(&s.word) {
            Some(v) => {
                raw.row_mut(i).assign(&v);
                hits.push(true);
            }
            None => hits.push(false),
        }
    }
    (raw, hits)
}

/// Trainable affine map from `h_B` to `h_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMapper {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearMapper {
    pub fn zeros(bio_dim: usize, hidden: usize) -> Self {
        LinearMapper {
            weight: Array2::zeros((bio_dim, hidden)),
            bias: Array1::zeros(hidden),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// `raw · W + b` row-wise, with rows of missed words forced back to zero.
pub fn map_features(raw: &Array2<f64>, hits: &[bool], mapper: &LinearMapper) -> Result<Array2<f64>> {
    if raw.ncols() != mapper.in_dim() {
        return Err(Error::Shape(format!(
            "features have width {} but the mapper expects {}",
            raw.ncols(),
            mapper.in_dim()
        )));
    }
    if hits.len() != raw.nrows() {
        return Err(Error::Shape(format!(
            "{} hit flags for {} feature rows",
            hits.len(),
            raw.nrows()
        )));
    }
    if mapper.bias.len() != mapper.out_dim() {
        return Err(Error::Shape("mapper bias width differs from weight".into()));
    }
    let mut out = raw.dot(&mapper.weight) + &mapper.bias;
    for (mut row, &hit) in out.rows_mut().into_iter().zip(hits) {
        if !hit {
            row.fill(0.0);
        }
    }
    Ok(out)
}

/// Token-aligned medical features; `mask[i] = 1` where a word span covers `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BioFeatures {
    pub features: Array2<f64>,
    pub mask: Vec<u8>,
}

/// Broadcasts each mapped word row over its token span.
pub fn bio_features(
    mapped: &Array2<f64>,
    spans: &[EnglishWordSpan],
    seq_len: usize,
) -> Result<BioFeatures> {
    if mapped.nrows() != spans.len() {
        return Err(Error::Shape(format!(
            "{} mapped rows for {} spans",
            mapped.nrows(),
            spans.len()
        )));
    }
    let mut features = Array2::zeros((seq_len, mapped.ncols()));
    let mut mask = vec![0u8; seq_len];
    for (j, s) in spans.iter().enumerate() {
        if s.token_start >= s.token_end || s.token_end > seq_len {
            return Err(Error::Shape(format!(
                "span {}..{} outside sequence of length {seq_len}",
                s.token_start, s.token_end
            )));
        }
        for p in s.token_start..s.token_end {
            if mask[p] == 1 {
                return Err(Error::Shape(format!("overlapping spans at position {p}")));
            }
            mask[p] = 1;
            features.row_mut(p).assign(&mapped.row(j));
        }
    }
    Ok(BioFeatures { features, mask })
}

/// Adds word features onto the token embeddings. Positions outside every
/// span are returned bit-identical.
pub fn fuse(
    token_embeddings: &Array2<f64>,
    mapped: &Array2<f64>,
    spans: &[EnglishWordSpan],
) -> Result<(Array2<f64>, BioFeatures)> {
    if mapped.ncols() != token_embeddings.ncols() {
        return Err(Error::Shape(format!(
            "mapped width {} differs from embedding width {}",
            mapped.ncols(),
            token_embeddings.ncols()
        )));
    }
    let bio = bio_features(mapped, spans, token_embeddings.nrows())?;
    let mut out = token_embeddings.clone();
    for (p, &m) in bio.mask.iter().enumerate() {
        if m == 1 {
            let mut row = out.row_mut(p);
            row += &bio.features.row(p);
        }
    }
    Ok((out, bio))
}
