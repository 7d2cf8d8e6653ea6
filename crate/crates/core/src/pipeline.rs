//! Text to model input: tokenize, optionally bridge, truncate/pad, and look up
//! medical features for the English words that survived truncation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bioembed::{extract_bio_features, reconstruct_words, EmbeddingTable, EnglishWordSpan};
use crate::corpus::PIRecord;
use crate::error::{Error, Result};
use crate::tokenizer::{insert_bridging_tokens, tokenize, truncate_pad, BridgedInput, Vocab};

/// Frozen-table features for one sequence, before the trainable mapper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BioInput {
    pub spans: Vec<EnglishWordSpan>,
    /// `m x h_B`, zero rows for misses.
    pub raw: Array2<f64>,
    pub hits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub attn_mask: Vec<u8>,
    /// Segment tokens present after truncation.
    pub s: usize,
    pub bio: Option<BioInput>,
    pub label: u8,
}

impl EncodedExample {
    pub fn active_len(&self) -> usize {
        self.attn_mask.iter().filter(|&&m| m == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub max_len: usize,
    pub use_bridging: bool,
    pub use_bioembed: bool,
}

/// The token sequence a note turns into under `opts` (no feature lookup).
pub fn bridged_sequence(text: &str, vocab: &Vocab, opts: &EncodeOptions) -> BridgedInput {
    let tok = tokenize(text, vocab);
    let bridged = if opts.use_bridging {
        insert_bridging_tokens(&tok)
    } else {
        BridgedInput::plain(tok)
    };
    truncate_pad(bridged, opts.max_len)
}

/// Encodes one preprocessed note. The table is only read when
/// `opts.use_bioembed` is set.
pub fn encode_text(
    text: &str,
    label: u8,
    vocab: &Vocab,
    table: Option<&EmbeddingTable>,
    opts: &EncodeOptions,
) -> Result<EncodedExample> {
    if opts.max_len < 2 {
        return Err(Error::Config("encoder.max_len must be at least 2".into()));
    }
    let seq = bridged_sequence(text, vocab, opts);
    let bio = if opts.use_bioembed {
        let table = table.ok_or_else(|| {
            Error::Config("paths.embeddings is required when bio-embedding is enabled".into())
        })?;
        let spans = reconstruct_words(&seq);
        let (raw, hits) = extract_bio_features(&spans, table);
        Some(BioInput { spans, raw, hits })
    } else {
        None
    };
    Ok(EncodedExample {
        ids: seq.seq.ids,
        attn_mask: seq.seq.attn_mask,
        s: seq.s,
        bio,
        label,
    })
}

pub fn encode_records(
    records: &[PIRecord],
    vocab: &Vocab,
    table: Option<&EmbeddingTable>,
    opts: &EncodeOptions,
) -> Result<Vec<EncodedExample>> {
    records
        .iter()
        .map(|r| encode_text(&r.text, r.label, vocab, table, opts))
        .collect()
}

/// Corpus-level counts, mostly for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodeStats {
    pub examples: usize,
    pub tokens: usize,
    pub segment_tokens: usize,
    pub english_words: usize,
    pub table_hits: usize,
}

pub fn encode_stats(examples: &[EncodedExample]) -> EncodeStats {
    let mut st = EncodeStats {
        examples: examples.len(),
        ..EncodeStats::default()
    };
    for e in examples {
        st.tokens += e.active_len();
        st.segment_tokens += e.s;
        if let Some(b) = &e.bio {
            st.english_words += b.spans.len();
            st.table_hits += b.hits.iter().filter(|&&h| h).count();
        }
    }
    st
}
