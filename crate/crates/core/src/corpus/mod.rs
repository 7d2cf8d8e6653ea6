//! Present Illness records: JSONL ingestion, deterministic splitting and
//! character statistics.
//!
//! The canonical on-disk format is one JSON object per line with the fields
//! `id`, `text` and `label` (1 = emergency, 0 = non-emergency).

mod synth;

pub use synth::{
    build_embedding_table, generate_synthetic, generate_synthetic_with_report,
    generate_tokenizer_text, load_phrases, load_symptom_lexicon, reserved_terms, SymptomTerm,
    SynthConfig, SynthReport,
};

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Add;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::CharClass;

/// One Present Illness note with its binary emergency label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PIRecord {
    pub id: String,
    pub text: String,
    pub label: u8,
}

impl PIRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: u8) -> Self {
        PIRecord {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    label: i64,
}

/// Reads a JSONL corpus. Records come back in file order; blank lines are
/// rejected like any other malformed line.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<PIRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            what: "malformed record",
            line: line_no,
            reason: e.to_string(),
        })?;
        if raw.label != 0 && raw.label != 1 {
            return Err(Error::LabelOutOfRange { line: line_no });
        }
        if raw.text.trim().is_empty() {
            return Err(Error::Parse {
                what: "empty text",
                line: line_no,
                reason: format!("record `{}` has no text", raw.id),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Duplicate {
                what: "record id",
                key: raw.id,
                line: line_no,
            });
        }
        records.push(PIRecord {
            id: raw.id,
            text: raw.text,
            label: raw.label as u8,
        });
    }
    Ok(records)
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[PIRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Train/dev/test partition of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<PIRecord>,
    pub dev: Vec<PIRecord>,
    pub test: Vec<PIRecord>,
}

pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.64, 0.16, 0.20);

/// Slice sizes for `n` records: `floor(n * r)` each, remainder to train.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::Config(format!(
            "split ratios must be positive, got ({a}, {b}, {c})"
        )));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            a + b + c
        )));
    }
    if n < 3 {
        return Err(Error::Config(format!(
            "need at least 3 records to split, got {n}"
        )));
    }
    let dev = (n as f64 * b).floor() as usize;
    let test = (n as f64 * c).floor() as usize;
    let train = n - dev - test;
    Ok((train, dev, test))
}

/// Shuffles with a seeded ChaCha8 stream, then cuts contiguous slices in
/// train, dev, test order.
pub fn split_corpus(
    records: &[PIRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<CorpusSplit> {
    let (n_train, n_dev, _) = split_sizes(records.len(), ratios)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        dev: pick(&order[n_train..n_train + n_dev]),
        test: pick(&order[n_train + n_dev..]),
    })
}

/// Like [`split_corpus`], but cuts each label separately so all three
/// splits keep the corpus class balance. Each part is shuffled again.
pub fn split_corpus_stratified(
    records: &[PIRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<CorpusSplit> {
    split_sizes(records.len(), ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in 0..=1u8 {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let dev = (n as f64 * ratios.1).floor() as usize;
        let test = (n as f64 * ratios.2).floor() as usize;
        let train = n - dev - test;
        parts[0].extend_from_slice(&idx[..train]);
        parts[1].extend_from_slice(&idx[train..train + dev]);
        parts[2].extend_from_slice(&idx[train + dev..]);
    }
    for p in parts.iter_mut() {
        p.shuffle(&mut rng);
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: pick(&parts[0]),
        dev: pick(&parts[1]),
        test: pick(&parts[2]),
    })
}

/// Character counts by class. Whitespace counts toward `total` only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharStats {
    pub total: u64,
    pub korean: u64,
    pub english: u64,
    pub numeric: u64,
    pub special: u64,
}

impl Add for CharStats {
    type Output = CharStats;

    fn add(self, o: CharStats) -> CharStats {
        CharStats {
            total: self.total + o.total,
            korean: self.korean + o.korean,
            english: self.english + o.english,
            numeric: self.numeric + o.numeric,
            special: self.special + o.special,
        }
    }
}

pub fn text_stats(text: &str) -> CharStats {
    let mut s = CharStats::default();
    for c in text.chars() {
        s.total += 1;
        match CharClass::of(c) {
            Some(CharClass::Kor) => s.korean += 1,
            Some(CharClass::Eng) => s.english += 1,
            Some(CharClass::Num) => s.numeric += 1,
            Some(CharClass::Special) => s.special += 1,
            None => {}
        }
    }
    s
}

pub fn corpus_stats(records: &[PIRecord]) -> CharStats {
    records
        .iter()
        .map(|r| text_stats(&r.text))
        .fold(CharStats::default(), Add::add)
}
