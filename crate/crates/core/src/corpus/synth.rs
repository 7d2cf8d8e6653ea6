//! Synthetic code-switched notes with a planted, learnable label signal.
//!
//! Every note mentions a few English symptom words. Its emergency probability
//! is `sigmoid(sum of their severity weights + bias)`. Part of the symptom
//! mentions come from a pool of made-up *reserved* words: they never appear in
//! the tokenizer training text (so WordPiece breaks them into pieces) but they
//! do appear in the synthetic medical embedding table, whose vectors encode
//! severity.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PIRecord;
use crate::baseline::sigmoid;
use crate::bioembed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::preprocess::{AbbrevLexicon, MatchMode};

const BUNDLED_SYMPTOMS: &str = include_str!("../../data/symptoms.tsv");
const BUNDLED_PHRASES: &str = include_str!("../../data/korean_phrases.txt");

/// Everyday English that shows up in notes and in the tokenizer text.
const GENERAL_WORDS: &[&str] = &[
    "patient", "mother", "father", "child", "baby", "home", "school", "today", "yesterday",
    "night", "morning", "since", "after", "before", "with", "without", "mild", "severe",
    "sudden", "onset", "again", "visit", "clinic", "medicine", "syrup", "tablet", "drink",
    "water", "milk", "sleep", "play", "good", "poor", "better", "worse", "left", "right",
    "side", "day", "days", "hours", "week", "check", "noted", "stable", "normal", "room",
    "history", "follow", "status", "rule", "out", "due", "post", "complains", "daily",
    "twice", "once", "three", "times", "needed", "weight", "height", "rate", "heart",
    "blood", "pressure", "temperature", "body", "oxygen", "saturation", "oral", "per",
];

/// Vital-sign style prefixes followed by a number.
const VITALS: &[(&str, f64, f64, usize)] = &[
    ("BT", 36.0, 40.5, 1),
    ("HR", 70.0, 180.0, 0),
    ("RR", 16.0, 60.0, 0),
    ("SpO2", 88.0, 100.0, 0),
    ("Wt", 3.0, 40.0, 1),
];

const SYLLABLE_ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "gr", "pl", "tr",
];
const SYLLABLE_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const SYLLABLE_CODAS: &[&str] = &["", "", "", "n", "r", "s", "x"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomTerm {
    pub term: String,
    /// Severity in `[-3, 3]`; positive pushes toward emergency.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_records: usize,
    pub emergency_rate: f64,
    pub seed: u64,
    /// `None` uses the bundled lexicon.
    pub symptom_lexicon_path: Option<PathBuf>,
    pub korean_phrase_path: Option<PathBuf>,
    /// Source of the medical symbols sprinkled into notes.
    pub abbrev_lexicon_path: Option<PathBuf>,
    pub label_noise: f64,
    /// Share of symptom mentions drawn from the reserved pool.
    pub reserved_fraction: f64,
    pub reserved_pool: usize,
    pub min_symptoms: usize,
    pub max_symptoms: usize,
    /// Lines of general text for vocabulary training.
    pub tokenizer_lines: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_records: 6000,
            emergency_rate: 0.4,
            seed: 0,
            symptom_lexicon_path: None,
            korean_phrase_path: None,
            abbrev_lexicon_path: None,
            label_noise: 0.05,
            reserved_fraction: 0.5,
            reserved_pool: 1500,
            min_symptoms: 1,
            max_symptoms: 4,
            tokenizer_lines: 3000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth.{m}")));
        if !(self.emergency_rate > 0.0 && self.emergency_rate < 1.0) {
            return bad("emergency_rate must lie in (0, 1)");
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.reserved_fraction) {
            return bad("reserved_fraction must lie in [0, 1]");
        }
        if self.reserved_fraction > 0.0 && self.reserved_pool == 0 {
            return bad("reserved_pool must be positive when reserved_fraction > 0");
        }
        if self.min_symptoms == 0 || self.min_symptoms > self.max_symptoms {
            return bad("min_symptoms must be positive and at most max_symptoms");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub n_records: usize,
    pub bias: f64,
    pub target_rate: f64,
    /// Mean of the generative sigmoid before label noise.
    pub mean_probability: f64,
    pub emergency_fraction: f64,
    pub symptom_mentions: usize,
    pub reserved_mentions: usize,
    pub flipped_labels: usize,
    pub warnings: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_symptoms(content: &str) -> Result<Vec<SymptomTerm>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            what: "symptom lexicon",
            line: line_no,
            reason,
        };
        let (term, weight) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected term<TAB>weight".into()))?;
        let term = term.trim();
        if term.is_empty() || !term.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(parse_err(format!("term `{term}` must be ASCII letters")));
        }
        let weight: f64 = weight
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad weight `{}`", weight.trim())))?;
        if !(-3.0..=3.0).contains(&weight) {
            return Err(parse_err(format!("weight {weight} outside [-3, 3]")));
        }
        let key = term.to_ascii_lowercase();
        if !seen.insert(key.clone()) {
            return Err(Error::Duplicate {
                what: "symptom",
                key,
                line: line_no,
            });
        }
        out.push(SymptomTerm { term: key, weight });
    }
    if out.is_empty() {
        return Err(Error::Config("symptom lexicon has no entries".into()));
    }
    Ok(out)
}

/// `term<TAB>weight` lines; `#` comments and blank lines are skipped.
pub fn load_symptom_lexicon(path: Option<&Path>) -> Result<Vec<SymptomTerm>> {
    match path {
        Some(p) => parse_symptoms(&read(p)?),
        None => parse_symptoms(BUNDLED_SYMPTOMS),
    }
}

/// One Korean phrase per non-empty line.
pub fn load_phrases(path: Option<&Path>) -> Result<Vec<String>> {
    let content = match path {
        Some(p) => read(p)?,
        None => BUNDLED_PHRASES.to_string(),
    };
    let phrases: Vec<String> = content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if phrases.is_empty() {
        return Err(Error::Config("korean phrase list is empty".into()));
    }
    Ok(phrases)
}

fn letters_lower(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
}

/// Medical symbols whose expansions name no lexicon symptom, so dropping them
/// in leaves the label function untouched.
fn neutral_symbols(lex: &AbbrevLexicon, symptoms: &[SymptomTerm]) -> Vec<String> {
    let names: HashSet<&str> = symptoms.iter().map(|s| s.term.as_str()).collect();
    lex.entries()
        .iter()
        .filter(|e| e.mode == MatchMode::ExactSymbol)
        .filter(|e| letters_lower(&e.expansion).all(|w| !names.contains(w.as_str())))
        .map(|e| e.surface.clone())
        .collect()
}

fn general_vocabulary(lex: &AbbrevLexicon, symptoms: &[SymptomTerm]) -> BTreeSet<String> {
    let mut words: BTreeSet<String> = GENERAL_WORDS.iter().map(|w| w.to_string()).collect();
    for e in lex.entries() {
        words.extend(letters_lower(&e.expansion));
        words.extend(letters_lower(&e.surface));
    }
    for s in symptoms {
        words.remove(&s.term);
    }
    words
}

fn make_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.random_range(3..=4);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(SYLLABLE_ONSETS.choose(rng).expect("non-empty"));
        w.push_str(SYLLABLE_VOWELS.choose(rng).expect("non-empty"));
        w.push_str(SYLLABLE_CODAS.choose(rng).expect("non-empty"));
    }
    w
}

struct Sources {
    symptoms: Vec<SymptomTerm>,
    phrases: Vec<String>,
    lexicon: AbbrevLexicon,
}

fn sources(cfg: &SynthConfig) -> Result<Sources> {
    let lexicon = match &cfg.abbrev_lexicon_path {
        Some(p) => crate::preprocess::load_lexicon(p)?,
        None => AbbrevLexicon::starter(),
    };
    Ok(Sources {
        symptoms: load_symptom_lexicon(cfg.symptom_lexicon_path.as_deref())?,
        phrases: load_phrases(cfg.korean_phrase_path.as_deref())?,
        lexicon,
    })
}

fn reserved_from(cfg: &SynthConfig, src: &Sources) -> Vec<SymptomTerm> {
    let mut taken: HashSet<String> = src.symptoms.iter().map(|s| s.term.clone()).collect();
    taken.extend(general_vocabulary(&src.lexicon, &src.symptoms));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7265_7365_7276_6564);
    let mut out = Vec::with_capacity(cfg.reserved_pool);
    while out.len() < cfg.reserved_pool {
        let w = make_word(&mut rng);
        if taken.insert(w.clone()) {
            let weight = rng.random_range(-3.0..=3.0);
            out.push(SymptomTerm { term: w, weight });
        }
    }
    out
}

/// The made-up symptom words planted in notes, with their weights. Depends on
/// the seed and lexicons, not on `n_records`.
pub fn reserved_terms(cfg: &SynthConfig) -> Result<Vec<SymptomTerm>> {
    cfg.validate()?;
    Ok(reserved_from(cfg, &sources(cfg)?))
}

fn number<R: Rng>(rng: &mut R, lo: f64, hi: f64, decimals: usize) -> String {
    format!("{:.*}", decimals, rng.random_range(lo..hi))
}

fn surface<R: Rng>(rng: &mut R, term: &str) -> String {
    if rng.random_bool(0.15) {
        let mut c = term.chars();
        let first = c.next().expect("non-empty term").to_ascii_uppercase();
        std::iter::once(first).chain(c).collect()
    } else {
        term.to_string()
    }
}

struct Draft {
    text: String,
    logit: f64,
    reserved: usize,
    mentions: usize,
}

fn draft_note<R: Rng>(
    rng: &mut R,
    src: &Sources,
    reserved: &[SymptomTerm],
    symbols: &[String],
    cfg: &SynthConfig,
    acc: &mut f64,
) -> Draft {
    let k = rng.random_range(cfg.min_symptoms..=cfg.max_symptoms);
    let mut parts: Vec<String> = vec![src.phrases.choose(rng).expect("phrases").clone()];
    if rng.random_bool(0.3) {
        parts.push(format!("{}일 전부터", rng.random_range(1..8)));
    }
    let mut used: HashSet<&str> = HashSet::new();
    let (mut logit, mut n_reserved) = (0.0, 0);
    for _ in 0..k {
        *acc += cfg.reserved_fraction;
        let from_reserved = *acc >= 1.0 && !reserved.is_empty();
        let pool = if from_reserved {
            *acc -= 1.0;
            reserved
        } else {
            &src.symptoms
        };
        let term = loop {
            let t = pool.choose(rng).expect("non-empty pool");
            if used.insert(t.term.as_str()) || used.len() >= pool.len() {
                break t;
            }
        };
        logit += term.weight;
        n_reserved += from_reserved as usize;
        if rng.random_bool(0.4) {
            parts.push(src.phrases.choose(rng).expect("phrases").clone());
        }
        parts.push(surface(rng, &term.term));
        if rng.random_bool(0.5) {
            parts.push(src.phrases.choose(rng).expect("phrases").clone());
        }
        if rng.random_bool(0.2) {
            parts.push(",".into());
        }
    }
    if rng.random_bool(0.5) {
        let &(name, lo, hi, dec) = VITALS.choose(rng).expect("vitals");
        parts.push(format!("{name} {}", number(rng, lo, hi, dec)));
    }
    if !symbols.is_empty() && rng.random_bool(0.3) {
        parts.push(symbols.choose(rng).expect("symbols").clone());
    }
    parts.push(src.phrases.choose(rng).expect("phrases").clone());
    if rng.random_bool(0.5) {
        parts.push(".".into());
    }
    Draft {
        text: parts.join(" "),
        logit,
        reserved: n_reserved,
        mentions: k,
    }
}

/// Bias `b` with `mean(sigmoid(logit_i + b)) = target`, by bisection.
fn solve_bias(logits: &[f64], target: f64) -> (f64, f64) {
    let mean = |b: f64| logits.iter().map(|&z| sigmoid(z + b)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    (b, mean(b))
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<PIRecord>> {
    Ok(generate_synthetic_with_report(cfg)?.0)
}

pub fn generate_synthetic_with_report(cfg: &SynthConfig) -> Result<(Vec<PIRecord>, SynthReport)> {
    cfg.validate()?;
    let src = sources(cfg)?;
    let reserved = if cfg.reserved_fraction > 0.0 {
        reserved_from(cfg, &src)
    } else {
        Vec::new()
    };
    let symbols = neutral_symbols(&src.lexicon, &src.symptoms);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acc = 0.0;
    let drafts: Vec<Draft> = (0..cfg.n_records)
        .map(|_| draft_note(&mut rng, &src, &reserved, &symbols, cfg, &mut acc))
        .collect();

    // Noise flips move the rate toward 1/2; aim the clean rate so the noisy
    // one lands on target.
    let mut warnings = Vec::new();
    let eps = cfg.label_noise;
    let mut clean_target = (cfg.emergency_rate - eps) / (1.0 - 2.0 * eps);
    if !(clean_target > 0.0 && clean_target < 1.0) {
        let msg = format!(
            "emergency_rate {} is unreachable with label_noise {eps}",
            cfg.emergency_rate
        );
        warn!("{msg}");
        warnings.push(msg);
        clean_target = clean_target.clamp(1e-6, 1.0 - 1e-6);
    }
    let logits: Vec<f64> = drafts.iter().map(|d| d.logit).collect();
    let (bias, mean_probability) = if logits.is_empty() {
        (0.0, 0.0)
    } else {
        solve_bias(&logits, clean_target)
    };
    if !logits.is_empty() && (mean_probability - clean_target).abs() > 1e-3 {
        let msg = format!(
            "emergency_rate {} not reachable with these weights (got {mean_probability:.4})",
            cfg.emergency_rate
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let width = cfg.n_records.max(1).to_string().len();
    let mut flipped = 0;
    let mut positives = 0;
    let mut records = Vec::with_capacity(cfg.n_records);
    for (i, d) in drafts.iter().enumerate() {
        let mut label = rng.random_bool(sigmoid(d.logit + bias)) as u8;
        if eps > 0.0 && rng.random_bool(eps) {
            label ^= 1;
            flipped += 1;
        }
        positives += label as usize;
        records.push(PIRecord::new(format!("syn-{i:0width$}"), d.text.clone(), label));
    }
    let report = SynthReport {
        n_records: cfg.n_records,
        bias,
        target_rate: cfg.emergency_rate,
        mean_probability,
        emergency_fraction: positives as f64 / cfg.n_records.max(1) as f64,
        symptom_mentions: drafts.iter().map(|d| d.mentions).sum(),
        reserved_mentions: drafts.iter().map(|d| d.reserved).sum(),
        flipped_labels: flipped,
        warnings,
    };
    Ok((records, report))
}

/// General-domain text for vocabulary training: Korean phrases, everyday and
/// clinical English, lexicon symptoms, numbers. Reserved words never occur.
pub fn generate_tokenizer_text(cfg: &SynthConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let src = sources(cfg)?;
    let general: Vec<String> = general_vocabulary(&src.lexicon, &src.symptoms)
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x746f_6b65_6e69_7a65);
    let mut lines = Vec::with_capacity(cfg.tokenizer_lines + 2);
    // Every letter word-initially and after another letter, so no English
    // word ever falls back to [UNK].
    let letters: Vec<char> = ('a'..='z').chain('A'..='Z').collect();
    lines.push(letters.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
    lines.push(letters.iter().map(|c| format!("z{c}")).collect::<Vec<_>>().join(" "));
    for e in src.lexicon.entries() {
        lines.push(format!("{} {}", e.surface, e.expansion));
    }
    for _ in 0..cfg.tokenizer_lines {
        let n = rng.random_range(4..12);
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            let w = match rng.random_range(0..10) {
                0..=3 => src.phrases.choose(&mut rng).expect("phrases").clone(),
                4..=6 => general.choose(&mut rng).expect("general words").clone(),
                7 | 8 => {
                    let t = &src.symptoms.choose(&mut rng).expect("symptoms").term;
                    surface(&mut rng, t)
                }
                _ => {
                    let dec = rng.random_range(0..2);
                    number(&mut rng, 0.0, 200.0, dec)
                }
            };
            words.push(w);
        }
        lines.push(words.join(" "));
    }
    Ok(lines)
}

/// A stand-in medical embedding table: lexicon and reserved symptoms get
/// `(w / 3) u + 0.5 z / sqrt(dim)` for a shared unit direction `u` and noise
/// `z`; general words get the noise term alone.
pub fn build_embedding_table(cfg: &SynthConfig, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::Config("bioembed.dim must be positive".into()));
    }
    let src = sources(cfg)?;
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    for w in general_vocabulary(&src.lexicon, &src.symptoms) {
        weights.insert(w, 0.0);
    }
    for s in src.symptoms.iter().chain(reserved_from(cfg, &src).iter()) {
        weights.insert(s.term.clone(), s.weight);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Array1<f64> = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(&mut rng));
    let norm = u.dot(&u).sqrt();
    u /= norm;
    let scale = 0.5 / (dim as f64).sqrt();
    let mut words: Vec<String> = weights.keys().cloned().collect();
    words.shuffle(&mut rng);
    let mut vectors = Array2::zeros((words.len(), dim));
    for (i, w) in words.iter().enumerate() {
        let sev = weights[w] / 3.0;
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            vectors[[i, j]] = sev * u[j] + scale * z;
        }
    }
    EmbeddingTable::new(words, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_records: n,
            reserved_pool: 200,
            tokenizer_lines: 200,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let cfg = small(300);
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        let other = generate_synthetic(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn label_rate_near_target() {
        let cfg = SynthConfig {
            n_records: 1000,
            emergency_rate: 0.5,
            seed: 7,
            ..small(1000)
        };
        let recs = generate_synthetic(&cfg).unwrap();
        let rate = recs.iter().map(|r| r.label as f64).sum::<f64>() / 1000.0;
        assert!((0.4..=0.6).contains(&rate), "{rate}");
    }

    #[test]
    fn reserved_words_absent_from_tokenizer_text_but_in_table() {
        let cfg = small(50);
        let reserved = reserved_terms(&cfg).unwrap();
        assert_eq!(reserved.len(), 200);
        let text = generate_tokenizer_text(&cfg).unwrap().join(" ").to_ascii_lowercase();
        let words: HashSet<&str> = text.split_whitespace().collect();
        let table = build_embedding_table(&cfg, 16, 3).unwrap();
        for r in &reserved {
            assert!(!words.contains(r.term.as_str()), "{}", r.term);
            assert!(table.get(&r.term).is_some());
            assert!((-3.0..=3.0).contains(&r.weight));
        }
    }

    #[test]
    fn reserved_share_follows_the_fraction() {
        let (_, rep) = generate_synthetic_with_report(&small(500)).unwrap();
        let share = rep.reserved_mentions as f64 / rep.symptom_mentions as f64;
        assert!((share - 0.5).abs() < 0.01, "{share}");
    }

    #[test]
    fn symbols_carry_no_symptom_words() {
        let src = sources(&SynthConfig::default()).unwrap();
        let symbols = neutral_symbols(&src.lexicon, &src.symptoms);
        assert!(symbols.contains(&"f/u".to_string()));
        assert!(!symbols.contains(&"C/S/R".to_string()));
    }

    #[test]
    fn lexicon_errors() {
        assert!(parse_symptoms("fever\t4.0\n").is_err());
        assert!(matches!(
            parse_symptoms("fever\t1\nFever\t2\n"),
            Err(Error::Duplicate { line: 2, .. })
        ));
        assert!(load_symptom_lexicon(Some(Path::new("/nonexistent/x.tsv"))).is_err());
    }
}
