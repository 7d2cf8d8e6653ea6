use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::PIRecord;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
/// Segment token opening a Korean run.
pub const B_K: u32 = 4;
/// Segment token opening an English run.
pub const B_E: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[B-K]", "[B-E]"];
pub const CONTINUATION: &str = "##";

/// Dense token table. Ids `0..6` are the reserved specials in the order of
/// [`SPECIAL_TOKENS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, sp) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*sp) {
                return Err(Error::Parse {
                    what: "vocab",
                    line: i + 1,
                    reason: format!("expected special token {sp}"),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    what: "vocab",
                    line: i + 1,
                    reason: "token is empty or contains whitespace".into(),
                });
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Duplicate {
                    what: "vocab token",
                    key: t.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(content.lines().map(str::to_string).collect())
    }
}

/// Trains on the texts of `corpus`. See [`train_vocab_from_texts`].
pub fn train_vocab(corpus: &[PIRecord], vocab_size: usize, seed: u64) -> Result<Vocab> {
    train_vocab_from_texts(corpus.iter().map(|r| r.text.as_str()), vocab_size, seed)
}

/// WordPiece vocabulary by greedy pair merging.
///
/// Texts are split on whitespace. The initial alphabet holds every
/// word-initial character plus `##c` for every non-initial character. Merges
/// then repeatedly join the most frequent adjacent symbol pair (ties broken by
/// the lexicographically smallest pair) until `vocab_size` is reached or no
/// pair remains. Training is fully deterministic; `seed` is accepted for
/// interface stability and does not influence the result.
pub fn train_vocab_from_texts<'a, I>(texts: I, vocab_size: usize, _seed: u64) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for t in texts {
        for w in t.split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Config("cannot train a vocabulary on an empty corpus".into()));
    }

    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    for w in word_counts.keys() {
        for (i, c) in w.chars().enumerate() {
            alphabet.insert(if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            });
        }
    }
    let min_size = SPECIAL_TOKENS.len() + alphabet.len();
    if vocab_size < min_size {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is below the {min_size} required for specials and alphabet"
        )));
    }

    // Symbols are interned; merged strings that already exist reuse their id.
    let mut symbols: Vec<String> = Vec::new();
    let mut sym_index: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        if let Some(&id) = sym_index.get(&s) {
            return id;
        }
        let id = symbols.len() as u32;
        sym_index.insert(s.clone(), id);
        symbols.push(s);
        id
    };

    let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut in_vocab: BTreeSet<String> = BTreeSet::new();
    for a in &alphabet {
        vocab.push(a.clone());
        in_vocab.insert(a.clone());
    }

    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .iter()
        .map(|(w, &n)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    let s = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    intern(s, &mut symbols)
                })
                .collect();
            (syms, n)
        })
        .collect();

    while vocab.len() < vocab_size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                // smaller pair wins ties, so reverse the string order
                let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((a, b), _)) = best else { break };
        let merged = format!(
            "{}{}",
            symbols[a as usize],
            symbols[b as usize].trim_start_matches(CONTINUATION)
        );
        let m = intern(merged.clone(), &mut symbols);
        for (syms, _) in words.iter_mut() {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(m);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
        if in_vocab.insert(merged.clone()) {
            vocab.push(merged);
        }
    }
    Vocab::from_tokens(vocab)
}
