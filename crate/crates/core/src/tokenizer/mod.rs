//! WordPiece tokenization, language tagging, and the segment tokens that mark
//! each Korean or English run.
//!
//! A tokenized note looks like
//!
//! ```text
//! [CLS] 열 이 fe ##ver 39 [SEP]
//! ```
//!
//! and after bridging
//!
//! ```text
//! [CLS] [B-K] 열 이 [B-E] fe ##ver 39 [SEP]
//! ```
//!
//! Numbers and punctuation never open a run of their own: they take the
//! language of the closest preceding Korean/English token (or the following
//! one when they lead the note).

mod vocab;

pub use vocab::{
    train_vocab, train_vocab_from_texts, Vocab, B_E, B_K, CLS, CONTINUATION, PAD, SEP,
    SPECIAL_TOKENS, UNK,
};

use serde::{Deserialize, Serialize};

use crate::preprocess::{is_korean, CharClass};

/// Longest whitespace word the matcher will try to segment.
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lang {
    Kor,
    Eng,
    Seg,
    Cls,
    Sep,
    Pad,
}

impl Lang {
    pub fn is_content(self) -> bool {
        matches!(self, Lang::Kor | Lang::Eng)
    }

    fn segment_id(self) -> Option<u32> {
        match self {
            Lang::Kor => Some(B_K),
            Lang::Eng => Some(B_E),
            _ => None,
        }
    }
}

/// Parallel per-token arrays. `word_id` is -1 for specials.
///
/// For `[UNK]` tokens `tokens` keeps the original word so English words can
/// still be reassembled from the sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInput {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    pub lang: Vec<Lang>,
    pub word_id: Vec<i32>,
    pub attn_mask: Vec<u8>,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Tokens with `attn_mask = 1`.
    pub fn active_len(&self) -> usize {
        self.attn_mask.iter().filter(|&&m| m == 1).count()
    }

    fn push(&mut self, id: u32, token: impl Into<String>, lang: Lang, word_id: i32, mask: u8) {
        self.ids.push(id);
        self.tokens.push(token.into());
        self.lang.push(lang);
        self.word_id.push(word_id);
        self.attn_mask.push(mask);
    }

    fn push_special(&mut self, id: u32, lang: Lang) {
        let mask = u8::from(id != PAD);
        self.push(id, SPECIAL_TOKENS[id as usize], lang, -1, mask);
    }

    fn with_capacity(n: usize) -> Self {
        TokenizedInput {
            ids: Vec::with_capacity(n),
            tokens: Vec::with_capacity(n),
            lang: Vec::with_capacity(n),
            word_id: Vec::with_capacity(n),
            attn_mask: Vec::with_capacity(n),
        }
    }
}

/// A tokenized sequence carrying segment tokens; `s` counts them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgedInput {
    pub seq: TokenizedInput,
    pub s: usize,
}

impl BridgedInput {
    /// Wraps a sequence without inserting anything (the no-bridging path).
    pub fn plain(seq: TokenizedInput) -> Self {
        BridgedInput { seq, s: 0 }
    }
}

fn surface_lang(surface: &str) -> Option<Lang> {
    let body = surface.strip_prefix(CONTINUATION).unwrap_or(surface);
    let (mut kor, mut eng) = (0usize, 0usize);
    for c in body.chars() {
        if is_korean(c) {
            kor += 1;
        } else if CharClass::of(c) == Some(CharClass::Eng) {
            eng += 1;
        }
    }
    match (kor, eng) {
        (0, 0) => None,
        (k, e) if k >= e => Some(Lang::Kor),
        _ => Some(Lang::Eng),
    }
}

/// Greedy longest-match WordPiece for one word, `None` when some position
/// cannot be matched.
fn wordpiece(word: &str, vocab: &Vocab) -> Option<Vec<(u32, String)>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return None;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let body: String = chars[start..end].iter().collect();
            let cand = if start == 0 {
                body
            } else {
                format!("{CONTINUATION}{body}")
            };
            if let Some(id) = vocab.id(&cand) {
                found = Some((id, cand));
                break;
            }
            end -= 1;
        }
        pieces.push(found?);
        start = end;
    }
    Some(pieces)
}

/// `[CLS]` + WordPiece tokens of every whitespace word + `[SEP]`.
pub fn tokenize(text: &str, vocab: &Vocab) -> TokenizedInput {
    let mut out = TokenizedInput::with_capacity(text.len() / 2 + 2);
    out.push_special(CLS, Lang::Cls);
    let mut raw_lang: Vec<Option<Lang>> = vec![None];
    for (wid, word) in text.split_whitespace().enumerate() {
        match wordpiece(word, vocab) {
            Some(pieces) => {
                for (id, surface) in pieces {
                    raw_lang.push(surface_lang(&surface));
                    out.push(id, surface, Lang::Kor, wid as i32, 1);
                }
            }
            None => {
                raw_lang.push(surface_lang(word));
                out.push(UNK, word, Lang::Kor, wid as i32, 1);
            }
        }
    }

    // Neutral tokens inherit the previous content language, leading ones the
    // next; a note with no letters at all defaults to Korean.
    let n = out.len();
    let mut resolved: Vec<Option<Lang>> = raw_lang.clone();
    let mut prev = None;
    for r in resolved.iter_mut().skip(1) {
        match r {
            Some(l) => prev = Some(*l),
            None => *r = prev,
        }
    }
    let mut next = None;
    for r in resolved.iter_mut().skip(1).rev() {
        match r {
            Some(l) => next = Some(*l),
            None => *r = next,
        }
    }
    for i in 1..n {
        out.lang[i] = resolved[i].unwrap_or(Lang::Kor);
    }
    out.push_special(SEP, Lang::Sep);
    out
}

/// Prepends `[B-K]`/`[B-E]` wherever the content language changes. Existing
/// segment tokens are respected, so bridging twice adds nothing.
pub fn insert_bridging_tokens(tok: &TokenizedInput) -> BridgedInput {
    let mut out = TokenizedInput::with_capacity(tok.len() + 8);
    let mut current: Option<Lang> = None;
    let mut s = 0;
    for i in 0..tok.len() {
        let lang = tok.lang[i];
        if lang == Lang::Seg {
            current = match tok.ids[i] {
                B_K => Some(Lang::Kor),
                B_E => Some(Lang::Eng),
                _ => current,
            };
        } else if lang.is_content() && current != Some(lang) {
            let seg = lang.segment_id().expect("content language");
            out.push(seg, SPECIAL_TOKENS[seg as usize], Lang::Seg, -1, 1);
            s += 1;
            current = Some(lang);
        }
        out.push(
            tok.ids[i],
            tok.tokens[i].clone(),
            lang,
            tok.word_id[i],
            tok.attn_mask[i],
        );
    }
    BridgedInput { seq: out, s }
}

/// Cuts to `max_len` keeping `[SEP]` last, or pads with `[PAD]`.
///
/// A segment token left directly before `[SEP]` by the cut opens no run and is
/// dropped.
///
/// # Panics
///
/// When `max_len < 2`.
pub fn truncate_pad(tok: BridgedInput, max_len: usize) -> BridgedInput {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
    let BridgedInput { mut seq, mut s } = tok;

    let active = seq.active_len();
    seq.ids.truncate(active);
    seq.tokens.truncate(active);
    seq.lang.truncate(active);
    seq.word_id.truncate(active);
    seq.attn_mask.truncate(active);

    if seq.len() > max_len {
        let dropped_segs = seq.lang[max_len - 1..]
            .iter()
            .filter(|&&l| l == Lang::Seg)
            .count();
        s -= dropped_segs;
        let keep = max_len - 1;
        seq.ids.truncate(keep);
        seq.tokens.truncate(keep);
        seq.lang.truncate(keep);
        seq.word_id.truncate(keep);
        seq.attn_mask.truncate(keep);
        seq.push_special(SEP, Lang::Sep);
    }

    while seq.len() >= 2 && seq.lang[seq.len() - 2] == Lang::Seg {
        let at = seq.len() - 2;
        seq.ids.remove(at);
        seq.tokens.remove(at);
        seq.lang.remove(at);
        seq.word_id.remove(at);
        seq.attn_mask.remove(at);
        s -= 1;
    }

    while seq.len() < max_len {
        seq.push_special(PAD, Lang::Pad);
    }
    BridgedInput { seq, s }
}

/// Strips specials and `##` and joins words with single spaces.
pub fn detokenize(tok: &TokenizedInput) -> String {
    let mut out = String::new();
    let mut last_word = None;
    for i in 0..tok.len() {
        if tok.word_id[i] < 0 {
            continue;
        }
        if last_word.is_some() && last_word != Some(tok.word_id[i]) {
            out.push(' ');
        }
        let t = &tok.tokens[i];
        out.push_str(t.strip_prefix(CONTINUATION).unwrap_or(t));
        last_word = Some(tok.word_id[i]);
    }
    out
}
