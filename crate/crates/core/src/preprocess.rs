//! Note cleanup: medical symbol/abbreviation decoding followed by spacing
//! normalization between Korean, English, numeric and special characters.
//!
//! Decoding always runs first. Symbol keys such as `C/S/R` contain special
//! characters that the spacing pass would otherwise pull apart.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PIRecord;
use crate::error::{Error, Result};

/// Character class used for spacing, span segmentation and statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CharClass {
    Kor,
    Eng,
    Num,
    Special,
}

impl CharClass {
    /// `None` for whitespace.
    pub fn of(c: char) -> Option<CharClass> {
        if c.is_whitespace() {
            None
        } else if is_korean(c) {
            Some(CharClass::Kor)
        } else if c.is_ascii_alphabetic() {
            Some(CharClass::Eng)
        } else if c.is_ascii_digit() {
            Some(CharClass::Num)
        } else {
            Some(CharClass::Special)
        }
    }
}

/// Hangul syllable blocks and conjoining jamo.
pub fn is_korean(c: char) -> bool {
    matches!(c, '\u{AC00}'..='\u{D7A3}' | '\u{1100}'..='\u{11FF}')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMode {
    /// Match only when not flanked by Latin letters.
    WordBoundary,
    /// Match anywhere.
    ExactSymbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbbrevEntry {
    pub surface: String,
    pub expansion: String,
    pub mode: MatchMode,
}

/// Surface form to expansion map, ordered longest surface first.
#[derive(Debug, Clone, Default)]
pub struct AbbrevLexicon {
    entries: Vec<AbbrevEntry>,
    by_first: HashMap<char, Vec<usize>>,
}

const STARTER_LEXICON: &str = include_str!("../data/abbreviations.tsv");

impl AbbrevLexicon {
    pub fn new(entries: Vec<AbbrevEntry>) -> Result<Self> {
        let mut seen: HashMap<String, String> = HashMap::new();
        let mut kept = Vec::new();
        for (i, e) in entries.into_iter().enumerate() {
            if e.surface.is_empty() {
                return Err(Error::Parse {
                    what: "abbreviation lexicon",
                    line: i + 1,
                    reason: "empty surface form".into(),
                });
            }
            match seen.get(&e.surface) {
                Some(prev) if *prev != e.expansion => {
                    return Err(Error::Duplicate {
                        what: "abbreviation with conflicting expansion",
                        key: e.surface,
                        line: i + 1,
                    })
                }
                Some(_) => continue,
                None => {
                    seen.insert(e.surface.clone(), e.expansion.clone());
                    kept.push(e);
                }
            }
        }
        kept.sort_by(|a, b| {
            b.surface
                .chars()
                .count()
                .cmp(&a.surface.chars().count())
                .then_with(|| a.surface.cmp(&b.surface))
        });
        let mut by_first: HashMap<char, Vec<usize>> = HashMap::new();
        for (i, e) in kept.iter().enumerate() {
            let c = e.surface.chars().next().expect("non-empty");
            by_first.entry(c).or_default().push(i);
        }
        Ok(AbbrevLexicon {
            entries: kept,
            by_first,
        })
    }

    pub fn parse(content: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols.len() > 3 {
                return Err(Error::Parse {
                    what: "abbreviation lexicon",
                    line: i + 1,
                    reason: format!("expected 2 or 3 tab-separated columns, got {}", cols.len()),
                });
            }
            let mode = match cols.get(2).map(|s| s.trim()) {
                None | Some("word") => MatchMode::WordBoundary,
                Some("symbol") => MatchMode::ExactSymbol,
                Some(other) => {
                    return Err(Error::Parse {
                        what: "abbreviation lexicon",
                        line: i + 1,
                        reason: format!("unknown match mode `{other}`"),
                    })
                }
            };
            let surface = cols[0].trim();
            if surface.is_empty() {
                return Err(Error::Parse {
                    what: "abbreviation lexicon",
                    line: i + 1,
                    reason: "empty surface form".into(),
                });
            }
            entries.push(AbbrevEntry {
                surface: surface.to_string(),
                expansion: cols[1].trim().to_string(),
                mode,
            });
        }
        Self::new(entries)
    }

    /// The bundled lexicon of common clinical shorthand.
    pub fn starter() -> Self {
        Self::parse(STARTER_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn entries(&self) -> &[AbbrevEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads a `surface<TAB>expansion<TAB>mode` file; mode is `word` (default)
/// or `symbol`. Lines starting with `#` are comments.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<AbbrevLexicon> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AbbrevLexicon::parse(&content)
}

/// Greedy longest-match replacement in a single left-to-right pass.
/// Expansions are emitted verbatim and never re-scanned.
pub fn decode_abbreviations(text: &str, lexicon: &AbbrevLexicon) -> String {
    if lexicon.is_empty() {
        return text.to_string();
    }
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    'outer: while i < chars.len() {
        if let Some(cands) = lexicon.by_first.get(&chars[i]) {
            for &ci in cands {
                let e = &lexicon.entries[ci];
                let key: Vec<char> = e.surface.chars().collect();
                let end = i + key.len();
                if end > chars.len() || chars[i..end] != key[..] {
                    continue;
                }
                if e.mode == MatchMode::WordBoundary {
                    let before = i.checked_sub(1).map(|j| chars[j]);
                    let after = chars.get(end).copied();
                    let letter = |c: Option<char>| c.is_some_and(|c| c.is_ascii_alphabetic());
                    if letter(before) || letter(after) {
                        continue;
                    }
                }
                out.push_str(&e.expansion);
                i = end;
                continue 'outer;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    out
}

/// Inserts one space at every character-class boundary, collapses whitespace
/// runs and trims.
pub fn normalize_spacing(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + text.len() / 4);
    let mut last: Option<CharClass> = None;
    let mut pending_space = false;
    for c in text.chars() {
        match CharClass::of(c) {
            None => pending_space = true,
            Some(class) => {
                if let Some(prev) = last {
                    if pending_space || prev != class {
                        out.push(' ');
                    }
                }
                out.push(c);
                last = Some(class);
                pending_space = false;
            }
        }
    }
    out
}

/// Maximal same-class run of non-whitespace codepoints; offsets are
/// codepoint indices, `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSpan {
    pub start: usize,
    pub end: usize,
    pub class: CharClass,
}

/// Whitespace always ends a span, so two spans only touch when their
/// classes differ.
pub fn segment_language_spans(text: &str) -> Vec<LanguageSpan> {
    let mut spans: Vec<LanguageSpan> = Vec::new();
    let mut open: Option<LanguageSpan> = None;
    for (i, c) in text.chars().enumerate() {
        match CharClass::of(c) {
            None => {
                if let Some(s) = open.take() {
                    spans.push(s);
                }
            }
            Some(class) => match open.as_mut() {
                Some(s) if s.class == class => s.end = i + 1,
                _ => {
                    if let Some(s) = open.take() {
                        spans.push(s);
                    }
                    open = Some(LanguageSpan {
                        start: i,
                        end: i + 1,
                        class,
                    });
                }
            },
        }
    }
    spans.extend(open);
    spans
}

/// Decode then normalize; id and label pass through unchanged.
pub fn preprocess_record(record: &PIRecord, lexicon: &AbbrevLexicon) -> Result<PIRecord> {
    let text = normalize_spacing(&decode_abbreviations(&record.text, lexicon));
    if text.is_empty() {
        return Err(Error::EmptyAfterPreprocessing {
            id: record.id.clone(),
        });
    }
    Ok(PIRecord {
        id: record.id.clone(),
        text,
        label: record.label,
    })
}

pub fn preprocess_records(records: &[PIRecord], lexicon: &AbbrevLexicon) -> Result<Vec<PIRecord>> {
    records
        .iter()
        .map(|r| preprocess_record(r, lexicon))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig1() -> AbbrevLexicon {
        AbbrevLexicon::parse("C/S/R\tCough/Sputum/Rhinorrhea\tsymbol\nBT\tBody Temperature\tword\n")
            .unwrap()
    }

    #[test]
    fn parses_two_entries() {
        assert_eq!(fig1().len(), 2);
        assert!(AbbrevLexicon::parse("").unwrap().is_empty());
    }

    #[test]
    fn conflicting_duplicate_rejected() {
        let err = AbbrevLexicon::parse("BT\tBody Temperature\nBT\tBlood Test\n").unwrap_err();
        assert!(matches!(err, Error::Duplicate { line: 2, .. }));
        // identical duplicates are harmless
        assert_eq!(
            AbbrevLexicon::parse("BT\tBody Temperature\nBT\tBody Temperature\n")
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn bad_mode_or_columns_rejected() {
        assert!(AbbrevLexicon::parse("BT\tBody\tfuzzy\n").is_err());
        assert!(AbbrevLexicon::parse("BT\n").is_err());
    }

    #[test]
    fn longest_surface_first() {
        let lex = AbbrevLexicon::parse("N/V\tNausea/Vomiting\tsymbol\nN/V/D\tNausea/Vomiting/Diarrhea\tsymbol\n")
            .unwrap();
        assert_eq!(lex.entries()[0].surface, "N/V/D");
        assert_eq!(decode_abbreviations("N/V/D", &lex), "Nausea/Vomiting/Diarrhea");
        assert_eq!(decode_abbreviations("N/V 1회", &lex), "Nausea/Vomiting 1회");
    }

    #[test]
    fn decodes_figure_examples() {
        let lex = fig1();
        assert_eq!(
            decode_abbreviations("C/S/R 있음", &lex),
            "Cough/Sputum/Rhinorrhea 있음"
        );
        assert_eq!(decode_abbreviations("BT 39.2", &lex), "Body Temperature 39.2");
        assert_eq!(decode_abbreviations("ABTC", &lex), "ABTC");
        // Hangul and digits are not letters for the boundary rule.
        assert_eq!(decode_abbreviations("BT는", &lex), "Body Temperature는");
    }

    #[test]
    fn expansions_are_not_rescanned() {
        let lex = AbbrevLexicon::parse("A\tAB\tsymbol\nB\tX\tsymbol\n").unwrap();
        assert_eq!(decode_abbreviations("A", &lex), "AB");
    }

    #[test]
    fn spacing_examples() {
        assert_eq!(normalize_spacing("fever3일"), "fever 3 일");
        assert_eq!(normalize_spacing("39.2"), "39 . 2");
        assert_eq!(normalize_spacing("abc def"), "abc def");
        assert_eq!(normalize_spacing("  a \t\n b  "), "a b");
        assert_eq!(normalize_spacing(""), "");
    }

    #[test]
    fn span_examples() {
        assert_eq!(
            segment_language_spans("열 fever 39"),
            vec![
                LanguageSpan { start: 0, end: 1, class: CharClass::Kor },
                LanguageSpan { start: 2, end: 7, class: CharClass::Eng },
                LanguageSpan { start: 8, end: 10, class: CharClass::Num },
            ]
        );
        assert!(segment_language_spans("").is_empty());
        assert_eq!(
            segment_language_spans("fever"),
            vec![LanguageSpan { start: 0, end: 5, class: CharClass::Eng }]
        );
    }

    #[test]
    fn full_pipeline_example() {
        let r = PIRecord::new("p1", "BT 39.2, C/S/R", 1);
        let out = preprocess_record(&r, &fig1()).unwrap();
        assert_eq!(out.text, "Body Temperature 39 . 2 , Cough / Sputum / Rhinorrhea");
        assert_eq!((out.id.as_str(), out.label), ("p1", 1));
    }

    #[test]
    fn identity_without_lexicon_or_boundaries() {
        let r = PIRecord::new("p", "fever cough", 0);
        assert_eq!(
            preprocess_record(&r, &AbbrevLexicon::default()).unwrap(),
            r
        );
    }

    #[test]
    fn empty_after_preprocessing_is_an_error() {
        let r = PIRecord::new("p", " \t ", 0);
        assert_eq!(
            preprocess_record(&r, &fig1()).unwrap_err().to_string(),
            "record `p` is empty after preprocessing"
        );
    }

    #[test]
    fn starter_lexicon_contains_figure_entries() {
        let lex = AbbrevLexicon::starter();
        assert!(lex.len() >= 40);
        assert_eq!(
            decode_abbreviations("BT 38 C/S/R", &lex),
            "Body Temperature 38 Cough/Sputum/Rhinorrhea"
        );
    }

    fn mixed() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                "[a-zA-Z]{1,4}",
                "[가-힣]{1,3}",
                "[0-9]{1,3}",
                "[./,()+:-]{1,2}",
                "[ \t]{1,2}",
                Just("\u{1100}".to_string()),
            ],
            0..12,
        )
        .prop_map(|parts| parts.concat())
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(t in mixed()) {
            let once = normalize_spacing(&t);
            prop_assert_eq!(normalize_spacing(&once), once.clone());
        }

        #[test]
        fn spans_tile_non_whitespace(t in mixed()) {
            let chars: Vec<char> = t.chars().collect();
            let spans = segment_language_spans(&t);
            let mut covered = vec![false; chars.len()];
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
                if w[0].end == w[1].start {
                    prop_assert_ne!(w[0].class, w[1].class);
                }
            }
            for s in &spans {
                for (i, c) in covered.iter_mut().enumerate().take(s.end).skip(s.start) {
                    prop_assert_eq!(CharClass::of(chars[i]), Some(s.class));
                    *c = true;
                }
            }
            for (i, c) in chars.iter().enumerate() {
                prop_assert_eq!(covered[i], !c.is_whitespace());
            }
        }

        #[test]
        fn decode_is_idempotent_without_nested_keys(t in mixed()) {
            // No expansion below contains any key.
            let lex = AbbrevLexicon::parse("C/S/R\tCough/Sputum/Rhinorrhea\tsymbol\nBT\tBody Temperature\tword\n").unwrap();
            let text = format!("{t} BT C/S/R{t}");
            let once = decode_abbreviations(&text, &lex);
            prop_assert_eq!(decode_abbreviations(&once, &lex), once.clone());
        }

        #[test]
        fn preprocess_keeps_id_and_label(t in mixed(), label in 0u8..2) {
            let r = PIRecord::new("id-1", format!("x{t}"), label);
            let out = preprocess_record(&r, &AbbrevLexicon::starter()).unwrap();
            prop_assert_eq!(out.id, r.id);
            prop_assert_eq!(out.label, label);
        }
    }
}
