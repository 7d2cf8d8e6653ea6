//! Emergency triage classification for Korean clinical notes that switch into
//! English mid-sentence.
//!
//! Two additions to a plain transformer encoder are provided and can be
//! toggled independently:
//!
//! - *bridging*: a `[B-K]` or `[B-E]` token in front of every Korean or
//!   English run, see [`tokenizer::insert_bridging_tokens`];
//! - *bio-embedding*: vectors from a frozen medical word-embedding table,
//!   mapped to the encoder width and added onto the subword embeddings of each
//!   English word, see [`bioembed`].
//!
//! ```
//! use biobridge::preprocess::{decode_abbreviations, normalize_spacing, AbbrevLexicon};
//!
//! let lex = AbbrevLexicon::starter();
//! let text = normalize_spacing(&decode_abbreviations("BT 39.2, C/S/R", &lex));
//! assert_eq!(text, "Body Temperature 39 . 2 , Cough / Sputum / Rhinorrhea");
//! ```

pub mod baseline;
pub mod bioembed;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod tokenizer;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/bioembed.md")]
    mod bioembed {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
