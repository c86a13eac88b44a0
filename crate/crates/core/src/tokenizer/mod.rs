//! Byte-pair-encoding subword tokenizer.
//!
//! Text is split on the ASCII space only. Every word after the first starts
//! with the word-boundary unit [`WORD_BOUNDARY`], so decoding is the exact
//! inverse of encoding for any input. Characters outside the trained
//! alphabet fall back to their UTF-8 bytes (or `<unk>` when byte fallback
//! is off).

mod bpe;
mod io;

use thiserror::Error;

pub use bpe::{train_bpe, BpeModel, BpeTrainConfig, Special, TokenSequence, DEFAULT_VOCAB_CAP, WORD_BOUNDARY};

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("training corpus contains no text")]
    EmptyCorpus,
    #[error("vocabulary cap {cap} is below the base alphabet plus specials ({needed})")]
    CapTooSmall { cap: usize, needed: usize },
    #[error("token id {0} is outside the vocabulary")]
    InvalidTokenId(u32),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
