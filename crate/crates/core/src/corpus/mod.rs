//! Dialogue corpora with speaker and production metadata.

mod io;
mod keys;
mod normalize;
mod past;
pub mod synthetic;
mod types;

use thiserror::Error;

pub use io::{load_corpus, load_corpus_with, parse_record, read_samples, save_corpus, write_samples, LoadOptions};
pub use keys::{KeyRegistry, KeySet, MetaKey, DEFAULT_KEY_REGISTRY};
pub use normalize::{
    default_synonyms, normalize_metadata, normalize_raw_metadata, normalize_text, normalize_value, SynonymTable,
    DEFAULT_SYNONYMS,
};
pub use past::{build_past_context, past_only, select_metadata, DEFAULT_PAST_LINES};
pub use synthetic::{generate_dialogues, generate_synthetic, DialogueSpec, SyntheticSpec};
pub use types::{ContextSet, ContextVariable, CorpusSplits, Sample, Split};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown metadata key \"{0}\"")]
    UnknownKey(String),
    #[error("duplicate metadata key \"{0}\"")]
    DuplicateKey(String),
    #[error("unknown split \"{0}\"")]
    UnknownSplit(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("speaker \"{0}\" appears in test_unseen and in train/valid")]
    SplitViolation(String),
    #[error("{kind} \"{id}\" has conflicting profiles across samples")]
    ProfileConflict { kind: &'static str, id: String },
    #[error("sample with empty utterance")]
    EmptyUtterance,
    #[error("timestamps decrease at line {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("at most 3 past-dialogue slots exist, asked for {0}")]
    TooManyPastSlots(usize),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
