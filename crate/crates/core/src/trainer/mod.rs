//! Training loops: past-dialogue pre-training, metadata fine-tuning, the
//! two-stage per-speaker baseline and probability-space interpolation.
//!
//! Optimization is AdamW (decoupled weight decay on matrices only) with
//! linear warmup and inverse-square-root decay, global gradient-norm
//! clipping, and token-budget batches. Validation loss is the
//! token-weighted mean NLL, evaluated before training and after each epoch.

mod data;
mod lerp;
mod optim;
mod run;
mod speaker;
mod stopping;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, KeyRegistry, KeySet, Split};
use crate::model::ModelError;

pub use data::{visible_context, EncodedSplit, Featurizer};
pub use lerp::{lerp_distributions, lerp_row, lerp_scores, LerpScores, DEFAULT_LERP_WEIGHT};
pub use optim::{AdamW, Schedule};
pub use run::{evaluate, train, train_encoded, EpochLoss, RunRecord};
pub use speaker::{speaker_finetune, speaker_finetune_pipeline, SpeakerModels};
pub use stopping::{stopping_epoch, EarlyStopping, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    PastDialogue,
    Metadata,
    None,
}

impl std::str::FromStr for ContextSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "past_dialogue" => Ok(ContextSource::PastDialogue),
            "metadata" => Ok(ContextSource::Metadata),
            "none" => Ok(ContextSource::None),
            other => Err(format!("unknown context source \"{other}\"")),
        }
    }
}

/// Defaults are tuned for the tiny desk-scale models, not the full-size
/// presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_tokens: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub context_source: ContextSource,
    /// Key patterns such as `speaker.*`; `None` keeps all metadata.
    pub metadata_mask: Option<Vec<String>>,
    pub dropout: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub warmup_frac: f64,
    pub min_delta: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_tokens: 500,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            context_source: ContextSource::Metadata,
            metadata_mask: None,
            dropout: 0.1,
            weight_decay: 0.01,
            betas: (0.9, 0.98),
            eps: 1e-8,
            warmup_frac: 0.04,
            min_delta: 1e-5,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: &str| Err(TrainerError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.max_epochs == 0 || self.batch_tokens == 0 {
            return bad("max_epochs and batch_tokens must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn mask(&self) -> Result<Option<KeySet>, TrainerError> {
        match &self.metadata_mask {
            None => Ok(None),
            Some(entries) => Ok(Some(KeyRegistry::default().parse_mask(entries)?)),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("{0} split has no usable examples")]
    EmptySplit(Split),
    #[error("speaker \"{0}\" has no training samples")]
    UnknownSpeaker(String),
    #[error("vocabulary sizes differ: {0} vs {1}")]
    VocabMismatch(usize, usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}
