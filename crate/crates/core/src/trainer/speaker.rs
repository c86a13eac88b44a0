use crate::corpus::{CorpusSplits, Split};
use crate::model::ModelParameters;

use super::data::Featurizer;
use super::run::{train, train_encoded, RunRecord};
use super::{ContextSource, TrainConfig, TrainerError};

#[derive(Debug, Clone)]
pub struct SpeakerModels {
    pub ft1: ModelParameters,
    pub sp: ModelParameters,
    pub ft1_record: RunRecord,
    pub sp_record: RunRecord,
}

fn base_cfg(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig { context_source: ContextSource::None, metadata_mask: None, ..cfg.clone() }
}

/// Continues training `ft1` on one speaker's train lines. Selection uses the
/// speaker's valid lines, or the whole valid split when the speaker has none.
pub fn speaker_finetune(
    ft1: &ModelParameters,
    corpus: &CorpusSplits,
    feats: &Featurizer,
    speaker_id: &str,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, RunRecord), TrainerError> {
    let cfg = base_cfg(cfg);
    let own = |split: Split| corpus.split(split).filter(move |s| s.speaker_id == speaker_id);
    if own(Split::Train).next().is_none() {
        return Err(TrainerError::UnknownSpeaker(speaker_id.to_string()));
    }
    let train = feats.encode(own(Split::Train), ContextSource::None, None);
    let mut valid = feats.encode(own(Split::Valid), ContextSource::None, None);
    if valid.n_targets() == 0 {
        valid = feats.encode(corpus.split(Split::Valid), ContextSource::None, None);
    }
    train_encoded(ft1.clone(), &train, &valid, &cfg)
}

/// FT1 on the whole train split, then a second stage on `speaker_id` alone.
pub fn speaker_finetune_pipeline(
    pretrained: ModelParameters,
    corpus: &CorpusSplits,
    feats: &Featurizer,
    speaker_id: &str,
    cfg: &TrainConfig,
) -> Result<SpeakerModels, TrainerError> {
    if !corpus.split(Split::Train).any(|s| s.speaker_id == speaker_id) {
        return Err(TrainerError::UnknownSpeaker(speaker_id.to_string()));
    }
    let (ft1, ft1_record) = train(pretrained, corpus, feats, &base_cfg(cfg))?;
    let (sp, sp_record) = speaker_finetune(&ft1, corpus, feats, speaker_id, cfg)?;
    Ok(SpeakerModels { ft1, sp, ft1_record, sp_record })
}
