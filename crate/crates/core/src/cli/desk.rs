//! Desk-scale experiment building blocks shared by the subcommands, the
//! built-in recipes and the acceptance suite.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    generate_dialogues, generate_synthetic, ContextSet, CorpusSplits, DialogueSpec, KeySet, Split, SyntheticSpec,
};
use crate::embedder::{Embedder, EmbedderConfig};
use crate::metrics::{corpus_pmi, perplexity, smrr_tol, PmiReport, ScoreMatrix, Segment};
use crate::model::{log_likelihood_batch, match_width, param_count, ArchConfig, Example, ModelParameters};
use crate::tokenizer::{train_bpe, BpeModel, BpeTrainConfig};
use crate::trainer::{train, visible_context, ContextSource, EncodedSplit, Featurizer, RunRecord, TrainConfig};

use super::CliError;

pub const DESK_VOCAB_CAP: usize = 600;
pub const DESK_D_CTX: usize = 64;
const SCORE_CHUNK_TOKENS: usize = 2048;

/// Everything a desk-scale run shares across seeds.
#[derive(Debug, Clone)]
pub struct World {
    pub corpus: CorpusSplits,
    pub bpe: BpeModel,
    pub embedder: Embedder,
    pub arch: ArchConfig,
    pub base_arch: ArchConfig,
}

/// Trains the tokenizer on the given training texts and sizes the tiny
/// preset and its parameter-matched baseline around it.
pub fn build_world<'a>(
    corpus: CorpusSplits,
    bpe_texts: impl IntoIterator<Item = &'a str>,
    vocab_cap: usize,
    d_ctx: usize,
) -> Result<World, CliError> {
    let bpe = train_bpe(bpe_texts, &BpeTrainConfig { vocab_cap, ..Default::default() })?;
    let embedder = Embedder::new(EmbedderConfig::with_dim(d_ctx))?;
    let arch = ArchConfig::tiny_contextual(bpe.vocab_size(), d_ctx);
    let base_arch = match_width(&arch.as_base(), param_count(&arch)?)?;
    Ok(World { corpus, bpe, embedder, arch, base_arch })
}

pub fn synthetic_world(data_seed: u64, spec: &SyntheticSpec) -> Result<World, CliError> {
    let corpus = generate_synthetic(data_seed, spec)?;
    let texts: Vec<String> = corpus.split(Split::Train).map(|s| s.utterance.clone()).collect();
    build_world(corpus, texts.iter().map(String::as_str), DESK_VOCAB_CAP, DESK_D_CTX)
}

/// Fine-tuning world plus a past-dialogue corpus; the tokenizer sees the
/// training text of both.
pub fn pretraining_worlds(
    data_seed: u64,
    spec: &SyntheticSpec,
    dialogues: &DialogueSpec,
) -> Result<(World, CorpusSplits), CliError> {
    let corpus = generate_synthetic(data_seed, spec)?;
    let docs = generate_dialogues(data_seed, dialogues)?;
    let texts: Vec<String> =
        corpus.split(Split::Train).chain(docs.split(Split::Train)).map(|s| s.utterance.clone()).collect();
    let world = build_world(corpus, texts.iter().map(String::as_str), DESK_VOCAB_CAP, DESK_D_CTX)?;
    Ok((world, docs))
}

/// A model variant: the baseline or a contextual model restricted to a
/// metadata group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    BaseLm,
    Speaker,
    Production,
    SpeakerProduction,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::BaseLm, Arm::Speaker, Arm::Production, Arm::SpeakerProduction];

    pub fn name(self) -> &'static str {
        match self {
            Arm::BaseLm => "base_lm",
            Arm::Speaker => "lmcue_s",
            Arm::Production => "lmcue_p",
            Arm::SpeakerProduction => "lmcue_sp",
        }
    }

    pub fn mask(self) -> Option<Vec<String>> {
        match self {
            Arm::BaseLm => None,
            Arm::Speaker => Some(vec!["speaker.*".into()]),
            Arm::Production => Some(vec!["production.*".into()]),
            Arm::SpeakerProduction => Some(vec!["speaker.*".into(), "production.*".into()]),
        }
    }

    pub fn source(self) -> ContextSource {
        match self {
            Arm::BaseLm => ContextSource::None,
            _ => ContextSource::Metadata,
        }
    }

    pub fn config(self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig { seed, context_source: self.source(), metadata_mask: self.mask(), ..base.clone() }
    }
}

impl World {
    pub fn featurizer(&self) -> Featurizer<'_> {
        Featurizer::new(&self.bpe, &self.embedder, self.arch.max_seq_len)
    }

    pub fn arch_for(&self, arm: Arm) -> &ArchConfig {
        if arm == Arm::BaseLm {
            &self.base_arch
        } else {
            &self.arch
        }
    }

    /// Trains `arm` from `init`, or from a fresh initialisation drawn
    /// with `seed`.
    pub fn train_arm(
        &self,
        arm: Arm,
        cfg: &TrainConfig,
        seed: u64,
        init: Option<ModelParameters>,
    ) -> Result<(ModelParameters, RunRecord), CliError> {
        let params = match init {
            Some(p) => p,
            None => ModelParameters::init(self.arch_for(arm), seed)?,
        };
        Ok(train(params, &self.corpus, &self.featurizer(), &arm.config(cfg, seed))?)
    }

    pub fn mask(arm: Arm) -> Result<Option<KeySet>, CliError> {
        Ok(arm.config(&TrainConfig::default(), 0).mask()?)
    }

    pub fn encode(&self, split: Split, arm: Arm) -> Result<EncodedSplit, CliError> {
        let mask = World::mask(arm)?;
        Ok(self.featurizer().encode(self.corpus.split(split), arm.source(), mask.as_ref()))
    }

    pub fn perplexity(&self, params: &ModelParameters, arm: Arm, split: Split) -> Result<f64, CliError> {
        let mask = World::mask(arm)?;
        Ok(split_perplexity(params, &self.corpus, &self.featurizer(), arm.source(), mask.as_ref(), split, None)?.ppl)
    }

    pub fn score_matrix(&self, params: &ModelParameters, arm: Arm, split: Split, mean: bool) -> Result<ScoreMatrix, CliError> {
        let mask = World::mask(arm)?;
        speaker_score_matrix(params, &self.corpus, &self.featurizer(), arm.source(), mask.as_ref(), split, mean)
    }

    pub fn smrr(&self, params: &ModelParameters, arm: Arm, split: Split) -> Result<f64, CliError> {
        Ok(smrr_tol(&self.score_matrix(params, arm, split, false)?, 0.0))
    }

    pub fn pmi(
        &self,
        ctx_model: &ModelParameters,
        base_model: &ModelParameters,
        arm: Arm,
        split: Split,
        permute_seed: Option<u64>,
    ) -> Result<PmiReport, CliError> {
        let mask = World::mask(arm)?;
        let view = ContextView { corpus: &self.corpus, feats: self.featurizer(), source: arm.source(), mask: mask.as_ref() };
        let pairs = view.pairs(split, permute_seed, None)?;
        let enc = view.feats.encode_pairs(pairs.iter().map(|(_, text, ctx)| (text.as_str(), ctx.clone())));
        let mut report = corpus_pmi(ctx_model, base_model, &segments(&enc, &pairs))?;
        report.seed = permute_seed;
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerplexityResult {
    pub ppl: f64,
    pub mean_nll: f64,
    pub n_tokens: usize,
}

/// Perplexity of a split (optionally one speaker's lines) with the contexts
/// `source` and `mask` expose.
pub fn split_perplexity(
    params: &ModelParameters,
    corpus: &CorpusSplits,
    feats: &Featurizer,
    source: ContextSource,
    mask: Option<&KeySet>,
    split: Split,
    speaker: Option<&str>,
) -> Result<PerplexityResult, CliError> {
    let samples = corpus.split(split).filter(|s| speaker.is_none_or(|id| s.speaker_id == id));
    let enc = feats.encode(samples, source, mask);
    let lp = split_logprobs(params, &enc)?;
    let ppl = perplexity(&lp, lp.len())?;
    Ok(PerplexityResult { ppl, mean_nll: ppl.ln(), n_tokens: lp.len() })
}

/// Speaker-by-profile log-likelihood matrix over the speakers of `split`.
/// Cell `(j, i)` scores speaker `i`'s lines conditioned on speaker `j`'s
/// full profile; `mean` scores by per-token average instead of the total.
pub fn speaker_score_matrix(
    params: &ModelParameters,
    corpus: &CorpusSplits,
    feats: &Featurizer,
    source: ContextSource,
    mask: Option<&KeySet>,
    split: Split,
    mean: bool,
) -> Result<ScoreMatrix, CliError> {
    let speakers = corpus.speakers_in(split);
    let profiles: Vec<Vec<_>> = speakers
        .iter()
        .map(|s| feats.context(&visible_context(&corpus.profile_context(s), source, mask)))
        .collect();
    let lines: Vec<Vec<_>> = speakers
        .iter()
        .map(|s| corpus.split(split).filter(|x| &x.speaker_id == s).map(|x| feats.tokens(&x.utterance)).collect())
        .collect();
    ScoreMatrix::build(speakers, |j, i| -> Result<f64, CliError> {
        let batch: Vec<Example> = lines[i].iter().map(|t| Example::new(&profiles[j], t)).collect();
        let scored = log_likelihood_batch(params, &batch)?;
        let total: f64 = scored.iter().map(|l| l.total).sum();
        let n: usize = scored.iter().map(|l| l.n_tokens()).sum();
        Ok(if mean { total / n.max(1) as f64 } else { total })
    })?
    .map_err(CliError::from)
}

/// How a corpus split is presented to a contextual model.
#[derive(Debug, Clone, Copy)]
pub struct ContextView<'a> {
    pub corpus: &'a CorpusSplits,
    pub feats: Featurizer<'a>,
    pub source: ContextSource,
    pub mask: Option<&'a KeySet>,
}

impl ContextView<'_> {
    /// `(segment id, text, visible context)` for each sample of `split`.
    /// Contexts are shuffled across samples when `permute_seed` is set;
    /// `hypotheses` replaces texts by split index and keeps only the
    /// listed samples.
    pub fn pairs(
        &self,
        split: Split,
        permute_seed: Option<u64>,
        hypotheses: Option<&BTreeMap<usize, String>>,
    ) -> Result<Vec<(String, String, ContextSet)>, CliError> {
        let samples: Vec<_> = self.corpus.split(split).collect();
        let mut contexts: Vec<&ContextSet> = samples.iter().map(|s| &s.context).collect();
        if let Some(seed) = permute_seed {
            contexts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let visible = |i: usize| visible_context(contexts[i], self.source, self.mask);
        match hypotheses {
            None => Ok(samples
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("{split}-{i}"), s.utterance.clone(), visible(i)))
                .collect()),
            Some(h) => h
                .iter()
                .map(|(&i, text)| {
                    if i >= samples.len() {
                        return Err(CliError::Data(format!("sample_id {i} is outside the {split} split")));
                    }
                    Ok((i.to_string(), text.clone(), visible(i)))
                })
                .collect(),
        }
    }
}

/// Borrowed PMI segments over an encoding of `pairs`.
pub fn segments<'a>(enc: &'a EncodedSplit, pairs: &[(String, String, ContextSet)]) -> Vec<Segment<'a>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (id, text, _))| Segment {
            id: id.clone(),
            text: text.clone(),
            ctx: &enc.contexts[enc.ctx_index[i]],
            tokens: &enc.tokens[i],
        })
        .collect()
}

/// All per-token log-probabilities of an encoded split.
pub fn split_logprobs(params: &ModelParameters, enc: &EncodedSplit) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for chunk in enc.eval_chunks(SCORE_CHUNK_TOKENS) {
        for ll in log_likelihood_batch(params, &enc.examples(&chunk))? {
            out.extend(ll.per_token);
        }
    }
    Ok(out)
}
