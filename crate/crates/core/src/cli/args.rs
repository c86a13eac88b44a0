use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::Split;
use crate::model::ModelKind;
use crate::trainer::ContextSource;

#[derive(Debug, Parser)]
#[command(name = "ctxlm", version, about = "Context-conditioned language models for dialogue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Normalized JSONL corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// BPE model file.
    #[arg(long)]
    pub bpe: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConfigArgs {
    /// JSON file with optional `train`, `arch` and `embedder` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ContextArgs {
    /// Metadata keys or groups the model sees (`speaker.*`, `production.genre`, ...).
    #[arg(long, num_args = 1..)]
    pub keys: Vec<String>,
    /// Which context variables to read; defaults to metadata for
    /// contextual models and none for base models.
    #[arg(long, value_parser = parse_source)]
    pub source: Option<ContextSource>,
}

fn parse_source(s: &str) -> Result<ContextSource, String> {
    s.parse()
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: crate::corpus::CorpusError| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Contextual,
    Base,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Contextual => ModelKind::Contextual,
            KindArg::Base => ModelKind::Base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Metadata,
    Dialogue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetArg {
    Tiny,
    Full,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Normalize a raw JSONL corpus.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop speakers whose profile is blank.
        #[arg(long)]
        drop_unannotated: bool,
        /// Skip records whose utterance normalizes to nothing.
        #[arg(long)]
        skip_empty: bool,
        /// TSV of extra key aliases.
        #[arg(long)]
        key_registry: Option<PathBuf>,
        /// TSV of value synonyms.
        #[arg(long)]
        synonyms: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    GenerateSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SyntheticKind::Metadata)]
        kind: SyntheticKind,
        #[arg(long, default_value_t = 20)]
        speakers: usize,
        #[arg(long, default_value_t = 5)]
        productions: usize,
        #[arg(long, default_value_t = 100)]
        lines: usize,
        #[arg(long, default_value_t = 10)]
        unseen: usize,
        #[arg(long, default_value_t = 0.5)]
        marker_strength: f64,
        #[arg(long, default_value_t = 200)]
        documents: usize,
        #[arg(long, default_value_t = 20)]
        lines_per_document: usize,
    },
    /// Train a BPE model on the utterances of one split.
    TrainBpe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = crate::tokenizer::DEFAULT_VOCAB_CAP)]
        vocab_cap: usize,
        #[arg(long)]
        no_byte_fallback: bool,
        #[arg(long, default_value_t = 2)]
        min_pair_count: u64,
        #[arg(long, value_parser = parse_split, default_value = "train")]
        split: Split,
    },
    /// Train a contextual model on past-dialogue contexts.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value_t = PresetArg::Tiny)]
        preset: PresetArg,
        /// Start from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on metadata contexts, or a base model on text alone.
    Finetune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ctx: ContextArgs,
        #[arg(long, value_enum, default_value_t = KindArg::Contextual)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = PresetArg::Tiny)]
        preset: PresetArg,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage per-speaker fine-tuning of a base model.
    SpeakerFinetune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PresetArg::Tiny)]
        preset: PresetArg,
        #[arg(long, required = true, num_args = 1..)]
        speaker: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Perplexity of a split.
    ScorePpl {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ctx: ContextArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        /// Restrict to one speaker's lines.
        #[arg(long)]
        speaker: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Speaker mean reciprocal rank from a score matrix or a model.
    #[command(alias = "smrr")]
    ScoreSmrr {
        /// Score matrix CSV; when given, no model is needed.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, requires = "bpe")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        bpe: Option<PathBuf>,
        #[arg(long, requires = "corpus")]
        model: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ctx: ContextArgs,
        #[arg(long, value_parser = parse_split, default_value = "test_unseen")]
        split: Split,
        /// Rank by mean per-token log-likelihood instead of the total.
        #[arg(long)]
        mean: bool,
        /// Scores within this distance of the correct one count as ties.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
        /// Where to write the score matrix CSV.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PMI between contexts and utterances (or supplied hypotheses).
    ScorePmi {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ctx: ContextArgs,
        #[arg(long)]
        ctx_model: PathBuf,
        #[arg(long)]
        base_model: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        /// JSONL of {"sample_id", "hypothesis"}; ids index the split's samples.
        #[arg(long)]
        hypotheses: Option<PathBuf>,
        /// Shuffle contexts across samples with this seed.
        #[arg(long)]
        permute_seed: Option<u64>,
        /// JSON summary.
        #[arg(long)]
        out: PathBuf,
        /// Per-segment CSV.
        #[arg(long)]
        segments: Option<PathBuf>,
    },
    /// Tokens and segments whose likelihood changes most with context.
    TokenDeltas {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ctx: ContextArgs,
        #[arg(long)]
        ctx_model: PathBuf,
        #[arg(long)]
        base_model: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        #[arg(long, default_value_t = crate::metrics::DEFAULT_MIN_WORDS)]
        min_words: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perplexity of the probability-space mix of two base models.
    LerpScore {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long)]
        speaker: Option<String>,
        #[arg(long, default_value_t = crate::trainer::DEFAULT_LERP_WEIGHT)]
        lerp_weight: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune once per metadata key and report test perplexity.
    AblateMetadata {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        keys: Vec<String>,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in or JSON recipe over its seeds.
    RunRecipe {
        /// Built-in recipe name (`rqa-synthetic`, `rqb-synthetic`, `rqc-synthetic`).
        #[arg(long, conflicts_with = "recipe")]
        name: Option<String>,
        /// Recipe JSON file.
        #[arg(long)]
        recipe: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated seeds replacing the recipe's.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}
