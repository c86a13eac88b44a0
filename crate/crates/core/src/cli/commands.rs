use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::corpus::{
    generate_dialogues, generate_synthetic, load_corpus, load_corpus_with, save_corpus, CorpusSplits, DialogueSpec,
    KeyRegistry, KeySet, LoadOptions, SynonymTable, SyntheticSpec,
};
use crate::embedder::{Embedder, EmbedderConfig};
use crate::metrics::{corpus_pmi, perplexity, smrr_tol, speaker_rr_tol, token_delta_report, ScoreMatrix};
use crate::model::{match_width, param_count, ArchConfig, ModelKind, ModelParameters};
use crate::tokenizer::{train_bpe, BpeModel, BpeTrainConfig};
use crate::trainer::{
    lerp_scores, speaker_finetune, train, ContextSource, Featurizer, RunRecord, TrainConfig, TrainerError,
};

use super::args::{Command, ConfigArgs, ContextArgs, DataArgs, PresetArg, SyntheticKind};
use super::desk::{segments, speaker_score_matrix, split_perplexity, ContextView, DESK_D_CTX};
use super::manifest::Manifest;
use super::recipes::{builtin_recipe, run_recipe, seeds_from_env, ExperimentRecipe};
use super::CliError;

/// Optional sections of a `--config` file; field names follow the
/// library config types exactly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    train: Option<TrainConfig>,
    arch: Option<ArchConfig>,
    embedder: Option<EmbedderConfig>,
}

fn read_config(args: &ConfigArgs) -> Result<ConfigFile, CliError> {
    match &args.config {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::from(e).context(p.display().to_string()))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn train_config(file: &ConfigFile, seed: Option<u64>) -> TrainConfig {
    let mut cfg = file.train.clone().unwrap_or_default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}

fn with_path<T, E: Into<CliError>>(r: Result<T, E>, path: &Path) -> Result<T, CliError> {
    r.map_err(|e| e.into().context(path.display().to_string()))
}

fn load_bpe(path: &Path) -> Result<BpeModel, CliError> {
    with_path(BpeModel::load(path), path)
}

fn load_model(path: &Path) -> Result<ModelParameters, CliError> {
    with_path(ModelParameters::load(path), path)
}

fn load_data(data: &DataArgs) -> Result<(CorpusSplits, BpeModel), CliError> {
    Ok((with_path(load_corpus(&data.corpus), &data.corpus)?, load_bpe(&data.bpe)?))
}

fn embedder_for(file: &ConfigFile, d_ctx: usize) -> Result<Embedder, CliError> {
    let cfg = file.embedder.clone().unwrap_or_else(|| EmbedderConfig::with_dim(d_ctx));
    if cfg.d_ctx != d_ctx {
        return Err(CliError::Usage(format!("embedder d_ctx {} does not match the model's {d_ctx}", cfg.d_ctx)));
    }
    Ok(Embedder::new(cfg)?)
}

fn resolve_arch(file: &ConfigFile, preset: PresetArg, kind: ModelKind, vocab: usize) -> Result<ArchConfig, CliError> {
    let contextual = match (&file.arch, preset) {
        (Some(a), _) => a.clone(),
        (None, PresetArg::Tiny) => {
            ArchConfig::tiny_contextual(vocab, file.embedder.as_ref().map_or(DESK_D_CTX, |e| e.d_ctx))
        }
        (None, PresetArg::Full) if kind == ModelKind::Base => ArchConfig { vocab_size: vocab, ..ArchConfig::full_base() },
        (None, PresetArg::Full) => ArchConfig { vocab_size: vocab, ..ArchConfig::full_contextual() },
    };
    if contextual.vocab_size != vocab {
        return Err(CliError::Usage(format!(
            "arch vocab_size {} does not match the BPE model's {vocab}",
            contextual.vocab_size
        )));
    }
    contextual.validate()?;
    Ok(match (kind, contextual.kind) {
        (ModelKind::Base, ModelKind::Contextual) => match_width(&contextual.as_base(), param_count(&contextual)?)?,
        _ => contextual,
    })
}

fn initial_params(
    init: Option<&PathBuf>,
    file: &ConfigFile,
    preset: PresetArg,
    kind: ModelKind,
    vocab: usize,
    seed: u64,
) -> Result<ModelParameters, CliError> {
    match init {
        Some(p) => {
            let params = load_model(p)?;
            if params.arch.kind != kind {
                return Err(CliError::Usage(format!("{} holds a {:?} model, expected {kind:?}", p.display(), params.arch.kind)));
            }
            Ok(params)
        }
        None => Ok(ModelParameters::init(&resolve_arch(file, preset, kind, vocab)?, seed)?),
    }
}

fn mask_of(keys: &[String]) -> Result<Option<KeySet>, CliError> {
    if keys.is_empty() {
        Ok(None)
    } else {
        Ok(Some(KeyRegistry::default().parse_mask(keys)?))
    }
}

fn source_for(ctx: &ContextArgs, arch: &ArchConfig) -> ContextSource {
    ctx.source.unwrap_or(if arch.is_contextual() { ContextSource::Metadata } else { ContextSource::None })
}

/// Subcommand name as typed on the command line.
fn command_name(command: &Command) -> String {
    match config_value(command) {
        Value::Object(map) => map.keys().next().map(|k| k.replace('_', "-")).unwrap_or_default(),
        Value::String(s) => s.replace('_', "-"),
        _ => String::new(),
    }
}

fn config_value(command: &Command) -> Value {
    serde_json::to_value(command).expect("commands serialize")
}

/// Prints `value` and writes it to `out` when given, with a manifest.
fn emit(value: &Value, out: Option<&Path>, mut manifest: Manifest, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    stdout.write_all(text.as_bytes())?;
    if let Some(path) = out {
        fs::write(path, &text)?;
        manifest.output(path)?;
        manifest.write_beside(path)?;
    }
    Ok(())
}

fn stamp(mut value: Value, manifest: &Manifest) -> Value {
    if let Value::Object(map) = &mut value {
        map.insert("config_hash".into(), json!(manifest.config_hash));
        map.insert("seed".into(), json!(manifest.seed));
    }
    value
}

fn save_run(params: &ModelParameters, mut record: RunRecord, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    params.save(out)?;
    record.checkpoint = Some(out.display().to_string());
    let mut csv = out.as_os_str().to_owned();
    csv.push(".run.csv");
    let csv = PathBuf::from(csv);
    fs::write(&csv, record.to_csv())?;
    let mut json_path = out.as_os_str().to_owned();
    json_path.push(".run.json");
    let json_path = PathBuf::from(json_path);
    fs::write(&json_path, serde_json::to_string_pretty(&record)? + "\n")?;
    for p in [out, csv.as_path(), json_path.as_path()] {
        manifest.output(p)?;
    }
    log::info!(
        "{}: best epoch {} of {}, valid loss {:.4}",
        out.display(),
        record.best_epoch,
        record.stop_epoch,
        record.best_valid_loss
    );
    Ok(())
}

fn add_inputs(manifest: &mut Manifest, paths: &[Option<&Path>]) -> Result<(), CliError> {
    for p in paths.iter().flatten() {
        manifest.input(p)?;
    }
    Ok(())
}

fn read_hypotheses(path: &Path) -> Result<BTreeMap<usize, String>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        sample_id: String,
        hypothesis: String,
    }
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("{} line {}: {m}", path.display(), n + 1));
        let row: Row = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let id: usize = row.sample_id.parse().map_err(|_| bad(format!("sample_id \"{}\" is not an index", row.sample_id)))?;
        out.insert(id, crate::corpus::normalize_text(&row.hypothesis));
    }
    Ok(out)
}

pub fn run_command(command: &Command) -> Result<(), CliError> {
    run_command_to(command, &mut std::io::stdout().lock())
}

/// Runs `command`, writing its JSON or CSV summary to `stdout`.
pub fn run_command_to(command: &Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    let name = command_name(command);
    match command {
        Command::Preprocess { input, out, drop_unannotated, skip_empty, key_registry, synonyms } => {
            let registry = match key_registry {
                Some(p) => with_path(KeyRegistry::parse_tsv(&fs::read_to_string(p)?), p)?,
                None => KeyRegistry::default(),
            };
            let table = match synonyms {
                Some(p) => Some(with_path(SynonymTable::parse(&fs::read_to_string(p)?), p)?),
                None => None,
            };
            let table = table.as_ref().unwrap_or_else(|| crate::corpus::default_synonyms());
            let opts = LoadOptions { drop_unannotated: *drop_unannotated, skip_empty: *skip_empty };
            let corpus = with_path(load_corpus_with(input, &registry, table, opts), input)?;
            save_corpus(&corpus, out)?;
            let mut m = Manifest::new(&name, None, config_value(command));
            add_inputs(&mut m, &[Some(input), key_registry.as_deref(), synonyms.as_deref()])?;
            m.output(out)?;
            m.write_beside(out)?;
            let counts: BTreeMap<String, usize> = corpus.counts().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            writeln!(stdout, "{}", json!({ "samples": corpus.samples().len(), "splits": counts }))?;
        }
        Command::GenerateSynthetic {
            out,
            seed,
            kind,
            speakers,
            productions,
            lines,
            unseen,
            marker_strength,
            documents,
            lines_per_document,
        } => {
            let corpus = match kind {
                SyntheticKind::Metadata => generate_synthetic(
                    *seed,
                    &SyntheticSpec {
                        n_speakers: *speakers,
                        n_productions: *productions,
                        lines_per_speaker: *lines,
                        marker_strength: *marker_strength,
                        n_unseen_speakers: *unseen,
                    },
                )?,
                SyntheticKind::Dialogue => generate_dialogues(
                    *seed,
                    &DialogueSpec {
                        n_documents: *documents,
                        lines_per_document: *lines_per_document,
                        marker_strength: *marker_strength,
                    },
                )?,
            };
            save_corpus(&corpus, out)?;
            let mut m = Manifest::new(&name, Some(*seed), config_value(command));
            m.output(out)?;
            m.write_beside(out)?;
        }
        Command::TrainBpe { corpus, out, vocab_cap, no_byte_fallback, min_pair_count, split } => {
            let c = with_path(load_corpus(corpus), corpus)?;
            let cfg = BpeTrainConfig { vocab_cap: *vocab_cap, byte_fallback: !no_byte_fallback, min_pair_count: *min_pair_count };
            let texts: Vec<&str> = c.split(*split).map(|s| s.utterance.as_str()).collect();
            let bpe = train_bpe(texts, &cfg)?;
            bpe.save(out)?;
            let mut m = Manifest::new(&name, None, config_value(command));
            m.input(corpus)?;
            m.output(out)?;
            m.write_beside(out)?;
            writeln!(stdout, "{}", json!({ "vocab_size": bpe.vocab_size(), "merges": bpe.merges().len() }))?;
        }
        Command::Pretrain { data, cfg, preset, init, out } => {
            let file = read_config(cfg)?;
            let (corpus, bpe) = load_data(data)?;
            let tc = TrainConfig { context_source: ContextSource::PastDialogue, ..train_config(&file, cfg.seed) };
            let params = initial_params(init.as_ref(), &file, *preset, ModelKind::Contextual, bpe.vocab_size(), tc.seed)?;
            let embedder = embedder_for(&file, params.arch.d_ctx)?;
            let feats = Featurizer::new(&bpe, &embedder, params.arch.max_seq_len);
            let (best, record) = train(params, &corpus, &feats, &tc)?;
            let mut m = Manifest::new(&name, Some(tc.seed), json!({ "command": config_value(command), "train": tc }));
            add_inputs(&mut m, &[Some(&data.corpus), Some(&data.bpe), init.as_deref(), cfg.config.as_deref()])?;
            save_run(&best, record, out, &mut m)?;
            m.write_beside(out)?;
        }
        Command::Finetune { data, cfg, ctx, kind, preset, init, out } => {
            let file = read_config(cfg)?;
            let (corpus, bpe) = load_data(data)?;
            let kind: ModelKind = (*kind).into();
            let mut tc = train_config(&file, cfg.seed);
            let params = initial_params(init.as_ref(), &file, *preset, kind, bpe.vocab_size(), tc.seed)?;
            tc.context_source = source_for(ctx, &params.arch);
            if !ctx.keys.is_empty() {
                tc.metadata_mask = Some(ctx.keys.clone());
            }
            let embedder = embedder_for(&file, params.arch.d_ctx)?;
            let feats = Featurizer::new(&bpe, &embedder, params.arch.max_seq_len);
            let (best, record) = train(params, &corpus, &feats, &tc)?;
            let mut m = Manifest::new(&name, Some(tc.seed), json!({ "command": config_value(command), "train": tc }));
            add_inputs(&mut m, &[Some(&data.corpus), Some(&data.bpe), init.as_deref(), cfg.config.as_deref()])?;
            save_run(&best, record, out, &mut m)?;
            m.write_beside(out)?;
        }
        Command::SpeakerFinetune { data, cfg, init, preset, speaker, out_dir } => {
            let file = read_config(cfg)?;
            let (corpus, bpe) = load_data(data)?;
            let tc = TrainConfig { context_source: ContextSource::None, metadata_mask: None, ..train_config(&file, cfg.seed) };
            for s in speaker {
                if !corpus.split(crate::corpus::Split::Train).any(|x| &x.speaker_id == s) {
                    return Err(TrainerError::UnknownSpeaker(s.clone()).into());
                }
            }
            let params = initial_params(init.as_ref(), &file, *preset, ModelKind::Base, bpe.vocab_size(), tc.seed)?;
            let embedder = embedder_for(&file, params.arch.d_ctx)?;
            let feats = Featurizer::new(&bpe, &embedder, params.arch.max_seq_len);
            fs::create_dir_all(out_dir)?;
            let mut m = Manifest::new(&name, Some(tc.seed), json!({ "command": config_value(command), "train": tc }));
            add_inputs(&mut m, &[Some(&data.corpus), Some(&data.bpe), init.as_deref(), cfg.config.as_deref()])?;
            let (ft1, record) = train(params, &corpus, &feats, &tc)?;
            let ft1_path = out_dir.join("ft1.ckpt");
            save_run(&ft1, record, &ft1_path, &mut m)?;
            for s in speaker {
                let (sp, record) = speaker_finetune(&ft1, &corpus, &feats, s, &tc)?;
                save_run(&sp, record, &out_dir.join(format!("sp-{s}.ckpt")), &mut m)?;
            }
            m.write_beside(&ft1_path)?;
        }
        Command::ScorePpl { data, cfg, ctx, model, split, speaker, out } => {
            let file = read_config(cfg)?;
            let (corpus, bpe) = load_data(data)?;
            let params = load_model(model)?;
            let embedder = embedder_for(&file, params.arch.d_ctx)?;
            let feats = Featurizer::new(&bpe, &embedder, params.arch.max_seq_len);
            let mask = mask_of(&ctx.keys)?;
            let r = split_perplexity(&params, &corpus, &feats, source_for(ctx, &params.arch), mask.as_ref(), *split, speaker.as_deref())?;
            let mut m = Manifest::new(&name, Some(params.seed), config_value(command));
            add_inputs(&mut m, &[Some(&data.corpus), Some(&data.bpe), Some(model), cfg.config.as_deref()])?;
            let v = stamp(json!({ "split": split, "ppl": r.ppl, "mean_nll": r.mean_nll, "n_tokens": r.n_tokens }), &m);
            emit(&v, out.as_deref(), m, stdout)?;
        }
        Command::ScoreSmrr { scores, corpus, bpe, model, cfg, ctx, split, mean, tolerance, matrix, out } => {
            let mut m = Manifest::new(&name, None, config_value(command));
            let sm = match (scores, corpus, bpe, model) {
                (Some(p), _, _, _) => {
                    m.input(p)?;
                    with_path(ScoreMatrix::from_csv(&fs::read_to_string(p)?), p)?
                }
                (None, Some(c), Some(b), Some(mp)) => {
                    let file = read_config(cfg)?;
                    let corpus = with_path(load_corpus(c), c)?;
                    let bpe = load_bpe(b)?;
                    let params = load_model(mp)?;
                    m.seed = Some(params.seed);
                    add_inputs(&mut m, &[Some(c), Some(b), Some(mp), cfg.config.as_deref()])?;
                    let embedder = embedder_for(&file, params.arch.d_ctx)?;
                    let feats = Featurizer::new(&bpe, &embedder, params.arch.max_seq_len);
                    let mask = mask_of(&ctx.keys)?;
                    speaker_score_matrix(&params, &corpus, &feats, source_for(ctx, &params.arch), mask.as_ref(), *split, *mean)?
                }
                _ => return Err(CliError::Usage("give --scores, or --model with --corpus and --bpe".into())),
            };
            if let Some(p) = matrix {
                fs::write(p, sm.to_csv())?;
                m.output(p)?;
            }
            let rr: BTreeMap<&str, f64> =
                sm.speakers().iter().enumerate().map(|(k, s)| (s.as_str(), speaker_rr_tol(&sm, k, *tolerance))).collect();
            let v = stamp(json!({ "smrr": smrr_tol(&sm, *tolerance), "n": sm.n(), "speaker_rr": rr }), &m);
            emit(&v, out.as_deref(), m, stdout)?;
        }
        Command::ScorePmi { data, cfg, ctx, ctx_model, base_model, split, hypotheses, permute_seed, out, segments: seg_out } => {
            let file = read_config(cfg)?;
            let (corpus, bpe) = load_data(data)?;
            let cm = load_model(ctx_model)?;
            let bm = load_model(base_model)?;
            let embedder = embedder_for(&file, cm.arch.d_ctx)?;
            let hyps = hypotheses.as_deref().map(read_hypotheses).transpose()?;
            let mask = mask_of(&ctx.keys)?;
            let view = ContextView {
                corpus: &corpus,
                feats: Featurizer::new(&bpe, &embedder, cm.arch.max_seq_len.min(bm.arch.max_seq_len)),
                source: source_for(ctx, &cm.arch),
                mask: mask.as_ref(),
            };
            let pairs = view.pairs(*split, *permute_seed, hyps.as_ref())?;
            let enc = view.feats.encode_pairs(pairs.iter().map(|(_, t, c)| (t.as_str(), c.clone())));
            let mut report = corpus_pmi(&cm, &bm, &segments(&enc, &pairs))?;
            report.seed = *permute_seed;
            let mut m = Manifest::new(&name, *permute_seed, config_value(command));
            add_inputs(
                &mut m,
                &[Some(&data.corpus), Some(&data.bpe), Some(ctx_model), Some(base_model), hypotheses.as_deref(), cfg.config.as_deref()],
            )?;
            if let Some(p) = seg_out {
                fs::write(p, report.to_csv())?;
                m.output(p)?;
            }
            let v = stamp(report.summary(), &m);
            emit(&v, Some(out), m, stdout)?;
        }
        Command::TokenDeltas { data, cfg, ctx, ctx_model, base_model, split, top_k, min_words, out } => {
            let file = read_config(cfg)?;
            let (corpus, bpe) = load_data(data)?;
            let cm = load_model(ctx_model)?;
            let bm = load_model(base_model)?;
            let embedder = embedder_for(&file, cm.arch.d_ctx)?;
            let mask = mask_of(&ctx.keys)?;
            let view = ContextView {
                corpus: &corpus,
                feats: Featurizer::new(&bpe, &embedder, cm.arch.max_seq_len.min(bm.arch.max_seq_len)),
                source: source_for(ctx, &cm.arch),
                mask: mask.as_ref(),
            };
            let pairs = view.pairs(*split, None, None)?;
            let enc = view.feats.encode_pairs(pairs.iter().map(|(_, t, c)| (t.as_str(), c.clone())));
            let report = token_delta_report(&cm, &bm, &bpe, &segments(&enc, &pairs), *top_k, *min_words)?;
            let mut m = Manifest::new(&name, Some(cm.seed), config_value(command));
            add_inputs(&mut m, &[Some(&data.corpus), Some(&data.bpe), Some(ctx_model), Some(base_model)])?;
            let v = stamp(serde_json::to_value(&report)?, &m);
            emit(&v, out.as_deref(), m, stdout)?;
        }
        Command::LerpScore { data, model_a, model_b, split, speaker, lerp_weight, out } => {
            let (corpus, bpe) = load_data(data)?;
            let a = load_model(model_a)?;
            let b = load_model(model_b)?;
            if !(0.0..=1.0).contains(lerp_weight) {
                return Err(CliError::Usage("--lerp-weight must lie in [0, 1]".into()));
            }
            let embedder = Embedder::new(EmbedderConfig::default())?;
            let feats = Featurizer::new(&bpe, &embedder, a.arch.max_seq_len.min(b.arch.max_seq_len));
            let mut lp = Vec::new();
            for s in corpus.split(*split).filter(|s| speaker.as_ref().is_none_or(|id| &s.speaker_id == id)) {
                lp.extend(lerp_scores(&a, &b, &feats.tokens(&s.utterance), *lerp_weight)?.per_token);
            }
            let ppl = perplexity(&lp, lp.len())?;
            let mut m = Manifest::new(&name, None, config_value(command));
            add_inputs(&mut m, &[Some(&data.corpus), Some(&data.bpe), Some(model_a), Some(model_b)])?;
            let v = stamp(json!({ "split": split, "ppl": ppl, "n_tokens": lp.len(), "lerp_weight": lerp_weight }), &m);
            emit(&v, out.as_deref(), m, stdout)?;
        }
        Command::AblateMetadata { data, cfg, init, keys, split, out } => {
            let file = read_config(cfg)?;
            let (corpus, bpe) = load_data(data)?;
            let start = load_model(init)?;
            if !start.arch.is_contextual() {
                return Err(CliError::Usage("ablate-metadata needs a contextual checkpoint".into()));
            }
            let embedder = embedder_for(&file, start.arch.d_ctx)?;
            let feats = Featurizer::new(&bpe, &embedder, start.arch.max_seq_len);
            let base_cfg = TrainConfig { context_source: ContextSource::Metadata, ..train_config(&file, cfg.seed) };
            let mut csv = String::from("key,ppl,best_epoch\n");
            for key in KeyRegistry::default().parse_mask(keys)?.into_iter().filter(|k| k.is_metadata()) {
                let tc = TrainConfig { metadata_mask: Some(vec![key.as_str().to_string()]), ..base_cfg.clone() };
                let (best, record) = train(start.clone(), &corpus, &feats, &tc)?;
                let one: KeySet = [key].into_iter().collect();
                let r = split_perplexity(&best, &corpus, &feats, ContextSource::Metadata, Some(&one), *split, None)?;
                log::info!("{}: ppl {:.4}", key.as_str(), r.ppl);
                csv.push_str(&format!("{},{},{}\n", key.as_str(), r.ppl, record.best_epoch));
            }
            fs::write(out, &csv)?;
            stdout.write_all(csv.as_bytes())?;
            let mut m = Manifest::new(&name, Some(base_cfg.seed), json!({ "command": config_value(command), "train": base_cfg }));
            add_inputs(&mut m, &[Some(&data.corpus), Some(&data.bpe), Some(init), cfg.config.as_deref()])?;
            m.output(out)?;
            m.write_beside(out)?;
        }
        Command::RunRecipe { name: recipe_name, recipe, out_dir, seeds } => {
            let mut r: ExperimentRecipe = match (recipe_name, recipe) {
                (Some(n), None) => builtin_recipe(n).ok_or_else(|| CliError::Usage(format!("unknown recipe \"{n}\"")))?,
                (None, Some(p)) => serde_json::from_str(&fs::read_to_string(p)?)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
                _ => return Err(CliError::Usage("give exactly one of --name or --recipe".into())),
            };
            if let Some(env) = seeds_from_env()? {
                r.seeds = env;
            } else if !seeds.is_empty() {
                r.seeds = seeds.clone();
            }
            let summary = run_recipe(&r, out_dir)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&summary)?)?;
        }
    }
    Ok(())
}
