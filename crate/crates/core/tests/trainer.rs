use ctxlm::cli::desk::{build_world, Arm, World};
use ctxlm::corpus::{generate_synthetic, Split, SyntheticSpec};
use ctxlm::model::{log_likelihood, ModelKind, ModelParameters};
use ctxlm::trainer::{
    evaluate, speaker_finetune_pipeline, train, ContextSource, TrainConfig, TrainerError,
};

fn small_world() -> World {
    let spec = SyntheticSpec { n_speakers: 6, n_productions: 2, lines_per_speaker: 30, n_unseen_speakers: 3, ..Default::default() };
    let corpus = generate_synthetic(5, &spec).unwrap();
    let texts: Vec<String> = corpus.split(Split::Train).map(|s| s.utterance.clone()).collect();
    build_world(corpus, texts.iter().map(String::as_str), 300, 16).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { max_epochs: epochs, batch_tokens: 300, ..Default::default() }
}

#[test]
fn validation_loss_improves_and_best_checkpoint_is_returned() {
    let w = small_world();
    let (params, rec) = w.train_arm(Arm::SpeakerProduction, &quick(4), 1, None).unwrap();
    assert!(rec.best_valid_loss < rec.initial_valid_loss());
    assert_eq!(rec.epochs.len(), rec.stop_epoch + 1);
    let best = rec.valid_losses().iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(rec.best_valid_loss, best);
    let valid = w.encode(Split::Valid, Arm::SpeakerProduction).unwrap();
    let again = evaluate(&params, &valid, 2048).unwrap();
    assert!((again - rec.best_valid_loss).abs() < 1e-9, "{again} vs {}", rec.best_valid_loss);
}

#[test]
fn training_is_deterministic_per_seed() {
    let w = small_world();
    let (a, ra) = w.train_arm(Arm::BaseLm, &quick(2), 3, None).unwrap();
    let (b, rb) = w.train_arm(Arm::BaseLm, &quick(2), 3, None).unwrap();
    let (c, _) = w.train_arm(Arm::BaseLm, &quick(2), 4, None).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(ra.to_csv(), rb.to_csv());
    assert_ne!(a.data, c.data);
}

#[test]
fn context_changes_predictions_after_training() {
    let w = small_world();
    let (params, _) = w.train_arm(Arm::SpeakerProduction, &quick(3), 2, None).unwrap();
    let feats = w.featurizer();
    let sample = w.corpus.split(Split::Test).next().unwrap();
    let toks = feats.tokens(&sample.utterance);
    let with = log_likelihood(&params, &feats.context(&sample.context), &toks).unwrap();
    let blank = log_likelihood(&params, &feats.context(&Default::default()), &toks).unwrap();
    assert_ne!(with.total, blank.total);
}

#[test]
fn speaker_pipeline_shares_architecture_and_never_gets_worse() {
    let w = small_world();
    let base = ModelParameters::init(&w.base_arch, 1).unwrap();
    let speaker = w.corpus.speakers_in(Split::Train)[0].clone();
    let models = speaker_finetune_pipeline(base, &w.corpus, &w.featurizer(), &speaker, &quick(2)).unwrap();
    assert_eq!(models.ft1.arch, models.sp.arch);
    assert_eq!(models.sp.arch.kind, ModelKind::Base);
    assert!(models.sp_record.best_valid_loss <= models.sp_record.initial_valid_loss());
    assert_eq!(models.sp_record.config.context_source, ContextSource::None);
}

#[test]
fn unknown_speaker_is_rejected() {
    let w = small_world();
    let base = ModelParameters::init(&w.base_arch, 1).unwrap();
    let err = speaker_finetune_pipeline(base, &w.corpus, &w.featurizer(), "nobody", &quick(1)).unwrap_err();
    assert!(matches!(err, TrainerError::UnknownSpeaker(s) if s == "nobody"));
}

#[test]
fn bad_configs_and_empty_splits_are_errors() {
    let w = small_world();
    let p = ModelParameters::init(&w.arch, 1).unwrap();
    let cfg = TrainConfig { learning_rate: 0.0, ..quick(1) };
    assert!(matches!(train(p.clone(), &w.corpus, &w.featurizer(), &cfg), Err(TrainerError::InvalidConfig(_))));

    let no_valid = w.corpus.filter_samples(|s| s.split != Split::Valid);
    assert!(matches!(train(p.clone(), &no_valid, &w.featurizer(), &quick(1)), Err(TrainerError::EmptySplit(Split::Valid))));

    // a contextual model cannot be trained without context
    let cfg = TrainConfig { context_source: ContextSource::None, ..quick(1) };
    assert!(train(p, &w.corpus, &w.featurizer(), &cfg).is_err());
}
