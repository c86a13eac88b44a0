use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplits, Split};
use crate::model::{gradients_with, log_likelihood_batch, ModelError, ModelParameters};

use super::data::{EncodedSplit, Featurizer};
use super::optim::{AdamW, Schedule};
use super::stopping::{EarlyStopping, Verdict};
use super::{ContextSource, TrainConfig, TrainerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches; absent for epoch 0.
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Epoch 0 is the model before any update.
    pub epochs: Vec<EpochLoss>,
    pub stop_epoch: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub steps: u64,
    pub schedule: Schedule,
    /// Where the best parameters were written, if they were.
    pub checkpoint: Option<String>,
    pub config: TrainConfig,
}

impl RunRecord {
    pub fn valid_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.valid_loss).collect()
    }

    pub fn initial_valid_loss(&self) -> f64 {
        self.epochs[0].valid_loss
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss\n");
        for e in &self.epochs {
            let train = e.train_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", e.epoch, train, e.valid_loss).expect("writing to a String");
        }
        out
    }
}

/// Token-weighted mean NLL (nats per predicted token) of `split`.
pub fn evaluate(params: &ModelParameters, split: &EncodedSplit, chunk_tokens: usize) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in split.eval_chunks(chunk_tokens.max(1)) {
        for ll in log_likelihood_batch(params, &split.examples(&chunk))? {
            total += ll.total;
            n += ll.n_tokens();
        }
    }
    if n == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(-total / n as f64)
}

fn check_compatible(params: &ModelParameters, feats: &Featurizer, cfg: &TrainConfig) -> Result<(), TrainerError> {
    if feats.bpe.vocab_size() != params.arch.vocab_size {
        return Err(TrainerError::VocabMismatch(feats.bpe.vocab_size(), params.arch.vocab_size));
    }
    if feats.max_seq_len > params.arch.max_seq_len {
        return Err(TrainerError::InvalidConfig(format!(
            "featurizer max_seq_len {} exceeds the model's {}",
            feats.max_seq_len, params.arch.max_seq_len
        )));
    }
    if params.arch.is_contextual() == (cfg.context_source == ContextSource::None) {
        return Err(TrainerError::InvalidConfig(format!(
            "context_source {:?} does not fit a {:?} model",
            cfg.context_source, params.arch.kind
        )));
    }
    if params.arch.is_contextual() && feats.embedder.d_ctx() != params.arch.d_ctx {
        return Err(ModelError::ContextDimension { got: feats.embedder.d_ctx(), expected: params.arch.d_ctx }.into());
    }
    Ok(())
}

/// Trains on the corpus train split, selecting on the valid split.
pub fn train(
    params: ModelParameters,
    corpus: &CorpusSplits,
    feats: &Featurizer,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, RunRecord), TrainerError> {
    cfg.validate()?;
    check_compatible(&params, feats, cfg)?;
    let mask = cfg.mask()?;
    let train = feats.encode(corpus.split(Split::Train), cfg.context_source, mask.as_ref());
    let valid = feats.encode(corpus.split(Split::Valid), cfg.context_source, mask.as_ref());
    train_encoded(params, &train, &valid, cfg)
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum()
}

/// Trains on pre-encoded splits and returns the best-validation parameters.
pub fn train_encoded(
    mut params: ModelParameters,
    train: &EncodedSplit,
    valid: &EncodedSplit,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, RunRecord), TrainerError> {
    cfg.validate()?;
    if train.n_targets() == 0 {
        return Err(TrainerError::EmptySplit(Split::Train));
    }
    if valid.n_targets() == 0 {
        return Err(TrainerError::EmptySplit(Split::Valid));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_batches = train.batches(cfg.batch_tokens, &mut rng.clone()).len() as u64;
    let schedule = Schedule::new(cfg.learning_rate, n_batches * cfg.max_epochs as u64, cfg.warmup_frac);
    let mut opt = AdamW::new(&params, cfg.betas.0, cfg.betas.1, cfg.eps, cfg.weight_decay);

    let eval = |p: &ModelParameters, epoch: usize| -> Result<f64, TrainerError> {
        let v = evaluate(p, valid, cfg.batch_tokens)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TrainerError::DivergedLoss { epoch })
        }
    };

    let v0 = eval(&params, 0)?;
    let mut epochs = vec![EpochLoss { epoch: 0, train_loss: None, valid_loss: v0 }];
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    stopper.set_baseline(v0);
    let mut best = (v0, 0usize, params.clone());
    let mut stop_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in train.batches(cfg.batch_tokens, &mut rng) {
            let g = match gradients_with(&params, &train.examples(&batch), cfg.dropout, Some(&mut rng)) {
                Ok(g) => g,
                Err(ModelError::NonFiniteLoss) => return Err(TrainerError::DivergedLoss { epoch }),
                Err(e) => return Err(e.into()),
            };
            let mut grad = g.grad;
            if let Some(cap) = cfg.grad_clip {
                let norm = sq_norm(&grad).sqrt();
                if !norm.is_finite() {
                    return Err(TrainerError::DivergedLoss { epoch });
                }
                if norm > cap {
                    let s = (cap / norm) as f32;
                    grad.iter_mut().for_each(|v| *v *= s);
                }
            }
            let lr = schedule.lr(opt.steps() + 1);
            opt.update(&mut params.data, &grad, lr);
            sum += g.loss as f64 * g.n_tokens as f64;
            count += g.n_tokens;
        }
        let v = eval(&params, epoch)?;
        epochs.push(EpochLoss { epoch, train_loss: Some(sum / count as f64), valid_loss: v });
        stop_epoch = epoch;
        log::debug!("epoch {epoch}: train {:.4} valid {v:.4}", sum / count as f64);
        if v < best.0 {
            best = (v, epoch, params.clone());
        }
        if stopper.observe(v) == Verdict::Stop {
            break;
        }
    }

    let (best_valid_loss, best_epoch, best_params) = best;
    let record = RunRecord {
        epochs,
        stop_epoch,
        best_epoch,
        best_valid_loss,
        steps: opt.steps(),
        schedule,
        checkpoint: None,
        config: cfg.clone(),
    };
    Ok((best_params, record))
}
