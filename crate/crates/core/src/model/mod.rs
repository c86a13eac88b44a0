//! Transformer language models: a contextual encoder-decoder that attends
//! over embedded context variables, and a decoder-only baseline.
//!
//! Blocks are pre-norm with GELU feed-forward layers. The decoder uses
//! learned positions and ties its output projection to the token
//! embedding. Context vectors are projected into the encoder width without
//! positional information; the sentinel slot is replaced by a learned null
//! vector and empty variables are masked out of every attention.

mod arch;
mod engine;
mod params;

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::embedder::ContextVector;
use crate::tokenizer::TokenSequence;

pub use arch::{match_width, param_count, ArchConfig, ModelKind, ParamBreakdown};
pub use params::{Layout, ModelParameters, TensorSpec, INIT_STD};

use engine::{Item, Mode};

/// Scalar type the model runs in: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("contextual model needs at least the sentinel context vector")]
    MissingContext,
    #[error("context vector has dimension {got}, model expects {expected}")]
    ContextDimension { got: usize, expected: usize },
    #[error("token id {0} is outside the model vocabulary")]
    InvalidToken(u32),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("no base configuration reaches {0} parameters within 1%")]
    Unreachable(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of logits per input position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsSequence<F = f32> {
    pub rows: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikelihood {
    /// `per_token[i]` is the log-probability of token `i + 1` given the
    /// tokens before it.
    pub per_token: Vec<f64>,
    pub total: f64,
}

impl LogLikelihood {
    fn from_logprobs<F: Real>(lp: &[F]) -> Self {
        let per_token: Vec<f64> = lp.iter().map(|v| v.to_f64().expect("finite")).collect();
        let total = per_token.iter().sum();
        LogLikelihood { per_token, total }
    }

    pub fn n_tokens(&self) -> usize {
        self.per_token.len()
    }
}

/// A scored sequence with the context it is conditioned on. Base models
/// ignore the context.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub ctx: &'a [ContextVector],
    pub tokens: &'a [u32],
}

impl<'a> Example<'a> {
    pub fn new(ctx: &'a [ContextVector], tokens: &'a TokenSequence) -> Self {
        Example { ctx, tokens: &tokens.ids }
    }
}

#[derive(Debug, Clone)]
pub struct Gradient<F> {
    pub loss: F,
    pub n_tokens: usize,
    pub grad: Vec<F>,
}

struct Prepared<'a> {
    contexts: Vec<&'a [ContextVector]>,
    items: Vec<Item<'a>>,
}

/// Validates a batch and deduplicates contexts that share storage.
fn prepare<'a, F: Real>(
    params: &ModelParameters<F>,
    batch: &[Example<'a>],
    score_all: bool,
) -> Result<Prepared<'a>, ModelError> {
    let arch = &params.arch;
    let mut contexts = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut items = Vec::with_capacity(batch.len());
    for ex in batch {
        if ex.tokens.len() > arch.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: ex.tokens.len(), max: arch.max_seq_len });
        }
        if let Some(&bad) = ex.tokens.iter().find(|&&t| t as usize >= arch.vocab_size) {
            return Err(ModelError::InvalidToken(bad));
        }
        let ctx = if arch.is_contextual() {
            if ex.ctx.is_empty() {
                return Err(ModelError::MissingContext);
            }
            if let Some(v) = ex.ctx.iter().find(|v| v.values.len() != arch.d_ctx) {
                return Err(ModelError::ContextDimension { got: v.values.len(), expected: arch.d_ctx });
            }
            let key = (ex.ctx.as_ptr() as usize, ex.ctx.len());
            *seen.entry(key).or_insert_with(|| {
                contexts.push(ex.ctx);
                contexts.len() - 1
            })
        } else {
            0
        };
        let (input, targets) = if score_all || ex.tokens.len() < 2 {
            (ex.tokens, &ex.tokens[..0])
        } else {
            (&ex.tokens[..ex.tokens.len() - 1], &ex.tokens[1..])
        };
        if !input.is_empty() {
            items.push(Item { ctx, input, targets });
        }
    }
    Ok(Prepared { contexts, items })
}

/// Logits for every position of `tokens`; row `t` is the distribution of
/// the token after position `t`.
pub fn forward<F: Real>(
    params: &ModelParameters<F>,
    ctx: &[ContextVector],
    tokens: &TokenSequence,
) -> Result<LogitsSequence<F>, ModelError> {
    let prep = prepare(params, &[Example::new(ctx, tokens)], true)?;
    if prep.items.is_empty() {
        return Ok(LogitsSequence { rows: Array2::zeros((0, params.arch.vocab_size)) });
    }
    let (_, tape) = engine::forward(params, &prep.contexts, &prep.items, &mut Mode::eval());
    Ok(LogitsSequence { rows: tape.logits().clone() })
}

/// Per-position log-softmax of the prediction for tokens `1..T`.
pub fn next_token_log_probs<F: Real>(
    params: &ModelParameters<F>,
    ctx: &[ContextVector],
    tokens: &TokenSequence,
) -> Result<Array2<F>, ModelError> {
    let mut rows = forward(params, ctx, tokens)?.rows;
    let keep = rows.nrows().saturating_sub(1);
    rows = rows.slice(ndarray::s![..keep, ..]).to_owned();
    for mut row in rows.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.fold(F::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        row -= lse;
    }
    Ok(rows)
}

pub fn log_likelihood<F: Real>(
    params: &ModelParameters<F>,
    ctx: &[ContextVector],
    tokens: &TokenSequence,
) -> Result<LogLikelihood, ModelError> {
    Ok(log_likelihood_batch(params, &[Example::new(ctx, tokens)])?.remove(0))
}

/// Scores many sequences in one packed pass.
pub fn log_likelihood_batch<F: Real>(
    params: &ModelParameters<F>,
    batch: &[Example],
) -> Result<Vec<LogLikelihood>, ModelError> {
    let prep = prepare(params, batch, false)?;
    let mut scored = if prep.items.is_empty() {
        Vec::new()
    } else {
        engine::forward(params, &prep.contexts, &prep.items, &mut Mode::eval()).0.logprobs
    }
    .into_iter();
    // examples shorter than one token produce no item
    Ok(batch
        .iter()
        .map(|ex| if ex.tokens.is_empty() { LogLikelihood::from_logprobs::<F>(&[]) } else {
            LogLikelihood::from_logprobs(&scored.next().expect("one result per non-empty example"))
        })
        .collect())
}

/// Mean per-token negative log-likelihood of the batch and its exact
/// gradient, with dropout off.
pub fn gradients<F: Real>(params: &ModelParameters<F>, batch: &[Example]) -> Result<Gradient<F>, ModelError> {
    gradients_with(params, batch, 0.0, None)
}

/// As [`gradients`], applying dropout with rate `dropout` drawn from `rng`.
pub fn gradients_with<F: Real>(
    params: &ModelParameters<F>,
    batch: &[Example],
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Gradient<F>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let prep = prepare(params, batch, false)?;
    let n_tokens: usize = prep.items.iter().map(|it| it.targets.len()).sum();
    if n_tokens == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let mut mode = Mode { dropout, rng };
    let (out, tape) = engine::forward(params, &prep.contexts, &prep.items, &mut mode);
    if !out.loss.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    let mut grad = vec![F::zero(); params.data.len()];
    engine::backward(params, &tape, &mut grad);
    Ok(Gradient { loss: out.loss, n_tokens, grad })
}

/// Mean per-token negative log-likelihood without gradients.
pub fn mean_loss<F: Real>(params: &ModelParameters<F>, batch: &[Example]) -> Result<F, ModelError> {
    let prep = prepare(params, batch, false)?;
    if prep.items.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    Ok(engine::forward(params, &prep.contexts, &prep.items, &mut Mode::eval()).0.loss)
}

#[cfg(test)]
mod tests;
