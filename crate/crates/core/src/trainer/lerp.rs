use ndarray::Array2;

use crate::model::{next_token_log_probs, ModelParameters};
use crate::tokenizer::TokenSequence;

use super::TrainerError;

pub const DEFAULT_LERP_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LerpScores {
    pub per_token: Vec<f64>,
    pub total: f64,
}

/// `ln(w·exp(a) + (1−w)·exp(b))` elementwise, without leaving log space
/// for the shared maximum.
pub fn lerp_row(log_a: &[f64], log_b: &[f64], weight: f64) -> Vec<f64> {
    log_a
        .iter()
        .zip(log_b)
        .map(|(&a, &b)| {
            let m = a.max(b);
            if m == f64::NEG_INFINITY {
                return m;
            }
            m + (weight * (a - m).exp() + (1.0 - weight) * (b - m).exp()).ln()
        })
        .collect()
}

fn model_log_probs(p: &ModelParameters, tokens: &TokenSequence) -> Result<Array2<f64>, TrainerError> {
    Ok(next_token_log_probs(p, &[], tokens)?.mapv(|v| v as f64))
}

fn check(a: &ModelParameters, b: &ModelParameters) -> Result<(), TrainerError> {
    if a.arch.vocab_size != b.arch.vocab_size {
        return Err(TrainerError::VocabMismatch(a.arch.vocab_size, b.arch.vocab_size));
    }
    if a.arch.is_contextual() || b.arch.is_contextual() {
        return Err(TrainerError::InvalidConfig("lerp expects two base-kind models".into()));
    }
    Ok(())
}

/// Log of the interpolated next-token distribution at every position.
pub fn lerp_distributions(
    a: &ModelParameters,
    b: &ModelParameters,
    tokens: &TokenSequence,
    weight: f64,
) -> Result<Array2<f64>, TrainerError> {
    check(a, b)?;
    let la = model_log_probs(a, tokens)?;
    let lb = model_log_probs(b, tokens)?;
    let mut out = Array2::zeros(la.raw_dim());
    for (i, (ra, rb)) in la.rows().into_iter().zip(lb.rows()).enumerate() {
        let row = lerp_row(&ra.to_vec(), &rb.to_vec(), weight);
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}

/// Per-token log-probabilities of `tokens[1..]` under the mixture.
pub fn lerp_scores(
    a: &ModelParameters,
    b: &ModelParameters,
    tokens: &TokenSequence,
    weight: f64,
) -> Result<LerpScores, TrainerError> {
    let dist = lerp_distributions(a, b, tokens, weight)?;
    let per_token: Vec<f64> = tokens
        .ids
        .iter()
        .skip(1)
        .enumerate()
        .map(|(t, &id)| dist[[t, id as usize]])
        .collect();
    let total = per_token.iter().sum();
    Ok(LerpScores { per_token, total })
}
