//! Evaluation: perplexity, speaker reciprocal rank, PMI context
//! specificity, per-token likelihood deltas and paired t-tests.

mod pmi;
mod rank;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

pub use pmi::{
    corpus_pmi, segment_pmi, token_delta_report, DeltaReport, PmiReport, Segment, SegmentDelta, SegmentPmi,
    SegmentRecord, TokenDelta, DEFAULT_MIN_WORDS,
};
pub use rank::{smrr, smrr_tol, speaker_rr, speaker_rr_tol, ScoreMatrix};

/// One-tailed critical value used for significance.
pub const T_CRITICAL: f64 = 1.65;
pub const REQUIRED_RUNS: usize = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input is empty")]
    EmptyInput,
    #[error("token count {count} does not match {len} log-probabilities")]
    CountMismatch { count: usize, len: usize },
    #[error("need exactly {REQUIRED_RUNS} paired runs per side, got {0} and {1}")]
    InsufficientRuns(usize, usize),
    #[error("vocabulary sizes differ: {0} vs {1}")]
    VocabMismatch(usize, usize),
    #[error("score matrix: {0}")]
    BadMatrix(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `exp` of the mean negative log-probability.
pub fn perplexity(per_token_logprobs: &[f64], token_count: usize) -> Result<f64, MetricsError> {
    if per_token_logprobs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if token_count != per_token_logprobs.len() {
        return Err(MetricsError::CountMismatch { count: token_count, len: per_token_logprobs.len() });
    }
    let mean = per_token_logprobs.iter().sum::<f64>() / token_count as f64;
    Ok((-mean).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The hypothesis is that run A scores higher than run B.
    AGreater,
    ALess,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub mean_diff: f64,
    pub t_stat: f64,
    pub significant: bool,
    /// All differences were equal, so the statistic is infinite or zero.
    pub degenerate_variance: bool,
}

/// Paired one-tailed t-test on `means_a − means_b` in the hypothesised
/// direction.
pub fn compare_runs(means_a: &[f64], means_b: &[f64], direction: Direction) -> Result<RunComparison, MetricsError> {
    if means_a.len() != REQUIRED_RUNS || means_b.len() != REQUIRED_RUNS {
        return Err(MetricsError::InsufficientRuns(means_a.len(), means_b.len()));
    }
    let sign = match direction {
        Direction::AGreater => 1.0,
        Direction::ALess => -1.0,
    };
    let d: Vec<f64> = means_a.iter().zip(means_b).map(|(a, b)| sign * (a - b)).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let degenerate = sd <= 1e-12 * mean.abs();
    let t_stat = if degenerate {
        if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    } else {
        mean / (sd / n.sqrt())
    };
    Ok(RunComparison { mean_diff: mean, t_stat, significant: t_stat > T_CRITICAL, degenerate_variance: degenerate })
}
