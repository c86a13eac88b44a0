use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedder::ContextVector;
use crate::model::{log_likelihood_batch, Example, ModelParameters};
use crate::tokenizer::{BpeModel, TokenSequence};

use super::MetricsError;

/// Segments with fewer words are left out of the sentence rankings.
pub const DEFAULT_MIN_WORDS: usize = 4;
const SCORE_CHUNK_TOKENS: usize = 2048;

/// A hypothesis with the context it is paired with.
#[derive(Debug, Clone)]
pub struct Segment<'a> {
    pub id: String,
    pub text: String,
    pub ctx: &'a [ContextVector],
    pub tokens: &'a TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPmi {
    pub per_token: Vec<f64>,
    pub mean: f64,
}

impl SegmentPmi {
    fn from_scores(ctx: &[f64], base: &[f64]) -> Self {
        let per_token: Vec<f64> = ctx.iter().zip(base).map(|(c, b)| c - b).collect();
        let mean = if per_token.is_empty() { 0.0 } else { per_token.iter().sum::<f64>() / per_token.len() as f64 };
        SegmentPmi { per_token, mean }
    }
}

fn check_vocab(a: &ModelParameters, b: &ModelParameters) -> Result<(), MetricsError> {
    if a.arch.vocab_size != b.arch.vocab_size {
        return Err(MetricsError::VocabMismatch(a.arch.vocab_size, b.arch.vocab_size));
    }
    Ok(())
}

/// `log p(token | context, prefix) − log p(token | prefix)` per position.
/// Swapping the two models negates every value.
pub fn segment_pmi(
    ctx_model: &ModelParameters,
    base_model: &ModelParameters,
    ctx: &[ContextVector],
    hypothesis: &TokenSequence,
) -> Result<SegmentPmi, MetricsError> {
    check_vocab(ctx_model, base_model)?;
    let ex = [Example::new(ctx, hypothesis)];
    let c = log_likelihood_batch(ctx_model, &ex)?.remove(0);
    let b = log_likelihood_batch(base_model, &ex)?.remove(0);
    Ok(SegmentPmi::from_scores(&c.per_token, &b.per_token))
}

fn score_all(
    ctx_model: &ModelParameters,
    base_model: &ModelParameters,
    segments: &[Segment],
) -> Result<Vec<SegmentPmi>, MetricsError> {
    check_vocab(ctx_model, base_model)?;
    let mut out = Vec::with_capacity(segments.len());
    let mut start = 0;
    while start < segments.len() {
        let mut end = start;
        let mut used = 0;
        while end < segments.len() && (end == start || used + segments[end].tokens.len() <= SCORE_CHUNK_TOKENS) {
            used += segments[end].tokens.len();
            end += 1;
        }
        let batch: Vec<Example> = segments[start..end].iter().map(|s| Example::new(s.ctx, s.tokens)).collect();
        let c = log_likelihood_batch(ctx_model, &batch)?;
        let b = log_likelihood_batch(base_model, &batch)?;
        out.extend(c.iter().zip(&b).map(|(c, b)| SegmentPmi::from_scores(&c.per_token, &b.per_token)));
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub n_tokens: usize,
    pub pmi_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiReport {
    pub segments: Vec<SegmentRecord>,
    /// Unweighted mean of the per-segment means.
    pub macro_mean: f64,
    /// Mean over all scored tokens.
    pub micro_mean: f64,
    /// Standard error of the macro mean.
    pub stderr: f64,
    pub seed: Option<u64>,
}

impl PmiReport {
    pub fn n(&self) -> usize {
        self.segments.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment_id,n_tokens,pmi_mean\n");
        for s in &self.segments {
            writeln!(out, "{},{},{}", s.id, s.n_tokens, s.pmi_mean).expect("writing to a String");
        }
        out
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "macro": self.macro_mean,
            "micro": self.micro_mean,
            "n": self.n(),
            "stderr": self.stderr,
        })
    }
}

/// Scores every segment with both models. Segments without a predicted
/// token are skipped.
pub fn corpus_pmi(
    ctx_model: &ModelParameters,
    base_model: &ModelParameters,
    segments: &[Segment],
) -> Result<PmiReport, MetricsError> {
    let scored = score_all(ctx_model, base_model, segments)?;
    let mut records = Vec::new();
    let (mut tok_sum, mut tok_n) = (0.0, 0usize);
    for (seg, pmi) in segments.iter().zip(&scored) {
        if pmi.per_token.is_empty() {
            continue;
        }
        tok_sum += pmi.per_token.iter().sum::<f64>();
        tok_n += pmi.per_token.len();
        records.push(SegmentRecord { id: seg.id.clone(), n_tokens: pmi.per_token.len(), pmi_mean: pmi.mean });
    }
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = records.len() as f64;
    let macro_mean = records.iter().map(|r| r.pmi_mean).sum::<f64>() / n;
    let stderr = if records.len() > 1 {
        let var = records.iter().map(|r| (r.pmi_mean - macro_mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(PmiReport { segments: records, macro_mean, micro_mean: tok_sum / tok_n as f64, stderr, seed: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDelta {
    pub id: u32,
    pub piece: String,
    pub count: usize,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDelta {
    pub id: String,
    pub text: String,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub gaining: Vec<TokenDelta>,
    pub losing: Vec<TokenDelta>,
    pub top_segments: Vec<SegmentDelta>,
    pub bottom_segments: Vec<SegmentDelta>,
    /// Every delta is zero, so the rankings carry no information.
    pub degenerate: bool,
}

/// Ranks token types and segments by their change in log-likelihood when
/// the context is added.
pub fn token_delta_report(
    ctx_model: &ModelParameters,
    base_model: &ModelParameters,
    bpe: &BpeModel,
    segments: &[Segment],
    top_k: usize,
    min_words: usize,
) -> Result<DeltaReport, MetricsError> {
    let scored = score_all(ctx_model, base_model, segments)?;
    let mut by_type: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    let mut seg_rows = Vec::new();
    let mut max_abs: f64 = 0.0;
    for (seg, pmi) in segments.iter().zip(&scored) {
        for (&tok, &d) in seg.tokens.ids.iter().skip(1).zip(&pmi.per_token) {
            let e = by_type.entry(tok).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += d;
            max_abs = max_abs.max(d.abs());
        }
        if !pmi.per_token.is_empty() && seg.text.split_whitespace().count() >= min_words {
            seg_rows.push(SegmentDelta { id: seg.id.clone(), text: seg.text.clone(), mean_delta: pmi.mean });
        }
    }
    let mut types: Vec<TokenDelta> = by_type
        .into_iter()
        .map(|(id, (count, sum))| TokenDelta {
            id,
            piece: bpe.piece(id).unwrap_or_else(|| format!("<{id}>")),
            count,
            mean_delta: sum / count as f64,
        })
        .collect();
    types.sort_by(|a, b| b.mean_delta.total_cmp(&a.mean_delta).then(a.id.cmp(&b.id)));
    let gaining: Vec<TokenDelta> = types.iter().take(top_k).cloned().collect();
    let losing: Vec<TokenDelta> = types.iter().rev().take(top_k).cloned().collect();
    seg_rows.sort_by(|a, b| b.mean_delta.total_cmp(&a.mean_delta).then(a.id.cmp(&b.id)));
    let top_segments = seg_rows.iter().take(top_k).cloned().collect();
    let bottom_segments = seg_rows.iter().rev().take(top_k).cloned().collect();
    Ok(DeltaReport { gaining, losing, top_segments, bottom_segments, degenerate: max_abs <= 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{embed_context_set, EmbedderConfig};
    use crate::corpus::{ContextSet, MetaKey};
    use crate::model::ArchConfig;

    fn models() -> (ModelParameters, ModelParameters) {
        let arch = ArchConfig { max_seq_len: 16, ..ArchConfig::tiny_contextual(10, 8) };
        let mut ctx = ModelParameters::init(&arch, 4).unwrap();
        let mut base = ModelParameters::zeros(&arch.as_base(), 4).unwrap();
        // give the contextual model a decoder the base copies exactly
        ctx.data.iter_mut().for_each(|v| *v *= 10.0);
        for t in base.layout.tensors.clone() {
            base.named_mut(&t.name).unwrap().copy_from_slice(ctx.named(&t.name).unwrap());
        }
        (ctx, base)
    }

    fn profile() -> Vec<ContextVector> {
        let mut c = ContextSet::new();
        c.set(MetaKey::SpeakerProfession, "chef");
        embed_context_set(&EmbedderConfig::with_dim(8), &c)
    }

    #[test]
    fn silent_cross_attention_gives_zero_pmi() {
        let (mut ctx, base) = models();
        for t in ctx.layout.tensors.clone() {
            if t.name.contains(".cross.wo") || t.name.contains(".cross.bo") {
                ctx.named_mut(&t.name).unwrap().fill(0.0);
            }
        }
        let toks = TokenSequence::new(vec![1, 4, 5, 6, 2]);
        let p = segment_pmi(&ctx, &base, &profile(), &toks).unwrap();
        assert_eq!(p.per_token.len(), 4);
        assert!(p.per_token.iter().all(|v| v.abs() < 1e-6), "{:?}", p.per_token);
    }

    #[test]
    fn swapping_models_negates() {
        let (ctx, mut base) = models();
        base.data.iter_mut().for_each(|v| *v *= 0.5);
        let ctx_as_base = {
            let arch = ctx.arch.as_base();
            let mut p = ModelParameters::zeros(&arch, 0).unwrap();
            for t in p.layout.tensors.clone() {
                p.named_mut(&t.name).unwrap().copy_from_slice(ctx.named(&t.name).unwrap());
            }
            p
        };
        let toks = TokenSequence::new(vec![1, 7, 7, 3, 2]);
        let a = segment_pmi(&ctx_as_base, &base, &[], &toks).unwrap();
        let b = segment_pmi(&base, &ctx_as_base, &[], &toks).unwrap();
        for (x, y) in a.per_token.iter().zip(&b.per_token) {
            assert_eq!(*x, -*y);
        }
        assert!(a.per_token.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn report_aggregation() {
        let (ctx, base) = models();
        let prof = profile();
        let toks: Vec<TokenSequence> =
            vec![TokenSequence::new(vec![1, 4, 5, 2]), TokenSequence::new(vec![1, 6, 2]), TokenSequence::new(vec![1])];
        let texts = ["a b c d", "a b c", ""];
        let segs: Vec<Segment> = toks
            .iter()
            .zip(texts)
            .enumerate()
            .map(|(i, (t, text))| Segment { id: format!("s{i}"), text: text.into(), ctx: &prof, tokens: t })
            .collect();
        let r = corpus_pmi(&ctx, &base, &segs).unwrap();
        assert_eq!(r.n(), 2);
        let one = segment_pmi(&ctx, &base, &prof, &toks[0]).unwrap();
        let two = segment_pmi(&ctx, &base, &prof, &toks[1]).unwrap();
        assert!((r.macro_mean - (one.mean + two.mean) / 2.0).abs() < 1e-12);
        let micro = (one.per_token.iter().sum::<f64>() + two.per_token.iter().sum::<f64>()) / 5.0;
        assert!((r.micro_mean - micro).abs() < 1e-12);
        assert!(r.to_csv().starts_with("segment_id,n_tokens,pmi_mean\ns0,3,"));

        let single = corpus_pmi(&ctx, &base, &segs[..1]).unwrap();
        assert_eq!(single.macro_mean, one.mean);
        assert_eq!(single.stderr, 0.0);
        assert!(matches!(corpus_pmi(&ctx, &base, &segs[2..]), Err(MetricsError::EmptyInput)));

        let bpe = crate::tokenizer::train_bpe(["a b"], &Default::default()).unwrap();
        let d = token_delta_report(&ctx, &base, &bpe, &segs, 3, DEFAULT_MIN_WORDS).unwrap();
        assert_eq!(d.top_segments.len(), 1);
        assert_eq!(d.top_segments[0].id, "s0");
        assert!(!d.degenerate);
        let d = token_delta_report(&base, &base, &bpe, &segs, 3, DEFAULT_MIN_WORDS).unwrap();
        assert!(d.degenerate);
        assert!(d.gaining.iter().all(|t| t.mean_delta == 0.0));
    }

    #[test]
    fn vocab_mismatch() {
        let (ctx, _) = models();
        let other = ModelParameters::zeros(&ArchConfig { vocab_size: 11, ..ctx.arch.as_base() }, 0).unwrap();
        let toks = TokenSequence::new(vec![1, 2]);
        assert!(matches!(segment_pmi(&ctx, &other, &profile(), &toks), Err(MetricsError::VocabMismatch(10, 11))));
    }
}
