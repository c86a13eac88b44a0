use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Context encoder plus decoder with cross-attention.
    Contextual,
    /// Decoder-only language model.
    Base,
}

/// Transformer shape. Encoder fields are ignored for the base kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub d_model_enc: usize,
    #[serde(default)]
    pub n_layers_enc: usize,
    #[serde(default)]
    pub heads_enc: usize,
    #[serde(default)]
    pub ffn_enc: usize,
    pub d_model_dec: usize,
    pub n_layers_dec: usize,
    pub heads_dec: usize,
    pub ffn_dec: usize,
    pub vocab_size: usize,
    pub d_ctx: usize,
    pub max_seq_len: usize,
}

/// Split of a parameter count between the context encoder and the decoder.
/// Cross-attention belongs to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub encoder: usize,
    pub decoder: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.encoder + self.decoder
    }
}

fn attn_params(d_q: usize, d_kv: usize) -> usize {
    // wq, wo: d_q x d_q; wk, wv: d_kv x d_q; four biases of d_q
    2 * d_q * d_q + 2 * d_kv * d_q + 4 * d_q
}

fn ffn_params(d: usize, f: usize) -> usize {
    2 * d * f + f + d
}

fn ln_params(d: usize) -> usize {
    2 * d
}

impl ArchConfig {
    pub fn full_contextual() -> Self {
        ArchConfig {
            kind: ModelKind::Contextual,
            d_model_enc: 512,
            n_layers_enc: 6,
            heads_enc: 8,
            ffn_enc: 2048,
            d_model_dec: 768,
            n_layers_dec: 12,
            heads_dec: 12,
            ffn_dec: 3072,
            vocab_size: 8000,
            d_ctx: 384,
            max_seq_len: 256,
        }
    }

    pub fn full_base() -> Self {
        ArchConfig {
            kind: ModelKind::Base,
            d_model_enc: 0,
            n_layers_enc: 0,
            heads_enc: 0,
            ffn_enc: 0,
            d_model_dec: 1024,
            n_layers_dec: 12,
            heads_dec: 16,
            ffn_dec: 4096,
            ..Self::full_contextual()
        }
    }

    /// Desk-scale contextual model.
    pub fn tiny_contextual(vocab_size: usize, d_ctx: usize) -> Self {
        ArchConfig {
            kind: ModelKind::Contextual,
            d_model_enc: 32,
            n_layers_enc: 1,
            heads_enc: 2,
            ffn_enc: 64,
            d_model_dec: 32,
            n_layers_dec: 2,
            heads_dec: 2,
            ffn_dec: 128,
            vocab_size,
            d_ctx,
            max_seq_len: 64,
        }
    }

    pub fn is_contextual(&self) -> bool {
        self.kind == ModelKind::Contextual
    }

    /// The same decoder with the encoder removed.
    pub fn as_base(&self) -> Self {
        ArchConfig { kind: ModelKind::Base, d_model_enc: 0, n_layers_enc: 0, heads_enc: 0, ffn_enc: 0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidArch(m));
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad("vocab_size and max_seq_len must be positive".into());
        }
        if self.d_model_dec == 0 || self.heads_dec == 0 || self.n_layers_dec == 0 || self.ffn_dec == 0 {
            return bad("decoder dimensions must be positive".into());
        }
        if !self.d_model_dec.is_multiple_of(self.heads_dec) {
            return bad(format!("d_model_dec {} not divisible by heads_dec {}", self.d_model_dec, self.heads_dec));
        }
        if self.is_contextual() {
            if self.d_model_enc == 0 || self.heads_enc == 0 || self.ffn_enc == 0 || self.d_ctx == 0 {
                return bad("contextual kind requires encoder dimensions and d_ctx".into());
            }
            if !self.d_model_enc.is_multiple_of(self.heads_enc) {
                return bad(format!("d_model_enc {} not divisible by heads_enc {}", self.d_model_enc, self.heads_enc));
            }
        }
        Ok(())
    }

    pub fn breakdown(&self) -> Result<ParamBreakdown, ModelError> {
        self.validate()?;
        let d = self.d_model_dec;
        let contextual = self.is_contextual();
        let mut block = ln_params(d) + attn_params(d, d) + ln_params(d) + ffn_params(d, self.ffn_dec);
        if contextual {
            block += ln_params(d) + attn_params(d, self.d_model_enc);
        }
        let decoder = self.vocab_size * d
            + self.max_seq_len * d
            + self.n_layers_dec * block
            + ln_params(d)
            + self.vocab_size;
        let encoder = if contextual {
            let e = self.d_model_enc;
            let enc_block = ln_params(e) + attn_params(e, e) + ln_params(e) + ffn_params(e, self.ffn_enc);
            self.d_ctx * e + e + e + self.n_layers_enc * enc_block + ln_params(e)
        } else {
            0
        };
        Ok(ParamBreakdown { encoder, decoder })
    }
}

/// Closed-form parameter count.
pub fn param_count(arch: &ArchConfig) -> Result<usize, ModelError> {
    Ok(arch.breakdown()?.total())
}

/// Base-kind config whose size is closest to `target` without exceeding it
/// by more than 1%. The decoder width is scanned in steps of the template's
/// head size with `ffn = 4 * d`; the FFN width is then trimmed to close any
/// remaining gap that the coarse width grid leaves.
pub fn match_width(template: &ArchConfig, target: usize) -> Result<ArchConfig, ModelError> {
    template.validate()?;
    if template.kind == ModelKind::Base && param_count(template)? == target {
        return Ok(template.clone());
    }
    let head_dim = template.d_model_dec / template.heads_dec;
    let limit = target as f64 * 1.01;
    let cfg_for = |d: usize, ffn: usize| ArchConfig {
        d_model_dec: d,
        heads_dec: d / head_dim,
        ffn_dec: ffn,
        ..template.as_base()
    };
    let count = |c: &ArchConfig| param_count(c).expect("scanned config is valid");
    let gap = |n: usize| (n as f64 - target as f64).abs();

    let mut best: Option<(ArchConfig, usize)> = None;
    let mut d = head_dim;
    loop {
        let c = cfg_for(d, 4 * d);
        let n = count(&c);
        if n as f64 > limit {
            // the next width up may still be the closest if we trim its FFN
            let per_unit = count(&cfg_for(d, 4 * d + 1)) - n;
            let excess = n - target;
            let cut = excess.div_ceil(per_unit);
            if cut < 4 * d {
                let trimmed = cfg_for(d, 4 * d - cut);
                let m = count(&trimmed);
                if best.as_ref().is_none_or(|(_, b)| gap(m) < gap(*b)) {
                    best = Some((trimmed, m));
                }
            }
            break;
        }
        if best.as_ref().is_none_or(|(_, b)| gap(n) < gap(*b)) {
            best = Some((c, n));
        }
        d += head_dim;
    }
    let (mut cfg, n) = best.ok_or(ModelError::Unreachable(target))?;

    // grow the FFN of the chosen width while it brings the count closer
    if n < target {
        let per_unit = count(&ArchConfig { ffn_dec: cfg.ffn_dec + 1, ..cfg.clone() }) - n;
        let add = (target - n) / per_unit;
        let grown = ArchConfig { ffn_dec: cfg.ffn_dec + add, ..cfg.clone() };
        let up = ArchConfig { ffn_dec: grown.ffn_dec + 1, ..cfg.clone() };
        cfg = if (count(&up) as f64) <= limit && gap(count(&up)) < gap(count(&grown)) { up } else { grown };
    }
    Ok(cfg)
}
