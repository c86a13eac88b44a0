//! Fixed-dimension vectors for context variables.
//!
//! The built-in backend hashes lowercase character 3- to 5-grams of
//! `"key: value"` into signed buckets and L2-normalizes the result. An
//! external backend reads precomputed vectors from a TSV file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ContextSet, MetaKey};

pub const DEFAULT_D_CTX: usize = 384;
pub const MIN_D_CTX: usize = 8;

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("d_ctx must be at least {MIN_D_CTX}, got {0}")]
    InvalidDimension(usize),
    #[error("embedding file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("external backend selected but no embedding file given")]
    MissingFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    BuiltinHash,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub d_ctx: usize,
    pub backend: Backend,
    /// Hash only the value, leaving the key out.
    pub values_only: bool,
    /// Precomputed vectors for the external backend.
    pub external_path: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig { d_ctx: DEFAULT_D_CTX, backend: Backend::BuiltinHash, values_only: false, external_path: None }
    }
}

impl EmbedderConfig {
    pub fn with_dim(d_ctx: usize) -> Self {
        EmbedderConfig { d_ctx, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), EmbedderError> {
        if self.d_ctx < MIN_D_CTX {
            return Err(EmbedderError::InvalidDimension(self.d_ctx));
        }
        if self.backend == Backend::External && self.external_path.is_none() {
            return Err(EmbedderError::MissingFile);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub values: Vec<f32>,
    pub is_empty: bool,
    /// Placeholder for the model's learned null vector.
    pub sentinel: bool,
}

impl ContextVector {
    pub fn sentinel(d_ctx: usize) -> Self {
        ContextVector { values: vec![0.0; d_ctx], is_empty: false, sentinel: true }
    }

    pub fn empty(d_ctx: usize) -> Self {
        ContextVector { values: vec![0.0; d_ctx], is_empty: true, sentinel: false }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn hash_text(text: &str, d_ctx: usize) -> Vec<f32> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut acc = vec![0f64; d_ctx];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = fnv1a(s.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[(h % d_ctx as u64) as usize] += sign;
    };
    if chars.len() < 3 {
        add(&chars);
    }
    for n in 3..=5 {
        for gram in chars.windows(n) {
            add(gram);
        }
    }
    let mut norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every gram cancelled out; fall back to the whole-string bucket
        acc[(fnv1a(text.as_bytes()) % d_ctx as u64) as usize] = 1.0;
        norm = 1.0;
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

/// Built-in embedding of one variable. Empty values give a zero vector.
pub fn embed_text(cfg: &EmbedderConfig, key: MetaKey, value: &str) -> ContextVector {
    if value.is_empty() {
        return ContextVector::empty(cfg.d_ctx);
    }
    let text = if cfg.values_only { value.to_string() } else { format!("{key}: {value}") };
    ContextVector { values: hash_text(&text, cfg.d_ctx), is_empty: false, sentinel: false }
}

/// Sentinel followed by one vector per variable in canonical order.
pub fn embed_context_set(cfg: &EmbedderConfig, ctx: &ContextSet) -> Vec<ContextVector> {
    std::iter::once(ContextVector::sentinel(cfg.d_ctx))
        .chain(ctx.iter().map(|(k, v)| embed_text(cfg, k, v)))
        .collect()
}

/// Embedder with an optional table of precomputed vectors. Pairs missing
/// from the table use the built-in hash.
#[derive(Debug, Clone)]
pub struct Embedder {
    cfg: EmbedderConfig,
    table: HashMap<(MetaKey, String), Vec<f32>>,
}

impl Embedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self, EmbedderError> {
        cfg.validate()?;
        let table = match (&cfg.backend, &cfg.external_path) {
            (Backend::External, Some(p)) => parse_external(&fs::read_to_string(Path::new(p))?, cfg.d_ctx)?,
            _ => HashMap::new(),
        };
        Ok(Embedder { cfg, table })
    }

    pub fn from_table(cfg: EmbedderConfig, tsv: &str) -> Result<Self, EmbedderError> {
        if cfg.d_ctx < MIN_D_CTX {
            return Err(EmbedderError::InvalidDimension(cfg.d_ctx));
        }
        let table = parse_external(tsv, cfg.d_ctx)?;
        Ok(Embedder { cfg: EmbedderConfig { backend: Backend::External, ..cfg }, table })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn d_ctx(&self) -> usize {
        self.cfg.d_ctx
    }

    pub fn embed(&self, key: MetaKey, value: &str) -> ContextVector {
        if value.is_empty() {
            return ContextVector::empty(self.cfg.d_ctx);
        }
        match self.table.get(&(key, value.to_string())) {
            Some(v) => ContextVector { values: v.clone(), is_empty: false, sentinel: false },
            None => {
                if self.cfg.backend == Backend::External {
                    log::warn!("no precomputed vector for {key}={value:?}; using built-in hash");
                }
                embed_text(&self.cfg, key, value)
            }
        }
    }

    pub fn embed_set(&self, ctx: &ContextSet) -> Vec<ContextVector> {
        std::iter::once(ContextVector::sentinel(self.cfg.d_ctx))
            .chain(ctx.iter().map(|(k, v)| self.embed(k, v)))
            .collect()
    }
}

fn parse_external(text: &str, d_ctx: usize) -> Result<HashMap<(MetaKey, String), Vec<f32>>, EmbedderError> {
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| EmbedderError::Parse { line: i + 1, message };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let (Some(key), Some(value), Some(floats)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(err("expected key, value and vector columns".into()));
        };
        let key: MetaKey = key.parse().map_err(|_| err(format!("unknown key {key:?}")))?;
        let v: Vec<f32> = floats
            .split(',')
            .map(|f| f.trim().parse::<f32>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(e.to_string()))?;
        if v.len() != d_ctx {
            return Err(err(format!("vector has {} entries, expected {d_ctx}", v.len())));
        }
        table.insert((key, value.to_string()), v);
    }
    Ok(table)
}
