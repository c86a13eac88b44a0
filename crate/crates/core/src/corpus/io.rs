//! Line-delimited JSON persistence for corpora.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use super::keys::KeyRegistry;
use super::normalize::{normalize_raw_metadata, normalize_text, SynonymTable};
use super::types::{CorpusSplits, Sample, Split};
use super::CorpusError;

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop samples whose speaker has a blank profile instead of keeping
    /// them with empty metadata.
    pub drop_unannotated: bool,
    /// Skip records whose utterance normalizes to nothing instead of failing.
    pub skip_empty: bool,
}

fn parse_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse { line, message: message.into() }
}

fn field_str(obj: &serde_json::Map<String, Value>, name: &str, line: usize) -> Result<String, CorpusError> {
    match obj.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(parse_err(line, format!("field \"{name}\" must be a string"))),
        None => Err(parse_err(line, format!("missing field \"{name}\""))),
    }
}

/// Parses one JSONL record and normalizes it. Returns `Ok(None)` for a
/// record whose utterance is empty after normalization when `skip_empty`.
pub fn parse_record(
    text: &str,
    line: usize,
    registry: &KeyRegistry,
    synonyms: &SynonymTable,
    skip_empty: bool,
) -> Result<Option<Sample>, CorpusError> {
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(line, e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(parse_err(line, "record must be a JSON object"));
    };
    let utterance = normalize_text(&field_str(&obj, "utterance", line)?);
    if utterance.is_empty() {
        if skip_empty {
            return Ok(None);
        }
        return Err(parse_err(line, "utterance is empty after normalization"));
    }
    let speaker_id = field_str(&obj, "speaker_id", line)?;
    let production_id = field_str(&obj, "production_id", line)?;
    let split: Split = field_str(&obj, "split", line)?
        .parse()
        .map_err(|e: CorpusError| parse_err(line, e.to_string()))?;
    let mut pairs: Vec<(String, Option<String>)> = Vec::new();
    match obj.get("context") {
        None | Some(Value::Null) => {}
        Some(Value::Object(ctx)) => {
            for (k, v) in ctx {
                let v = match v {
                    Value::Null => None,
                    Value::String(s) => Some(s.clone()),
                    Value::Number(n) => Some(n.to_string()),
                    Value::Bool(b) => Some(b.to_string()),
                    _ => return Err(parse_err(line, format!("context value for \"{k}\" must be a string"))),
                };
                pairs.push((k.clone(), v));
            }
        }
        Some(_) => return Err(parse_err(line, "\"context\" must be an object")),
    }
    let context = normalize_raw_metadata(registry, synonyms, &pairs).map_err(|e| match e {
        CorpusError::UnknownKey(k) => parse_err(line, format!("unknown context key \"{k}\"")),
        other => other,
    })?;
    Ok(Some(Sample { utterance, speaker_id, production_id, split, context }))
}

pub fn read_samples(
    path: &Path,
    registry: &KeyRegistry,
    synonyms: &SynonymTable,
    skip_empty: bool,
) -> Result<Vec<Sample>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(s) = parse_record(&line, idx + 1, registry, synonyms, skip_empty)? {
            samples.push(s);
        }
    }
    Ok(samples)
}

/// Loads and normalizes a JSONL corpus, enforcing all corpus invariants.
pub fn load_corpus(path: &Path) -> Result<CorpusSplits, CorpusError> {
    load_corpus_with(path, &KeyRegistry::default(), super::default_synonyms(), LoadOptions::default())
}

pub fn load_corpus_with(
    path: &Path,
    registry: &KeyRegistry,
    synonyms: &SynonymTable,
    opts: LoadOptions,
) -> Result<CorpusSplits, CorpusError> {
    let samples = read_samples(path, registry, synonyms, opts.skip_empty)?;
    let corpus = CorpusSplits::from_samples(samples)?;
    Ok(if opts.drop_unannotated { corpus.drop_unannotated() } else { corpus })
}

pub fn write_samples<'a, W: Write>(
    mut out: W,
    samples: impl IntoIterator<Item = &'a Sample>,
) -> Result<(), CorpusError> {
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &CorpusSplits, path: &Path) -> Result<(), CorpusError> {
    write_samples(BufWriter::new(File::create(path)?), corpus.samples())
}
