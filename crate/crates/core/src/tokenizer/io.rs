//! Plain-text model file:
//!
//! ```text
//! ctxlm-bpe 1
//! byte_fallback true
//! [base]
//! "a"
//! ...
//! [merges]
//! 264 265
//! ```
//!
//! Specials and byte units are implicit. Base units are JSON strings in id
//! order; merges are tab-separated id pairs in training order.

use std::fs;
use std::path::Path;

use super::bpe::{BpeModel, Special, Unit};
use super::TokenizerError;

const MAGIC: &str = "ctxlm-bpe 1";

impl BpeModel {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nbyte_fallback {}\n[base]\n", self.byte_fallback);
        let n_base = self.units.len() - self.merges.len();
        for unit in &self.units[..n_base] {
            if let Unit::Text(s) = unit {
                out.push_str(&serde_json::to_string(s).expect("string serializes"));
                out.push('\n');
            }
        }
        out.push_str("[merges]\n");
        for (l, r) in &self.merges {
            out.push_str(&format!("{l}\t{r}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<BpeModel, TokenizerError> {
        let err = |line: usize, message: &str| TokenizerError::Parse { line, message: message.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| err(0, &format!("truncated file, expected {what}")));

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(err(n, "not a tokenizer model file"));
        }
        let (n, fb) = next("byte_fallback")?;
        let byte_fallback = match fb.strip_prefix("byte_fallback ") {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(err(n, "expected `byte_fallback true|false`")),
        };
        let (n, hdr) = next("[base]")?;
        if hdr != "[base]" {
            return Err(err(n, "expected [base]"));
        }

        let mut units: Vec<Unit> = Special::ALL.iter().map(|s| Unit::Special(*s)).collect();
        if byte_fallback {
            units.extend((0..=255u8).map(Unit::Byte));
        }
        let mut merges = Vec::new();
        let mut in_merges = false;
        let mut last = n;
        for (n, line) in lines {
            last = n;
            if line == "[merges]" && !in_merges {
                in_merges = true;
            } else if in_merges {
                let (l, r) = line.split_once('\t').ok_or_else(|| err(n, "expected two tab-separated ids"))?;
                let l: u32 = l.parse().map_err(|_| err(n, "bad left id"))?;
                let r: u32 = r.parse().map_err(|_| err(n, "bad right id"))?;
                let (ls, rs) = match (units.get(l as usize), units.get(r as usize)) {
                    (Some(Unit::Text(a)), Some(Unit::Text(b))) => (a.clone(), b.clone()),
                    _ => return Err(err(n, "merge references an unknown or non-text unit")),
                };
                units.push(Unit::Text(ls + &rs));
                merges.push((l, r));
            } else {
                let s: String = serde_json::from_str(line).map_err(|e| err(n, &e.to_string()))?;
                units.push(Unit::Text(s));
            }
        }
        if !in_merges {
            return Err(err(last, "missing [merges] section"));
        }
        BpeModel::from_parts(byte_fallback, units, merges).map_err(|m| err(0, &m))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BpeModel, TokenizerError> {
        BpeModel::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{train_bpe, BpeTrainConfig};

    fn model() -> BpeModel {
        let texts = ["tab\there", "quote \" and \\ slash", "new words here", "here here"];
        train_bpe(texts, &BpeTrainConfig { vocab_cap: 320, ..Default::default() }).unwrap()
    }

    #[test]
    fn text_round_trip() {
        let m = model();
        let text = m.to_text();
        let back = BpeModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn file_round_trip() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bpe.model");
        m.save(&p).unwrap();
        let back = BpeModel::load(&p).unwrap();
        let s = "here are new tab\twords";
        assert_eq!(back.encode(s, true), m.encode(s, true));
    }

    #[test]
    fn deterministic_training() {
        assert_eq!(model().to_text(), model().to_text());
    }

    #[test]
    fn rejects_garbage() {
        assert!(BpeModel::from_text("nope").is_err());
        let mut t = model().to_text();
        t.push_str("99999\t1\n");
        assert!(matches!(BpeModel::from_text(&t), Err(TokenizerError::Parse { .. })));
    }
}
