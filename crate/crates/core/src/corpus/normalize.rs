//! Text and metadata normalization.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use super::keys::{KeyRegistry, MetaKey};
use super::types::ContextSet;
use super::CorpusError;

pub const DEFAULT_SYNONYMS: &str = include_str!("../../data/synonyms.tsv");

static MARKUP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^>]*>").unwrap());
static SUBTITLE_OVERRIDE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\\[^}]*\}").unwrap());
static SPACE_BEFORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r" ([,.!?;:%)\]}])").unwrap());
static SPACE_AFTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([(\[{]) ").unwrap());
static CLITIC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r" (n't|'s|'re|'ve|'ll|'d|'m)\b").unwrap());
static MULTI_DOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\.{2,}").unwrap());
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{4}$").unwrap());

fn map_punct(c: char, out: &mut String) {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '`' => out.push('\''),
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{00AB}' | '\u{00BB}' | '\u{2033}' => {
            out.push('"')
        }
        '\u{2010}'..='\u{2015}' | '\u{2212}' => out.push('-'),
        '\u{2026}' => out.push_str("..."),
        '\u{200B}' | '\u{200C}' | '\u{200D}' | '\u{2060}' | '\u{FEFF}' | '\u{00AD}' => {}
        c if c.is_whitespace() => out.push(' '),
        c => out.push(c),
    }
}

/// Canonicalizes one line of dialogue: strips markup, maps typographic
/// punctuation to ASCII, undoes tokenizer spacing, collapses multi-dots to
/// `...` and squeezes whitespace. Passes repeat until the text stops
/// changing, since detokenizing can join a new markup span.
pub fn normalize_text(raw: &str) -> String {
    let mut text = normalize_pass(raw);
    loop {
        let next = normalize_pass(&text);
        if next == text {
            return text;
        }
        text = next;
    }
}

fn normalize_pass(raw: &str) -> String {
    let stripped = MARKUP.replace_all(raw, "");
    let stripped = SUBTITLE_OVERRIDE.replace_all(&stripped, "");
    let mut mapped = String::with_capacity(stripped.len());
    for c in stripped.chars() {
        map_punct(c, &mut mapped);
    }
    let squeezed = mapped.split_whitespace().collect::<Vec<_>>().join(" ");
    let detok = SPACE_BEFORE.replace_all(&squeezed, "$1");
    let detok = SPACE_AFTER.replace_all(&detok, "$1");
    let detok = CLITIC.replace_all(&detok, "$1");
    MULTI_DOT.replace_all(&detok, "...").trim().to_string()
}

/// Surface → canonical value table, optionally scoped to one key.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    scoped: HashMap<MetaKey, HashMap<String, String>>,
    global: HashMap<String, String>,
}

impl SynonymTable {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut table = SynonymTable::default();
        let mut section: Option<Option<MetaKey>> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(if name == "*" { None } else { Some(name.parse()?) });
                continue;
            }
            let Some(scope) = section else {
                return Err(CorpusError::Parse {
                    line: lineno + 1,
                    message: "synonym row before any [section]".into(),
                });
            };
            let (surface, canonical) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
                line: lineno + 1,
                message: "expected two tab-separated columns".into(),
            })?;
            let map = match scope {
                Some(key) => table.scoped.entry(key).or_default(),
                None => &mut table.global,
            };
            map.insert(surface.trim().to_lowercase(), canonical.trim().to_string());
        }
        Ok(table)
    }

    pub fn lookup(&self, key: MetaKey, value: &str) -> Option<&str> {
        let folded = value.to_lowercase();
        self.scoped
            .get(&key)
            .and_then(|m| m.get(&folded))
            .or_else(|| self.global.get(&folded))
            .map(String::as_str)
    }
}

/// Built-in synonym table shipped with the crate.
pub fn default_synonyms() -> &'static SynonymTable {
    static TABLE: LazyLock<SynonymTable> =
        LazyLock::new(|| SynonymTable::parse(DEFAULT_SYNONYMS).expect("built-in synonyms"));
    &TABLE
}

fn has_prefix_ci(value: &str, prefix: &str) -> bool {
    value.len() >= prefix.len()
        && value.is_char_boundary(prefix.len())
        && value[..prefix.len()].eq_ignore_ascii_case(prefix)
}

/// Rewrites bare categorical codes as self-describing statements.
fn verbalize(key: MetaKey, value: String) -> String {
    if value.is_empty() {
        return value;
    }
    match key {
        MetaKey::ProductionPgRating if !has_prefix_ci(&value, "PG Rating:") => {
            format!("PG Rating: {value}")
        }
        MetaKey::ProductionYear if YEAR.is_match(&value) => format!("Released in {value}"),
        MetaKey::ProductionWriters if !has_prefix_ci(&value, "Written by") => {
            format!("Written by: {value}")
        }
        _ => value,
    }
}

pub fn normalize_value(table: &SynonymTable, key: MetaKey, raw: &str) -> String {
    let text = normalize_text(raw);
    let canonical = match table.lookup(key, &text) {
        Some(c) => c.to_string(),
        None => text,
    };
    normalize_text(&verbalize(key, canonical))
}

/// Applies the three metadata rules to every variable: absent values become
/// `""`, synonyms collapse to one surface form, categorical codes are
/// verbalized.
pub fn normalize_metadata(table: &SynonymTable, ctx: &ContextSet) -> ContextSet {
    ctx.iter()
        .map(|(k, v)| (k, normalize_value(table, k, v)))
        .collect()
}

/// Like [`normalize_metadata`] but starting from raw surface keys, where a
/// `None` value stands for a field that was never filled in.
pub fn normalize_raw_metadata<K: AsRef<str>>(
    registry: &KeyRegistry,
    table: &SynonymTable,
    pairs: &[(K, Option<String>)],
) -> Result<ContextSet, CorpusError> {
    let mut ctx = ContextSet::new();
    for (surface, value) in pairs {
        let key = registry.resolve(surface.as_ref())?;
        let value = value.as_deref().map(|v| normalize_value(table, key, v));
        ctx.insert(key, value.unwrap_or_default())?;
    }
    Ok(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_markup() {
        assert_eq!(normalize_text("<i>Hello</i>"), "Hello");
        assert_eq!(normalize_text("{\\an8}<font color=\"red\">Run!</font>"), "Run!");
    }

    #[test]
    fn multi_dots_become_three() {
        assert_eq!(normalize_text("Wait.. what"), "Wait... what");
        assert_eq!(normalize_text("Hmm....."), "Hmm...");
        assert_eq!(normalize_text("So\u{2026}"), "So...");
    }

    #[test]
    fn empty_is_fixed_point() {
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("   \t "), "");
    }

    #[test]
    fn punctuation_and_spacing() {
        assert_eq!(normalize_text("\u{201C}Don\u{2019}t ,  go !\u{201D}"), "\"Don't, go!\"");
        assert_eq!(normalize_text("I do n't know ( really )"), "I don't know (really)");
        assert_eq!(normalize_text("it 's fine"), "it's fine");
    }

    #[test]
    fn pg_rating_verbalized() {
        let t = default_synonyms();
        assert_eq!(normalize_value(t, MetaKey::ProductionPgRating, "R"), "PG Rating: R");
        assert_eq!(normalize_value(t, MetaKey::ProductionPgRating, "PG Rating: R"), "PG Rating: R");
        assert_eq!(normalize_value(t, MetaKey::ProductionYear, "1974"), "Released in 1974");
    }

    #[test]
    fn gender_synonyms_collapse() {
        let t = default_synonyms();
        let a = normalize_value(t, MetaKey::SpeakerGender, "m");
        let b = normalize_value(t, MetaKey::SpeakerGender, "M");
        assert_eq!(a, b);
        assert_eq!(a, "A man");
    }

    #[test]
    fn absent_becomes_empty() {
        let reg = KeyRegistry::default();
        let t = default_synonyms();
        let ctx = normalize_raw_metadata(
            &reg,
            t,
            &[("religion", None), ("production.plot", Some("N/A".to_string()))],
        )
        .unwrap();
        assert_eq!(ctx.get(MetaKey::SpeakerReligion), Some(""));
        assert_eq!(ctx.get(MetaKey::ProductionPlot), Some(""));
    }

    #[test]
    fn unknown_key_rejected() {
        let reg = KeyRegistry::default();
        let err = normalize_raw_metadata(&reg, default_synonyms(), &[("hat", Some("x".into()))]);
        assert!(matches!(err, Err(CorpusError::UnknownKey(_))));
    }

    #[test]
    fn unlisted_values_pass_through() {
        let t = default_synonyms();
        assert_eq!(normalize_value(t, MetaKey::SpeakerProfession, "Criminal Profiler"), "Criminal Profiler");
    }

    proptest! {
        #[test]
        fn normalize_text_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn normalize_text_idempotent_punct_heavy(s in "[a-z .,!?'()<>{}\\\\n\u{2026}\u{201C}]{0,30}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn normalize_metadata_idempotent_and_key_preserving(
            vals in proptest::collection::vec("[A-Za-z0-9 ./:-]{0,12}", 14)
        ) {
            let t = default_synonyms();
            let ctx: ContextSet = MetaKey::metadata_keys().zip(vals).collect();
            let once = normalize_metadata(t, &ctx);
            let twice = normalize_metadata(t, &once);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.keys().eq(ctx.keys()));
        }
    }
}
