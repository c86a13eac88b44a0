//! Canonical metadata key registry.
//!
//! Every context variable carries one of a closed set of keys. The order of
//! [`MetaKey::ALL`] is the canonical order used everywhere a context set is
//! iterated: speaker keys alphabetically, then production keys
//! alphabetically, then the three past-dialogue slots.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use super::CorpusError;

/// Built-in alias table (surface key name → canonical key name).
pub const DEFAULT_KEY_REGISTRY: &str = include_str!("../../data/key_registry.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetaKey {
    SpeakerAdditionalInfo,
    SpeakerAgeBracket,
    SpeakerCountry,
    SpeakerDescription,
    SpeakerGender,
    SpeakerProfession,
    SpeakerQuote,
    SpeakerReligion,
    ProductionCountry,
    ProductionGenre,
    ProductionPgRating,
    ProductionPlot,
    ProductionWriters,
    ProductionYear,
    DocPast1,
    DocPast2,
    DocPast3,
}

impl MetaKey {
    pub const ALL: [MetaKey; 17] = [
        MetaKey::SpeakerAdditionalInfo,
        MetaKey::SpeakerAgeBracket,
        MetaKey::SpeakerCountry,
        MetaKey::SpeakerDescription,
        MetaKey::SpeakerGender,
        MetaKey::SpeakerProfession,
        MetaKey::SpeakerQuote,
        MetaKey::SpeakerReligion,
        MetaKey::ProductionCountry,
        MetaKey::ProductionGenre,
        MetaKey::ProductionPgRating,
        MetaKey::ProductionPlot,
        MetaKey::ProductionWriters,
        MetaKey::ProductionYear,
        MetaKey::DocPast1,
        MetaKey::DocPast2,
        MetaKey::DocPast3,
    ];

    /// The seven speaker attributes collected for every annotated character.
    pub const SPEAKER_PROFILE: [MetaKey; 7] = [
        MetaKey::SpeakerAgeBracket,
        MetaKey::SpeakerCountry,
        MetaKey::SpeakerDescription,
        MetaKey::SpeakerGender,
        MetaKey::SpeakerProfession,
        MetaKey::SpeakerQuote,
        MetaKey::SpeakerReligion,
    ];

    pub const PAST: [MetaKey; 3] = [MetaKey::DocPast1, MetaKey::DocPast2, MetaKey::DocPast3];

    pub fn as_str(self) -> &'static str {
        match self {
            MetaKey::SpeakerAdditionalInfo => "speaker.additional_info",
            MetaKey::SpeakerAgeBracket => "speaker.age_bracket",
            MetaKey::SpeakerCountry => "speaker.country",
            MetaKey::SpeakerDescription => "speaker.description",
            MetaKey::SpeakerGender => "speaker.gender",
            MetaKey::SpeakerProfession => "speaker.profession",
            MetaKey::SpeakerQuote => "speaker.quote",
            MetaKey::SpeakerReligion => "speaker.religion",
            MetaKey::ProductionCountry => "production.country",
            MetaKey::ProductionGenre => "production.genre",
            MetaKey::ProductionPgRating => "production.pg_rating",
            MetaKey::ProductionPlot => "production.plot",
            MetaKey::ProductionWriters => "production.writers",
            MetaKey::ProductionYear => "production.year",
            MetaKey::DocPast1 => "doc.past_1",
            MetaKey::DocPast2 => "doc.past_2",
            MetaKey::DocPast3 => "doc.past_3",
        }
    }

    pub fn is_speaker(self) -> bool {
        self <= MetaKey::SpeakerReligion
    }

    pub fn is_production(self) -> bool {
        (MetaKey::ProductionCountry..=MetaKey::ProductionYear).contains(&self)
    }

    pub fn is_past(self) -> bool {
        self >= MetaKey::DocPast1
    }

    pub fn is_metadata(self) -> bool {
        !self.is_past()
    }

    /// Past-dialogue slot for the `j`-th most recent line (1-based).
    pub fn past(j: usize) -> Option<MetaKey> {
        MetaKey::PAST.get(j.checked_sub(1)?).copied()
    }

    /// Position in canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn speaker_keys() -> impl Iterator<Item = MetaKey> {
        MetaKey::ALL.into_iter().filter(|k| k.is_speaker())
    }

    pub fn production_keys() -> impl Iterator<Item = MetaKey> {
        MetaKey::ALL.into_iter().filter(|k| k.is_production())
    }

    pub fn metadata_keys() -> impl Iterator<Item = MetaKey> {
        MetaKey::ALL.into_iter().filter(|k| k.is_metadata())
    }
}

impl fmt::Display for MetaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetaKey {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetaKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownKey(s.to_string()))
    }
}

pub type KeySet = BTreeSet<MetaKey>;

/// Resolves surface key names (e.g. `pg_rating`) to canonical keys.
#[derive(Debug, Clone)]
pub struct KeyRegistry {
    aliases: HashMap<String, MetaKey>,
}

impl KeyRegistry {
    pub fn parse_tsv(text: &str) -> Result<Self, CorpusError> {
        let mut aliases = HashMap::new();
        for key in MetaKey::ALL {
            aliases.insert(key.as_str().to_string(), key);
        }
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, canonical) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
                line: lineno + 1,
                message: "expected two tab-separated columns".into(),
            })?;
            let key: MetaKey = canonical.trim().parse()?;
            aliases.insert(surface.trim().to_string(), key);
        }
        Ok(KeyRegistry { aliases })
    }

    pub fn resolve(&self, surface: &str) -> Result<MetaKey, CorpusError> {
        self.aliases
            .get(surface)
            .copied()
            .ok_or_else(|| CorpusError::UnknownKey(surface.to_string()))
    }

    /// Parses a key mask. Entries may be canonical names, aliases, or a
    /// group glob: `speaker.*`, `production.*`, `doc.*`, `*`.
    pub fn parse_mask<S: AsRef<str>>(&self, entries: &[S]) -> Result<KeySet, CorpusError> {
        let mut mask = KeySet::new();
        for entry in entries {
            let entry = entry.as_ref().trim();
            match entry {
                "" => {}
                "*" => mask.extend(MetaKey::ALL),
                "speaker.*" => mask.extend(MetaKey::speaker_keys()),
                "production.*" => mask.extend(MetaKey::production_keys()),
                "doc.*" => mask.extend(MetaKey::PAST),
                other => {
                    mask.insert(self.resolve(other)?);
                }
            }
        }
        Ok(mask)
    }
}

impl Default for KeyRegistry {
    fn default() -> Self {
        KeyRegistry::parse_tsv(DEFAULT_KEY_REGISTRY).expect("built-in key registry is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_declaration_order() {
        let mut sorted = MetaKey::ALL;
        sorted.sort();
        assert_eq!(sorted, MetaKey::ALL);
        assert_eq!(MetaKey::metadata_keys().count(), 14);
        assert_eq!(MetaKey::speaker_keys().count(), 8);
        assert_eq!(MetaKey::production_keys().count(), 6);
    }

    #[test]
    fn speaker_keys_then_production_alphabetical() {
        let names: Vec<_> = MetaKey::speaker_keys().map(|k| k.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        let names: Vec<_> = MetaKey::production_keys().map(|k| k.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn aliases_resolve() {
        let reg = KeyRegistry::default();
        assert_eq!(reg.resolve("pg_rating").unwrap(), MetaKey::ProductionPgRating);
        assert_eq!(reg.resolve("speaker.gender").unwrap(), MetaKey::SpeakerGender);
        assert!(matches!(reg.resolve("shoe_size"), Err(CorpusError::UnknownKey(_))));
    }

    #[test]
    fn mask_globs() {
        let reg = KeyRegistry::default();
        let m = reg.parse_mask(&["speaker.*"]).unwrap();
        assert_eq!(m.len(), 8);
        assert!(m.iter().all(|k| k.is_speaker()));
        let m = reg.parse_mask(&["profession", "doc.*"]).unwrap();
        assert_eq!(m.len(), 4);
        assert!(reg.parse_mask(&["nope"]).is_err());
    }
}
