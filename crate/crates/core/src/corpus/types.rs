use std::collections::btree_map;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use super::keys::{KeySet, MetaKey};
use super::CorpusError;

/// One metadata variable: canonical key plus free-text value (`""` = absent).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextVariable {
    pub key: MetaKey,
    pub value: String,
}

/// Context variables keyed and iterated in canonical order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ContextSet {
    vars: BTreeMap<MetaKey, String>,
}

impl ContextSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: MetaKey, value: impl Into<String>) -> Result<(), CorpusError> {
        match self.vars.entry(key) {
            btree_map::Entry::Occupied(_) => Err(CorpusError::DuplicateKey(key.to_string())),
            btree_map::Entry::Vacant(e) => {
                e.insert(value.into());
                Ok(())
            }
        }
    }

    pub fn set(&mut self, key: MetaKey, value: impl Into<String>) {
        self.vars.insert(key, value.into());
    }

    pub fn get(&self, key: MetaKey) -> Option<&str> {
        self.vars.get(&key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MetaKey, &str)> + '_ {
        self.vars.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = MetaKey> + '_ {
        self.vars.keys().copied()
    }

    pub fn variables(&self) -> Vec<ContextVariable> {
        self.iter()
            .map(|(key, value)| ContextVariable { key, value: value.to_string() })
            .collect()
    }

    /// Keeps only the keys in `mask`.
    pub fn select(&self, mask: &KeySet) -> ContextSet {
        self.filter(|k| mask.contains(&k))
    }

    pub fn filter(&self, mut keep: impl FnMut(MetaKey) -> bool) -> ContextSet {
        self.iter().filter(|(k, _)| keep(*k)).collect()
    }

    pub fn speaker_part(&self) -> ContextSet {
        self.filter(MetaKey::is_speaker)
    }

    pub fn production_part(&self) -> ContextSet {
        self.filter(MetaKey::is_production)
    }

    /// True when every value is the empty string.
    pub fn is_blank(&self) -> bool {
        self.vars.values().all(String::is_empty)
    }

    /// Union of two sets; values from `other` win on shared keys.
    pub fn merged(&self, other: &ContextSet) -> ContextSet {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.set(k, v);
        }
        out
    }
}

impl<S: Into<String>> FromIterator<(MetaKey, S)> for ContextSet {
    fn from_iter<I: IntoIterator<Item = (MetaKey, S)>>(iter: I) -> Self {
        ContextSet { vars: iter.into_iter().map(|(k, v)| (k, v.into())).collect() }
    }
}

impl Serialize for ContextSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.len()))?;
        for (k, v) in self.iter() {
            map.serialize_entry(k.as_str(), v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
    TestUnseen,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Valid, Split::Test, Split::TestUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
            Split::TestUnseen => "test_unseen",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownSplit(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sample {
    pub utterance: String,
    pub speaker_id: String,
    pub production_id: String,
    pub split: Split,
    pub context: ContextSet,
}

/// An immutable, validated corpus with speaker and production registries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplits {
    samples: Vec<Sample>,
    speakers: BTreeMap<String, ContextSet>,
    productions: BTreeMap<String, ContextSet>,
}

impl CorpusSplits {
    /// Builds the registries from the samples' own metadata and checks the
    /// corpus invariants.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut speakers: BTreeMap<String, ContextSet> = BTreeMap::new();
        let mut productions: BTreeMap<String, ContextSet> = BTreeMap::new();
        for s in &samples {
            if s.utterance.is_empty() {
                return Err(CorpusError::EmptyUtterance);
            }
            register(&mut speakers, &s.speaker_id, s.context.speaker_part(), "speaker")?;
            register(&mut productions, &s.production_id, s.context.production_part(), "production")?;
        }
        let seen: BTreeSet<&str> = samples
            .iter()
            .filter(|s| matches!(s.split, Split::Train | Split::Valid))
            .map(|s| s.speaker_id.as_str())
            .collect();
        if let Some(s) = samples
            .iter()
            .find(|s| s.split == Split::TestUnseen && seen.contains(s.speaker_id.as_str()))
        {
            return Err(CorpusError::SplitViolation(s.speaker_id.clone()));
        }
        Ok(CorpusSplits { samples, speakers, productions })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn counts(&self) -> BTreeMap<Split, usize> {
        Split::ALL.into_iter().map(|s| (s, self.count(s))).collect()
    }

    pub fn speakers(&self) -> &BTreeMap<String, ContextSet> {
        &self.speakers
    }

    pub fn productions(&self) -> &BTreeMap<String, ContextSet> {
        &self.productions
    }

    pub fn speaker_profile(&self, id: &str) -> Option<&ContextSet> {
        self.speakers.get(id)
    }

    pub fn production_profile(&self, id: &str) -> Option<&ContextSet> {
        self.productions.get(id)
    }

    /// Speaker ids appearing in `split`, in registry order.
    pub fn speakers_in(&self, split: Split) -> Vec<String> {
        let ids: BTreeSet<&str> = self.split(split).map(|s| s.speaker_id.as_str()).collect();
        ids.into_iter().map(str::to_string).collect()
    }

    /// The production a speaker appears in most often (ties → smallest id).
    pub fn primary_production(&self, speaker_id: &str) -> Option<&str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in self.samples.iter().filter(|s| s.speaker_id == speaker_id) {
            *counts.entry(s.production_id.as_str()).or_default() += 1;
        }
        counts
            .into_iter()
            .fold(None, |best: Option<(&str, usize)>, (id, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((id, n)),
            })
            .map(|(id, _)| id)
    }

    /// Full metadata profile for a speaker: speaker fields merged with their
    /// primary production's fields.
    pub fn profile_context(&self, speaker_id: &str) -> ContextSet {
        let speaker = self.speakers.get(speaker_id).cloned().unwrap_or_default();
        let production = self
            .primary_production(speaker_id)
            .and_then(|p| self.productions.get(p))
            .cloned()
            .unwrap_or_default();
        speaker.merged(&production)
    }

    /// Drops samples whose speaker profile carries no information.
    pub fn drop_unannotated(&self) -> CorpusSplits {
        let kept = self
            .samples
            .iter()
            .filter(|s| self.speakers.get(&s.speaker_id).is_some_and(|p| !p.is_blank()))
            .cloned()
            .collect();
        CorpusSplits::from_samples(kept).expect("subset of a valid corpus is valid")
    }

    pub fn filter_samples(&self, keep: impl FnMut(&&Sample) -> bool) -> CorpusSplits {
        let kept = self.samples.iter().filter(keep).cloned().collect();
        CorpusSplits::from_samples(kept).expect("subset of a valid corpus is valid")
    }
}

fn register(
    registry: &mut BTreeMap<String, ContextSet>,
    id: &str,
    profile: ContextSet,
    kind: &'static str,
) -> Result<(), CorpusError> {
    match registry.get(id) {
        Some(existing) if *existing != profile => Err(CorpusError::ProfileConflict {
            kind,
            id: id.to_string(),
        }),
        Some(_) => Ok(()),
        None => {
            registry.insert(id.to_string(), profile);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(utt: &str, spk: &str, split: Split, prof: &str) -> Sample {
        let mut context = ContextSet::new();
        context.insert(MetaKey::SpeakerProfession, prof).unwrap();
        Sample {
            utterance: utt.into(),
            speaker_id: spk.into(),
            production_id: "p".into(),
            split,
            context,
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut c = ContextSet::new();
        c.insert(MetaKey::SpeakerGender, "A man").unwrap();
        assert!(c.insert(MetaKey::SpeakerGender, "A woman").is_err());
    }

    #[test]
    fn iteration_is_canonical_regardless_of_insert_order() {
        let mut c = ContextSet::new();
        c.insert(MetaKey::DocPast1, "x").unwrap();
        c.insert(MetaKey::ProductionGenre, "Comedy").unwrap();
        c.insert(MetaKey::SpeakerAgeBracket, "Teen").unwrap();
        let keys: Vec<_> = c.keys().collect();
        assert_eq!(keys, vec![MetaKey::SpeakerAgeBracket, MetaKey::ProductionGenre, MetaKey::DocPast1]);
    }

    #[test]
    fn unseen_speaker_in_train_violates() {
        let err = CorpusSplits::from_samples(vec![
            sample("hi", "a", Split::Train, "Spy"),
            sample("yo", "a", Split::TestUnseen, "Spy"),
        ]);
        assert!(matches!(err, Err(CorpusError::SplitViolation(id)) if id == "a"));
    }

    #[test]
    fn conflicting_profiles_rejected() {
        let err = CorpusSplits::from_samples(vec![
            sample("hi", "a", Split::Train, "Spy"),
            sample("yo", "a", Split::Test, "Chef"),
        ]);
        assert!(matches!(err, Err(CorpusError::ProfileConflict { .. })));
    }

    #[test]
    fn registries_and_counts() {
        let c = CorpusSplits::from_samples(vec![
            sample("hi", "a", Split::Train, "Spy"),
            sample("yo", "a", Split::Train, "Spy"),
            sample("ok", "b", Split::Test, ""),
        ])
        .unwrap();
        assert_eq!(c.count(Split::Train), 2);
        assert_eq!(c.count(Split::Test), 1);
        assert_eq!(c.speakers().len(), 2);
        assert_eq!(c.drop_unannotated().samples().len(), 2);
        assert_eq!(c.profile_context("a").get(MetaKey::SpeakerProfession), Some("Spy"));
    }
}
