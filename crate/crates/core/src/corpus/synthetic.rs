//! Deterministic metadata-rich dialogue corpora for desk-scale experiments.
//!
//! Every speaker profile draws attribute values from small pools. Four
//! attributes (profession, age bracket, speaker country, production genre)
//! own three marker words per value. Each word of an utterance is, with
//! probability `marker_strength`, a marker of one of the speaker's four
//! marker attributes (attribute uniform, word uniform); otherwise it comes
//! from a background distribution that mixes Zipfian function words with a
//! small uniform share of every marker word.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::keys::MetaKey;
use super::normalize::{default_synonyms, normalize_value};
use super::past::build_past_context;
use super::types::{ContextSet, CorpusSplits, Sample, Split};
use super::CorpusError;

type Pool = &'static [(&'static str, [&'static str; 3])];

pub const PROFESSIONS: Pool = &[
    ("Chef", ["sauce", "oven", "butter"]),
    ("Spy", ["mission", "agent", "secret"]),
    ("Doctor", ["patient", "nurse", "surgery"]),
    ("Pilot", ["flight", "runway", "cockpit"]),
    ("Farmer", ["tractor", "harvest", "cattle"]),
    ("Teacher", ["homework", "lesson", "exam"]),
    ("Lawyer", ["court", "verdict", "jury"]),
    ("Sailor", ["ship", "anchor", "harbor"]),
];

pub const AGE_BRACKETS: Pool = &[
    ("Child", ["mommy", "toy", "candy"]),
    ("Teen", ["totally", "dude", "whatever"]),
    ("Young Adult", ["party", "dating", "rent"]),
    ("Adult", ["mortgage", "career", "taxes"]),
    ("Elderly", ["grandson", "pension", "garden"]),
];

pub const COUNTRIES: Pool = &[
    ("United States", ["buddy", "awesome", "gotten"]),
    ("United Kingdom", ["bloody", "lorry", "brilliant"]),
    ("Australia", ["arvo", "reckon", "barbie"]),
    ("Ireland", ["grand", "craic", "eejit"]),
];

pub const GENRES: Pool = &[
    ("Comedy", ["joke", "hilarious", "silly"]),
    ("Crime", ["killer", "cops", "murder"]),
    ("Horror", ["scream", "blood", "ghost"]),
    ("Sci-Fi", ["space", "robot", "laser"]),
    ("Romance", ["kiss", "darling", "heart"]),
];

pub const FUNCTION_WORDS: &[&str] = &[
    "i", "you", "the", "to", "a", "it", "and", "that", "what", "is", "we", "me", "this", "of", "in",
    "know", "no", "have", "my", "don't", "just", "not", "do", "be", "on", "your", "was", "for",
    "he", "all", "right", "are", "can", "get", "with", "here", "so", "go", "there", "like", "she",
    "yeah", "well", "now", "they", "come", "oh", "want", "think", "how", "up", "out", "good",
    "okay", "see", "him", "her", "look", "tell", "why",
];

const GENDERS: &[&str] = &["A man", "A woman", "A non-binary person"];
const RELIGIONS: &[&str] = &["Christian", "Jewish", "Muslim", "Buddhist", "Unknown"];
const PRODUCTION_COUNTRIES: &[&str] = &["United States", "United Kingdom", "Canada", "France"];
const RATINGS: &[&str] = &["G", "PG", "PG-13", "R", "TV-14"];
const WRITERS: &[&str] = &[
    "Ann Carter", "Bo Lind", "Cy Moreau", "Dee Okafor", "Eli Novak", "Fay Ito",
];

/// Share of background probability mass spread uniformly over all markers.
pub const BACKGROUND_MARKER_MASS: f64 = 0.1;
pub const MIN_WORDS: usize = 4;
pub const MAX_WORDS: usize = 10;
/// Number of attributes that carry marker words.
pub const MARKER_ATTRIBUTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub n_productions: usize,
    pub lines_per_speaker: usize,
    pub marker_strength: f64,
    pub n_unseen_speakers: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_speakers: 20,
            n_productions: 5,
            lines_per_speaker: 100,
            marker_strength: 0.5,
            n_unseen_speakers: 10,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        if self.n_speakers == 0 || self.n_productions == 0 || self.lines_per_speaker == 0 {
            return bad("speaker, production and line counts must be >= 1");
        }
        if self.n_unseen_speakers == 0 {
            return bad("n_unseen_speakers must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.marker_strength) {
            return bad("marker_strength must lie in [0, 1]");
        }
        let combos = PROFESSIONS.len() * AGE_BRACKETS.len() * COUNTRIES.len() * self.n_productions;
        if self.n_speakers + self.n_unseen_speakers > combos {
            return bad("more speakers than distinct marker profiles");
        }
        Ok(())
    }
}

/// All marker words, in pool order.
pub fn all_markers() -> Vec<&'static str> {
    [PROFESSIONS, AGE_BRACKETS, COUNTRIES, GENRES]
        .iter()
        .flat_map(|pool| pool.iter().flat_map(|(_, m)| m.iter().copied()))
        .collect()
}

/// Marker words owned by a profession value.
pub fn profession_markers(profession: &str) -> Option<[&'static str; 3]> {
    PROFESSIONS.iter().find(|(p, _)| *p == profession).map(|(_, m)| *m)
}

/// Marker words implied by a metadata profile, grouped per attribute.
pub fn profile_markers(ctx: &ContextSet) -> Vec<[&'static str; 3]> {
    let lookup = |pool: Pool, key: MetaKey| {
        ctx.get(key).and_then(|v| pool.iter().find(|(name, _)| *name == v).map(|(_, m)| *m))
    };
    [
        lookup(PROFESSIONS, MetaKey::SpeakerProfession),
        lookup(AGE_BRACKETS, MetaKey::SpeakerAgeBracket),
        lookup(COUNTRIES, MetaKey::SpeakerCountry),
        lookup(GENRES, MetaKey::ProductionGenre),
    ]
    .into_iter()
    .flatten()
    .collect()
}

struct WordSampler {
    zipf: WeightedIndex<f64>,
    markers: Vec<&'static str>,
    strength: f64,
}

impl WordSampler {
    fn new(strength: f64) -> Self {
        let weights: Vec<f64> = (1..=FUNCTION_WORDS.len()).map(|r| 1.0 / r as f64).collect();
        WordSampler {
            zipf: WeightedIndex::new(weights).expect("positive weights"),
            markers: all_markers(),
            strength,
        }
    }

    fn background<R: Rng>(&self, rng: &mut R) -> &'static str {
        if rng.random::<f64>() < BACKGROUND_MARKER_MASS {
            self.markers[rng.random_range(0..self.markers.len())]
        } else {
            FUNCTION_WORDS[self.zipf.sample(rng)]
        }
    }

    fn utterance<R: Rng>(&self, rng: &mut R, markers: &[[&'static str; 3]]) -> String {
        let n = rng.random_range(MIN_WORDS..=MAX_WORDS);
        let words: Vec<&str> = (0..n)
            .map(|_| {
                if !markers.is_empty() && rng.random::<f64>() < self.strength {
                    let attr = &markers[rng.random_range(0..markers.len())];
                    attr[rng.random_range(0..3)]
                } else {
                    self.background(rng)
                }
            })
            .collect();
        words.join(" ")
    }
}

fn pick<'a, R: Rng, T>(rng: &mut R, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn set(ctx: &mut ContextSet, key: MetaKey, raw: &str) {
    ctx.set(key, normalize_value(default_synonyms(), key, raw));
}

fn production_profile<R: Rng>(rng: &mut R, genre: usize) -> ContextSet {
    let (name, m) = GENRES[genre];
    let mut ctx = ContextSet::new();
    set(&mut ctx, MetaKey::ProductionCountry, pick(rng, PRODUCTION_COUNTRIES));
    set(&mut ctx, MetaKey::ProductionGenre, name);
    set(&mut ctx, MetaKey::ProductionPgRating, pick(rng, RATINGS));
    set(&mut ctx, MetaKey::ProductionPlot, &format!("A {} story full of {} and {}", name.to_lowercase(), m[0], m[1]));
    set(&mut ctx, MetaKey::ProductionWriters, &format!("{}, {}", pick(rng, WRITERS), pick(rng, WRITERS)));
    set(&mut ctx, MetaKey::ProductionYear, &rng.random_range(1950..2021).to_string());
    ctx
}

fn speaker_profile<R: Rng>(rng: &mut R, prof: usize, age: usize, country: usize) -> ContextSet {
    let (p, pm) = PROFESSIONS[prof];
    let (a, am) = AGE_BRACKETS[age];
    let (c, cm) = COUNTRIES[country];
    let mut ctx = ContextSet::new();
    set(&mut ctx, MetaKey::SpeakerAdditionalInfo, "");
    set(&mut ctx, MetaKey::SpeakerAgeBracket, a);
    set(&mut ctx, MetaKey::SpeakerCountry, c);
    set(
        &mut ctx,
        MetaKey::SpeakerDescription,
        &format!("{a} {} who keeps talking about {} and {}", p.to_lowercase(), pm[0], am[0]),
    );
    set(&mut ctx, MetaKey::SpeakerGender, pick(rng, GENDERS));
    set(&mut ctx, MetaKey::SpeakerProfession, p);
    set(&mut ctx, MetaKey::SpeakerQuote, &format!("you know the {} is {} {}", pm[1], cm[0], am[1]));
    set(&mut ctx, MetaKey::SpeakerReligion, pick(rng, RELIGIONS));
    ctx
}

/// Generates a corpus of seen speakers (train/valid/test) plus held-out
/// speakers that appear only in `test_unseen`.
pub fn generate_synthetic(seed: u64, spec: &SyntheticSpec) -> Result<CorpusSplits, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = WordSampler::new(spec.marker_strength);

    let mut genre_order: Vec<usize> = (0..GENRES.len()).collect();
    genre_order.shuffle(&mut rng);
    let productions: Vec<ContextSet> = (0..spec.n_productions)
        .map(|i| production_profile(&mut rng, genre_order[i % GENRES.len()]))
        .collect();

    let total = spec.n_speakers + spec.n_unseen_speakers;
    let mut used = BTreeSet::new();
    let mut samples = Vec::new();
    for s in 0..total {
        let unseen = s >= spec.n_speakers;
        let production = if unseen { rng.random_range(0..spec.n_productions) } else { s % spec.n_productions };
        let (prof, age, country) = loop {
            let t = (
                rng.random_range(0..PROFESSIONS.len()),
                rng.random_range(0..AGE_BRACKETS.len()),
                rng.random_range(0..COUNTRIES.len()),
            );
            if used.insert((t, production)) {
                break t;
            }
        };
        let speaker = speaker_profile(&mut rng, prof, age, country);
        let context = speaker.merged(&productions[production]);
        let markers = profile_markers(&context);
        let speaker_id = if unseen { format!("unseen{:03}", s - spec.n_speakers) } else { format!("spk{s:03}") };
        let production_id = format!("prod{production:02}");

        let n = spec.lines_per_speaker;
        let n_train = ((n as f64 * 0.8).round() as usize).max(1);
        let n_valid = ((n as f64 * 0.1).round() as usize).min(n - n_train);
        for line in 0..n {
            let split = if unseen {
                Split::TestUnseen
            } else if line < n_train {
                Split::Train
            } else if line < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            samples.push(Sample {
                utterance: sampler.utterance(&mut rng, &markers),
                speaker_id: speaker_id.clone(),
                production_id: production_id.clone(),
                split,
                context: context.clone(),
            });
        }
    }
    CorpusSplits::from_samples(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialogueSpec {
    pub n_documents: usize,
    pub lines_per_document: usize,
    pub marker_strength: f64,
}

/// Generates documents of consecutive lines sharing one latent profile; the
/// context of every line is its (up to three) preceding lines. Ten percent
/// of documents go to the validation split.
pub fn generate_dialogues(seed: u64, spec: &DialogueSpec) -> Result<CorpusSplits, CorpusError> {
    if spec.n_documents == 0 || spec.lines_per_document == 0 {
        return Err(CorpusError::InvalidSpec("document and line counts must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.marker_strength) {
        return Err(CorpusError::InvalidSpec("marker_strength must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1a1);
    let sampler = WordSampler::new(spec.marker_strength);
    let n_valid = (spec.n_documents / 10).max(1).min(spec.n_documents.saturating_sub(1));
    let mut samples = Vec::new();
    for d in 0..spec.n_documents {
        let markers = vec![
            PROFESSIONS[rng.random_range(0..PROFESSIONS.len())].1,
            AGE_BRACKETS[rng.random_range(0..AGE_BRACKETS.len())].1,
            COUNTRIES[rng.random_range(0..COUNTRIES.len())].1,
            GENRES[rng.random_range(0..GENRES.len())].1,
        ];
        let lines: Vec<(i64, String)> = (0..spec.lines_per_document)
            .map(|i| (i as i64 * 2000, sampler.utterance(&mut rng, &markers)))
            .collect();
        let split = if d < spec.n_documents - n_valid { Split::Train } else { Split::Valid };
        for mut s in build_past_context(&lines, 3)? {
            s.speaker_id = format!("doc{d:04}");
            s.production_id = format!("doc{d:04}");
            s.split = split;
            samples.push(s);
        }
    }
    CorpusSplits::from_samples(samples)
}
