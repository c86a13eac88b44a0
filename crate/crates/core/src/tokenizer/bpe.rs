use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::TokenizerError;

pub const DEFAULT_VOCAB_CAP: usize = 8000;
/// Marks the start of every word except the first.
pub const WORD_BOUNDARY: char = '\u{2581}';

/// Literal boundary characters in the input never enter the alphabet.
const BARRIER: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Special {
    Pad = 0,
    Bos = 1,
    Eos = 2,
    Unk = 3,
}

impl Special {
    pub const ALL: [Special; 4] = [Special::Pad, Special::Bos, Special::Eos, Special::Unk];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Bos => "<s>",
            Special::Eos => "</s>",
            Special::Unk => "<unk>",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Unit {
    Special(Special),
    Byte(u8),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BpeTrainConfig {
    pub vocab_cap: usize,
    pub byte_fallback: bool,
    /// Merging stops once the most frequent pair occurs fewer times.
    pub min_pair_count: u64,
}

impl Default for BpeTrainConfig {
    fn default() -> Self {
        BpeTrainConfig { vocab_cap: DEFAULT_VOCAB_CAP, byte_fallback: true, min_pair_count: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    pub(crate) byte_fallback: bool,
    pub(crate) units: Vec<Unit>,
    pub(crate) merges: Vec<(u32, u32)>,
    char_ids: HashMap<char, u32>,
    boundary_id: u32,
    merge_rank: HashMap<(u32, u32), u32>,
}

fn byte_offset() -> u32 {
    Special::ALL.len() as u32
}

impl BpeModel {
    /// Assembles a model from its units (in id order) and merges, checking
    /// the structural invariants.
    pub(crate) fn from_parts(byte_fallback: bool, units: Vec<Unit>, merges: Vec<(u32, u32)>) -> Result<Self, String> {
        let n_base = units.len() - merges.len();
        for (i, s) in Special::ALL.iter().enumerate() {
            if units.get(i) != Some(&Unit::Special(*s)) {
                return Err(format!("id {i} must be {}", s.name()));
            }
        }
        let mut char_ids = HashMap::new();
        let mut boundary_id = None;
        for (id, unit) in units.iter().enumerate().take(n_base).skip(Special::ALL.len()) {
            match unit {
                Unit::Byte(_) => {}
                Unit::Text(s) => {
                    let mut chars = s.chars();
                    match (chars.next(), chars.next()) {
                        (Some(WORD_BOUNDARY), None) => boundary_id = Some(id as u32),
                        (Some(c), None) => {
                            char_ids.insert(c, id as u32);
                        }
                        _ => return Err(format!("base unit {id} must be a single character")),
                    }
                }
                Unit::Special(_) => return Err(format!("unexpected special at id {id}")),
            }
        }
        let boundary_id = boundary_id.ok_or("missing word-boundary unit")?;
        let mut merge_rank = HashMap::new();
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let new_id = n_base + rank;
            if l as usize >= new_id || r as usize >= new_id {
                return Err(format!("merge {rank} references a later unit"));
            }
            if !matches!(units[l as usize], Unit::Text(_)) || !matches!(units[r as usize], Unit::Text(_)) {
                return Err(format!("merge {rank} joins a non-text unit"));
            }
            merge_rank.insert((l, r), rank as u32);
        }
        Ok(BpeModel { byte_fallback, units, merges, char_ids, boundary_id, merge_rank })
    }

    pub fn vocab_size(&self) -> usize {
        self.units.len()
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn base_vocab_size(&self) -> usize {
        self.units.len() - self.merges.len() - Special::ALL.len()
    }

    /// Human-readable surface of a unit (`▁` kept, bytes shown as `<0xNN>`).
    pub fn piece(&self, id: u32) -> Option<String> {
        self.units.get(id as usize).map(|u| match u {
            Unit::Special(s) => s.name().to_string(),
            Unit::Byte(b) => format!("<0x{b:02X}>"),
            Unit::Text(s) => s.clone(),
        })
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.units.iter().position(|u| matches!(u, Unit::Text(s) if s == piece)).map(|i| i as u32)
    }

    /// The same model restricted to its first `n` merges.
    pub fn truncated(&self, n: usize) -> BpeModel {
        let n = n.min(self.merges.len());
        let keep = self.units.len() - self.merges.len() + n;
        BpeModel::from_parts(self.byte_fallback, self.units[..keep].to_vec(), self.merges[..n].to_vec())
            .expect("prefix of a valid model is valid")
    }

    fn push_char(&self, c: char, out: &mut Vec<u32>) {
        if let Some(&id) = self.char_ids.get(&c) {
            out.push(id);
        } else if self.byte_fallback {
            let mut buf = [0u8; 4];
            out.extend(c.encode_utf8(&mut buf).bytes().map(|b| byte_offset() + b as u32));
        } else {
            out.push(Special::Unk.id());
        }
    }

    fn apply_merges(&self, word: &mut Vec<u32>) {
        let base = (self.units.len() - self.merges.len()) as u32;
        loop {
            let best = word
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { break };
            let pair = self.merges[rank as usize];
            let new_id = base + rank;
            let mut out = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(word[i]);
                    i += 1;
                }
            }
            *word = out;
        }
    }

    /// Encodes text; `specials` wraps the result in `<s>` … `</s>`.
    pub fn encode(&self, text: &str, specials: bool) -> TokenSequence {
        let mut ids = Vec::new();
        if specials {
            ids.push(Special::Bos.id());
        }
        let mut word = Vec::new();
        for (i, w) in text.split(' ').enumerate() {
            word.clear();
            if i > 0 {
                word.push(self.boundary_id);
            }
            // merges never span fallback units, so segment around them
            let mut segment = Vec::new();
            for c in w.chars() {
                let mut tmp = Vec::with_capacity(1);
                self.push_char(c, &mut tmp);
                let mergeable = tmp.len() == 1 && matches!(self.units[tmp[0] as usize], Unit::Text(_));
                if mergeable {
                    segment.extend(tmp);
                } else {
                    self.flush(&mut word, &mut segment);
                    word.extend(tmp);
                }
            }
            self.flush(&mut word, &mut segment);
            ids.extend_from_slice(&word);
        }
        if specials {
            ids.push(Special::Eos.id());
        }
        TokenSequence { ids }
    }

    fn flush(&self, word: &mut Vec<u32>, segment: &mut Vec<u32>) {
        if segment.is_empty() {
            return;
        }
        // a pending boundary unit belongs to the first segment of the word
        if word.last() == Some(&self.boundary_id) && word.len() == 1 {
            let mut joined = vec![self.boundary_id];
            joined.append(segment);
            self.apply_merges(&mut joined);
            word.clear();
            word.extend(joined);
        } else {
            self.apply_merges(segment);
            word.append(segment);
        }
    }

    /// Inverse of [`BpeModel::encode`]; special tokens are dropped.
    pub fn decode(&self, toks: &TokenSequence) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut bytes = Vec::new();
        for &id in &toks.ids {
            let unit = self.units.get(id as usize).ok_or(TokenizerError::InvalidTokenId(id))?;
            match unit {
                Unit::Byte(b) => bytes.push(*b),
                other => {
                    if !bytes.is_empty() {
                        out.push_str(&String::from_utf8_lossy(&bytes));
                        bytes.clear();
                    }
                    if let Unit::Text(s) = other {
                        out.extend(s.chars().map(|c| if c == WORD_BOUNDARY { ' ' } else { c }));
                    }
                }
            }
        }
        if !bytes.is_empty() {
            out.push_str(&String::from_utf8_lossy(&bytes));
        }
        Ok(out)
    }
}

fn surface(units: &[Unit], id: u32) -> &str {
    match &units[id as usize] {
        Unit::Text(s) => s,
        _ => unreachable!("only text units take part in merges"),
    }
}

/// Learns merges greedily: the most frequent adjacent pair is merged until
/// the vocabulary reaches `vocab_cap` or no pair reaches `min_pair_count`.
/// Ties go to the lexicographically smallest `(left, right)` surface pair.
pub fn train_bpe<'a, I>(texts: I, cfg: &BpeTrainConfig) -> Result<BpeModel, TokenizerError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: BTreeMap<(bool, String), u64> = BTreeMap::new();
    let mut alphabet: BTreeSet<char> = BTreeSet::new();
    for text in texts {
        for (i, w) in text.split(' ').enumerate() {
            if w.is_empty() && i == 0 {
                continue;
            }
            alphabet.extend(w.chars().filter(|&c| c != WORD_BOUNDARY));
            *word_counts.entry((i > 0, w.to_string())).or_default() += 1;
        }
    }
    if alphabet.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut units: Vec<Unit> = Special::ALL.iter().map(|s| Unit::Special(*s)).collect();
    if cfg.byte_fallback {
        units.extend((0..=255u8).map(Unit::Byte));
    }
    let mut char_ids = HashMap::new();
    for c in alphabet.iter().copied().chain(std::iter::once(WORD_BOUNDARY)) {
        char_ids.insert(c, units.len() as u32);
        units.push(Unit::Text(c.to_string()));
    }
    if units.len() > cfg.vocab_cap {
        return Err(TokenizerError::CapTooSmall { cap: cfg.vocab_cap, needed: units.len() });
    }

    let boundary = char_ids[&WORD_BOUNDARY];
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .into_iter()
        .map(|((bounded, w), n)| {
            let mut syms = Vec::with_capacity(w.len() + 1);
            if bounded {
                syms.push(boundary);
            }
            syms.extend(w.chars().map(|c| if c == WORD_BOUNDARY { BARRIER } else { char_ids[&c] }));
            (syms, n)
        })
        .collect();

    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, n)) in words.iter().enumerate() {
        for p in syms.windows(2).filter(|p| p[0] != BARRIER && p[1] != BARRIER) {
            *counts.entry((p[0], p[1])).or_default() += n;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while units.len() < cfg.vocab_cap {
        let best = counts
            .iter()
            .filter(|(_, &n)| n >= cfg.min_pair_count.max(1))
            .max_by(|(a, na), (b, nb)| {
                na.cmp(nb).then_with(|| {
                    (surface(&units, b.0), surface(&units, b.1)).cmp(&(surface(&units, a.0), surface(&units, a.1)))
                })
            })
            .map(|(p, _)| *p);
        let Some(pair) = best else { break };
        let new_id = units.len() as u32;
        units.push(Unit::Text(format!("{}{}", surface(&units, pair.0), surface(&units, pair.1))));
        merges.push(pair);

        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let (syms, n) = &mut words[wi];
            for p in syms.windows(2).filter(|p| p[0] != BARRIER && p[1] != BARRIER) {
                let key = (p[0], p[1]);
                if let Some(c) = counts.get_mut(&key) {
                    *c -= *n;
                    if *c == 0 {
                        counts.remove(&key);
                    }
                }
                if key != pair {
                    if let Some(set) = where_.get_mut(&key) {
                        set.remove(&wi);
                    }
                }
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
            for p in syms.windows(2).filter(|p| p[0] != BARRIER && p[1] != BARRIER) {
                *counts.entry((p[0], p[1])).or_default() += *n;
                where_.entry((p[0], p[1])).or_default().insert(wi);
            }
        }
    }

    Ok(BpeModel::from_parts(cfg.byte_fallback, units, merges).expect("trained model is well formed"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(cap: usize, min: u64) -> BpeTrainConfig {
        BpeTrainConfig { vocab_cap: cap, byte_fallback: false, min_pair_count: min }
    }

    fn merge_surfaces(m: &BpeModel) -> Vec<(String, String)> {
        m.merges()
            .iter()
            .map(|&(l, r)| (m.piece(l).unwrap(), m.piece(r).unwrap()))
            .collect()
    }

    // Brute-force oracle: count every adjacent character pair in the corpus.
    fn brute_force_top_pair(corpus: &[&str]) -> (String, String) {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for t in corpus {
            let cs: Vec<char> = t.chars().collect();
            for w in cs.windows(2) {
                *counts.entry((w[0].to_string(), w[1].to_string())).or_default() += 1;
            }
        }
        let max = *counts.values().max().unwrap();
        counts.into_iter().find(|(_, n)| *n == max).unwrap().0
    }

    #[test]
    fn abab_first_merge() {
        let corpus = ["abab", "abab"];
        assert_eq!(brute_force_top_pair(&corpus), ("a".into(), "b".into()));
        let m = train_bpe(corpus, &small(10, 2)).unwrap();
        assert_eq!(merge_surfaces(&m)[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn aaaa_merge_sequence() {
        // (a,a) occurs 3 times; after merging, (aa,aa) occurs once.
        let m = train_bpe(["aaaa"], &small(8, 1)).unwrap();
        assert_eq!(
            merge_surfaces(&m),
            vec![("a".to_string(), "a".to_string()), ("aa".to_string(), "aa".to_string())]
        );
        // with the default threshold only the first merge qualifies
        let m = train_bpe(["aaaa"], &small(8, 2)).unwrap();
        assert_eq!(merge_surfaces(&m), vec![("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn vocab_size_accounting() {
        let m = train_bpe(["hello world", "hello there"], &BpeTrainConfig { vocab_cap: 300, ..Default::default() }).unwrap();
        assert_eq!(m.vocab_size(), 4 + m.base_vocab_size() + m.merges().len());
        assert!(m.vocab_size() <= 300);
        assert!(matches!(
            train_bpe(["abc"], &small(5, 2)),
            Err(TokenizerError::CapTooSmall { .. })
        ));
        assert!(matches!(train_bpe(["", " "], &small(50, 2)), Err(TokenizerError::EmptyCorpus)));
    }

    #[test]
    fn encode_examples() {
        let m = train_bpe(["ab", "ab"], &small(8, 2)).unwrap();
        assert_eq!(merge_surfaces(&m), vec![("a".to_string(), "b".to_string())]);
        let ab = m.id_of("ab").unwrap();
        assert_eq!(m.encode("ab", false).ids, vec![ab]);
        assert!(m.encode("", false).is_empty());
        let wrapped = m.encode("ab", true);
        assert_eq!(wrapped.ids, vec![Special::Bos.id(), ab, Special::Eos.id()]);
        assert_eq!(m.decode(&wrapped).unwrap(), "ab");
        assert_eq!(m.decode(&TokenSequence::default()).unwrap(), "");
    }

    #[test]
    fn unseen_chars_use_bytes() {
        let m = train_bpe(["ab ab"], &BpeTrainConfig { vocab_cap: 400, ..Default::default() }).unwrap();
        let t = m.encode("aé", false);
        assert!(!t.ids.contains(&Special::Unk.id()));
        assert_eq!(t.len(), 3);
        assert_eq!(m.decode(&t).unwrap(), "aé");
        let no_fallback = train_bpe(["ab ab"], &small(20, 2)).unwrap();
        assert!(no_fallback.encode("aé", false).ids.contains(&Special::Unk.id()));
    }

    #[test]
    fn invalid_id_rejected() {
        let m = train_bpe(["ab"], &small(10, 2)).unwrap();
        assert!(matches!(
            m.decode(&TokenSequence::new(vec![999])),
            Err(TokenizerError::InvalidTokenId(999))
        ));
    }

    #[test]
    fn literal_boundary_char_round_trips() {
        let m = train_bpe(["a\u{2581}b c"], &BpeTrainConfig { vocab_cap: 300, ..Default::default() }).unwrap();
        for s in ["a\u{2581}b c", "\u{2581}", " \u{2581} "] {
            assert_eq!(m.decode(&m.encode(s, true)).unwrap(), s);
        }
    }

    fn corpus_model() -> BpeModel {
        let texts = [
            "the quick brown fox", "jumps over the lazy dog", "the dog barks", "a fox runs over the hill",
            "quick quick brown", "over and over again",
        ];
        train_bpe(texts, &BpeTrainConfig { vocab_cap: 320, ..Default::default() }).unwrap()
    }

    proptest! {
        #[test]
        fn round_trip(s in "[a-z ]{0,30}") {
            let m = corpus_model();
            prop_assert_eq!(m.decode(&m.encode(&s, true)).unwrap(), s);
        }

        #[test]
        fn round_trip_any_text(s in "\\PC{0,20}") {
            let m = corpus_model();
            prop_assert_eq!(m.decode(&m.encode(&s, false)).unwrap(), s);
        }

        #[test]
        fn more_merges_never_more_tokens(s in "[a-z]{1,8}( [a-z]{1,8}){0,4}") {
            let m = corpus_model();
            let mut prev = usize::MAX;
            for n in 0..=m.merges().len() {
                let len = m.truncated(n).encode(&s, false).len();
                prop_assert!(len <= prev);
                prev = len;
            }
        }
    }
}
