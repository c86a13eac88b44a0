use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{past_only, ContextSet, KeySet, Sample};
use crate::embedder::{ContextVector, Embedder};
use crate::model::Example;
use crate::tokenizer::{BpeModel, TokenSequence};

use super::ContextSource;

/// The context a model sees for `sample` under `source`.
pub fn visible_context(sample_ctx: &ContextSet, source: ContextSource, mask: Option<&KeySet>) -> ContextSet {
    match source {
        ContextSource::PastDialogue => past_only(sample_ctx),
        ContextSource::Metadata => {
            let meta = sample_ctx.filter(|k| k.is_metadata());
            match mask {
                Some(m) => meta.select(m),
                None => meta,
            }
        }
        ContextSource::None => ContextSet::new(),
    }
}

/// Tokenizes utterances and embeds their contexts.
#[derive(Debug, Clone, Copy)]
pub struct Featurizer<'a> {
    pub bpe: &'a BpeModel,
    pub embedder: &'a Embedder,
    pub max_seq_len: usize,
}

/// Token sequences paired with deduplicated context embeddings.
#[derive(Debug, Clone, Default)]
pub struct EncodedSplit {
    pub tokens: Vec<TokenSequence>,
    pub ctx_index: Vec<usize>,
    pub contexts: Vec<Vec<ContextVector>>,
}

impl<'a> Featurizer<'a> {
    pub fn new(bpe: &'a BpeModel, embedder: &'a Embedder, max_seq_len: usize) -> Self {
        Featurizer { bpe, embedder, max_seq_len }
    }

    /// BOS + pieces + EOS, cut to `max_seq_len`.
    pub fn tokens(&self, text: &str) -> TokenSequence {
        let mut t = self.bpe.encode(text, true);
        t.ids.truncate(self.max_seq_len);
        t
    }

    pub fn context(&self, ctx: &ContextSet) -> Vec<ContextVector> {
        self.embedder.embed_set(ctx)
    }

    /// Encodes samples, each paired with an explicit context set.
    pub fn encode_pairs<'s>(&self, pairs: impl IntoIterator<Item = (&'s str, ContextSet)>) -> EncodedSplit {
        let mut out = EncodedSplit::default();
        let mut seen: HashMap<ContextSet, usize> = HashMap::new();
        for (text, ctx) in pairs {
            let ix = match seen.get(&ctx) {
                Some(&ix) => ix,
                None => {
                    out.contexts.push(self.context(&ctx));
                    seen.insert(ctx, out.contexts.len() - 1);
                    out.contexts.len() - 1
                }
            };
            out.tokens.push(self.tokens(text));
            out.ctx_index.push(ix);
        }
        out
    }

    pub fn encode<'s>(
        &self,
        samples: impl IntoIterator<Item = &'s Sample>,
        source: ContextSource,
        mask: Option<&KeySet>,
    ) -> EncodedSplit {
        self.encode_pairs(
            samples.into_iter().map(|s| (s.utterance.as_str(), visible_context(&s.context, source, mask))),
        )
    }
}

impl EncodedSplit {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of predicted positions.
    pub fn n_targets(&self) -> usize {
        self.tokens.iter().map(|t| t.len().saturating_sub(1)).sum()
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example::new(&self.contexts[self.ctx_index[i]], &self.tokens[i])
    }

    pub fn examples<'s>(&'s self, ix: &[usize]) -> Vec<Example<'s>> {
        ix.iter().map(|&i| self.example(i)).collect()
    }

    /// Groups of example indices whose token count stays within
    /// `batch_tokens` (a longer single example forms its own batch).
    /// Examples are bucketed by length with random tie order, then the
    /// batch order is shuffled.
    pub fn batches(&self, batch_tokens: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<(usize, u64, usize)> =
            (0..self.len()).filter(|&i| self.tokens[i].len() >= 2).map(|i| (self.tokens[i].len(), rng.random(), i)).collect();
        order.sort_unstable();
        let mut batches = Vec::new();
        let mut cur = Vec::new();
        let mut used = 0;
        for (len, _, i) in order {
            if !cur.is_empty() && used + len > batch_tokens {
                batches.push(std::mem::take(&mut cur));
                used = 0;
            }
            cur.push(i);
            used += len;
        }
        if !cur.is_empty() {
            batches.push(cur);
        }
        batches.shuffle(rng);
        batches
    }

    /// Deterministic length-sorted chunks for scoring.
    pub fn eval_chunks(&self, batch_tokens: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.tokens[i].len());
        let mut chunks = Vec::new();
        let mut cur = Vec::new();
        let mut used = 0;
        for i in order {
            let len = self.tokens[i].len();
            if !cur.is_empty() && used + len > batch_tokens {
                chunks.push(std::mem::take(&mut cur));
                used = 0;
            }
            cur.push(i);
            used += len;
        }
        if !cur.is_empty() {
            chunks.push(cur);
        }
        chunks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MetaKey, Split};
    use crate::embedder::EmbedderConfig;
    use crate::tokenizer::{train_bpe, BpeTrainConfig};
    use rand::SeedableRng;

    fn sample(text: &str, prof: &str) -> Sample {
        let mut context = ContextSet::new();
        context.set(MetaKey::SpeakerProfession, prof);
        context.set(MetaKey::ProductionGenre, "comedy");
        context.set(MetaKey::past(1).unwrap(), "earlier line");
        Sample { utterance: text.into(), speaker_id: "s".into(), production_id: "p".into(), split: Split::Train, context }
    }

    #[test]
    fn contexts_are_shared_and_sources_filter() {
        let samples = vec![sample("a b c", "chef"), sample("b c", "spy"), sample("c a b a", "chef")];
        let bpe = train_bpe(samples.iter().map(|s| s.utterance.as_str()), &BpeTrainConfig::default()).unwrap();
        let emb = Embedder::new(EmbedderConfig::with_dim(16)).unwrap();
        let f = Featurizer::new(&bpe, &emb, 5);

        let meta = f.encode(&samples, ContextSource::Metadata, None);
        assert_eq!(meta.contexts.len(), 2);
        assert_eq!(meta.ctx_index, vec![0, 1, 0]);
        assert_eq!(meta.contexts[0].len(), 3);
        assert!(meta.tokens.iter().all(|t| t.len() <= 5));
        assert_eq!(meta.tokens[2].len(), 5);

        let mask: KeySet = [MetaKey::ProductionGenre].into_iter().collect();
        let genre = f.encode(&samples, ContextSource::Metadata, Some(&mask));
        assert_eq!(genre.contexts.len(), 1);
        assert_eq!(genre.contexts[0].len(), 2);

        let past = f.encode(&samples, ContextSource::PastDialogue, None);
        assert_eq!(past.contexts.len(), 1);
        assert_eq!(past.contexts[0].len(), 2);

        let none = f.encode(&samples, ContextSource::None, None);
        assert_eq!(none.contexts[0].len(), 1);
    }

    #[test]
    fn batches_cover_every_example_once_and_respect_budget() {
        let split = EncodedSplit {
            tokens: (0..40).map(|i| TokenSequence::new(vec![1; 2 + i % 7])).collect(),
            ctx_index: vec![0; 40],
            contexts: vec![vec![]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = split.batches(20, &mut rng);
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for batch in &b {
            let used: usize = batch.iter().map(|&i| split.tokens[i].len()).sum();
            assert!(used <= 20 || batch.len() == 1);
        }
        let again = split.batches(20, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(b, again);
    }
}
