use super::keys::{KeySet, MetaKey};
use super::normalize::normalize_text;
use super::types::{ContextSet, Sample, Split};
use super::CorpusError;

pub const DEFAULT_PAST_LINES: usize = 3;

/// Turns one timestamped document into samples whose context holds the
/// `k` preceding lines: `doc.past_1` is the most recent, missing history is
/// the empty string. Equal timestamps keep input order.
pub fn build_past_context(dialogue: &[(i64, String)], k: usize) -> Result<Vec<Sample>, CorpusError> {
    if k > MetaKey::PAST.len() {
        return Err(CorpusError::TooManyPastSlots(k));
    }
    if let Some(i) = dialogue.windows(2).position(|w| w[1].0 < w[0].0) {
        return Err(CorpusError::NonMonotonicTimestamps { index: i + 1 });
    }
    let lines: Vec<String> = dialogue.iter().map(|(_, t)| normalize_text(t)).collect();
    Ok(lines
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let context = (1..=k)
                .map(|j| {
                    let past = if j <= i { lines[i - j].clone() } else { String::new() };
                    (MetaKey::past(j).expect("k checked above"), past)
                })
                .collect();
            Sample {
                utterance: text.clone(),
                speaker_id: String::new(),
                production_id: String::new(),
                split: Split::Train,
                context,
            }
        })
        .collect())
}

/// Keeps only the context variables named in `mask`.
pub fn select_metadata(sample: &Sample, mask: &KeySet) -> Sample {
    Sample { context: sample.context.select(mask), ..sample.clone() }
}

/// The subset of a context set a model should see for a given source.
pub fn past_only(ctx: &ContextSet) -> ContextSet {
    ctx.filter(MetaKey::is_past)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KeyRegistry;

    fn doc(n: usize) -> Vec<(i64, String)> {
        (0..n).map(|i| (i as i64 * 1000, format!("line {i}"))).collect()
    }

    #[test]
    fn prefix_counts() {
        let out = build_past_context(&doc(4), 3).unwrap();
        let filled: Vec<usize> = out
            .iter()
            .map(|s| s.context.iter().filter(|(_, v)| !v.is_empty()).count())
            .collect();
        assert_eq!(filled, vec![0, 1, 2, 3]);
        assert!(out.iter().all(|s| s.context.len() == 3));
    }

    #[test]
    fn slot_j_is_line_i_minus_j() {
        let d = doc(6);
        let out = build_past_context(&d, 3).unwrap();
        assert_eq!(out.len(), d.len());
        for (i, s) in out.iter().enumerate() {
            for j in 1..=3usize {
                let got = s.context.get(MetaKey::past(j).unwrap()).unwrap();
                if j <= i {
                    assert_eq!(got, d[i - j].1);
                } else {
                    assert_eq!(got, "");
                }
            }
        }
    }

    #[test]
    fn first_line_has_no_history() {
        let out = build_past_context(&doc(1), 3).unwrap();
        assert!(out[0].context.is_blank());
        let out = build_past_context(&doc(3), 0).unwrap();
        assert!(out.iter().all(|s| s.context.is_empty()));
    }

    #[test]
    fn ties_allowed_decrease_rejected() {
        let tied = vec![(5, "a".to_string()), (5, "b".to_string())];
        let out = build_past_context(&tied, 3).unwrap();
        assert_eq!(out[1].context.get(MetaKey::DocPast1), Some("a"));
        let bad = vec![(5, "a".to_string()), (4, "b".to_string())];
        assert!(matches!(
            build_past_context(&bad, 3),
            Err(CorpusError::NonMonotonicTimestamps { index: 1 })
        ));
        assert!(build_past_context(&tied, 4).is_err());
    }

    fn full_sample() -> Sample {
        let context = MetaKey::metadata_keys().map(|k| (k, format!("v-{k}"))).collect();
        Sample {
            utterance: "hello".into(),
            speaker_id: "s".into(),
            production_id: "p".into(),
            split: Split::Train,
            context,
        }
    }

    #[test]
    fn select_speaker_profile() {
        let s = full_sample();
        let mask: KeySet = MetaKey::SPEAKER_PROFILE.into_iter().collect();
        let out = select_metadata(&s, &mask);
        let keys: Vec<_> = out.context.keys().collect();
        assert_eq!(keys, MetaKey::SPEAKER_PROFILE.to_vec());
        assert_eq!(out.utterance, s.utterance);
        assert_eq!(out.speaker_id, s.speaker_id);
    }

    #[test]
    fn select_empty_and_single() {
        let s = full_sample();
        assert!(select_metadata(&s, &KeySet::new()).context.is_empty());
        let mask = KeyRegistry::default().parse_mask(&["speaker.profession"]).unwrap();
        let out = select_metadata(&s, &mask);
        assert_eq!(out.context.len(), 1);
        assert_eq!(out.context.get(MetaKey::SpeakerProfession), Some("v-speaker.profession"));
    }
}
