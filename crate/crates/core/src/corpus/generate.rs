use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledSentence, SplitCorpus, Task};
use crate::error::{Error, Result};

pub const MIN_SENTENCE_WORDS: usize = 5;
pub const MAX_SENTENCE_WORDS: usize = 12;

/// Marker words per label. The lists are pairwise disjoint and disjoint
/// from [`FILLER_WORDS`].
const LEXICON: [[&str; 8]; 10] = [
    ["joyful", "delighted", "cheerful", "glad", "sunny", "grinning", "thrilled", "merry"],
    ["tearful", "gloomy", "grieving", "lonely", "mournful", "heartbroken", "weeping", "somber"],
    ["furious", "enraged", "livid", "seething", "hostile", "outraged", "irate", "fuming"],
    ["terrified", "trembling", "dread", "panicked", "fearful", "shaking", "haunted", "uneasy"],
    ["astonished", "stunned", "unexpected", "startled", "amazed", "sudden", "speechless", "astounded"],
    ["revolting", "gross", "nauseating", "filthy", "repulsive", "vile", "rotten", "sickening"],
    ["ocean", "blossom", "lighthouse", "tapestry", "garden", "storm", "river", "mirror"],
    ["million", "forever", "endless", "gigantic", "infinite", "zillion", "colossal", "eternity"],
    ["pun", "joke", "giggle", "silly", "banana", "clown", "wacky", "punchline"],
    ["obviously", "sure", "brilliant", "wonderful", "genius", "totally", "clearly", "fantastic"],
];

pub const FILLER_WORDS: [&str; 50] = [
    "the", "a", "it", "was", "is", "we", "they", "he", "she", "you", "this", "that", "day",
    "time", "people", "thing", "way", "today", "there", "here", "then", "about", "with",
    "from", "into", "over", "after", "before", "again", "just", "really", "very", "some",
    "all", "one", "two", "new", "old", "home", "work", "street", "city", "room", "morning",
    "evening", "friend", "family", "story", "week", "night",
];

/// Marker words of `label`.
pub fn lexicon(label: Label) -> &'static [&'static str; 8] {
    &LEXICON[label.code() as usize]
}

/// Rhetorical device whose markers co-occur with `emotion` when a corpus is
/// generated with a non-zero `rhetoric_correlation`.
pub fn paired_rhetoric(emotion: Label) -> Option<Label> {
    match emotion {
        Label::Happiness => Some(Label::Humor),
        Label::Sadness => Some(Label::Sarcasm),
        Label::Anger => Some(Label::Hyperbole),
        Label::Fear => Some(Label::Metaphor),
        Label::Surprise => Some(Label::Hyperbole),
        Label::Disgust => Some(Label::Sarcasm),
        _ => None,
    }
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub per_label_count: usize,
    pub seed: u64,
    /// Probability that a content position holds a marker of the sentence's
    /// label rather than a filler word.
    pub signal_strength: f64,
    /// Probability that an emotion sentence carries one marker of its paired
    /// rhetorical device (see [`paired_rhetoric`]).
    pub rhetoric_correlation: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            per_label_count: 60,
            seed: 1,
            signal_strength: 1.0,
            rhetoric_correlation: 0.0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.per_label_count < 10 {
            return Err(Error::Config(format!(
                "per_label_count must be >= 10, got {}",
                self.per_label_count
            )));
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("rhetoric_correlation", self.rhetoric_correlation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

fn sentence(rng: &mut ChaCha8Rng, label: Label, spec: &CorpusSpec) -> String {
    let len = rng.random_range(MIN_SENTENCE_WORDS..=MAX_SENTENCE_WORDS);
    let markers = lexicon(label);
    let mut words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.random_bool(spec.signal_strength) {
                *markers.choose(rng).unwrap()
            } else {
                *FILLER_WORDS.choose(rng).unwrap()
            }
        })
        .collect();
    if let Some(rhet) = paired_rhetoric(label) {
        if rng.random_bool(spec.rhetoric_correlation) {
            let pos = rng.random_range(0..len);
            words[pos] = lexicon(rhet).choose(rng).unwrap();
        }
    }
    let mut text = words.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text.push('.');
    text
}

/// Builds a deterministic templated corpus covering all ten labels.
///
/// Each label contributes `per_label_count` sentences split 80/10/10 into
/// train/dev/test. Ids follow generation order.
pub fn generate_synthetic(spec: &CorpusSpec) -> Result<SplitCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.per_label_count;
    let n_train = n * 8 / 10;
    let n_dev = (n - n_train) / 2;
    let mut corpus = SplitCorpus {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        seed: spec.seed,
    };
    let mut next_id = 0u64;
    for task in Task::ALL {
        for &label in task.labels() {
            for i in 0..n {
                let s = LabeledSentence {
                    id: next_id,
                    text: sentence(&mut rng, label, spec),
                    label,
                };
                next_id += 1;
                if i < n_train {
                    corpus.train.push(s);
                } else if i < n_train + n_dev {
                    corpus.dev.push(s);
                } else {
                    corpus.test.push(s);
                }
            }
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::{tokenize_words, Split};

    fn spec(n: usize, seed: u64, signal: f64) -> CorpusSpec {
        CorpusSpec {
            per_label_count: n,
            seed,
            signal_strength: signal,
            rhetoric_correlation: 0.0,
        }
    }

    #[test]
    fn lexicons_are_disjoint() {
        let mut seen = HashSet::new();
        for l in Label::ALL {
            for w in lexicon(l) {
                assert!(seen.insert(*w), "duplicate marker {w}");
            }
        }
        for w in FILLER_WORDS {
            assert!(seen.insert(w), "filler {w} collides");
        }
    }

    #[test]
    fn small_corpus_counts_and_markers() {
        let c = generate_synthetic(&spec(10, 1, 1.0)).unwrap();
        let count = |t: Task| c.iter().filter(|(_, s)| s.label.task() == t).count();
        assert_eq!(count(Task::Emotion), 60);
        assert_eq!(count(Task::Rhetoric), 40);
        for (_, s) in c.iter() {
            let words = tokenize_words(&s.text);
            assert!(words.iter().any(|w| lexicon(s.label).contains(&w.as_str())));
            assert!((MIN_SENTENCE_WORDS..=MAX_SENTENCE_WORDS).contains(&words.len()));
        }
        assert!(c.splits_disjoint());
        assert!(c.covers_labels(Task::Emotion));
        assert!(c.covers_labels(Task::Rhetoric));
        assert_eq!(c.split(Split::Train).len(), 80);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&spec(10, 1, 1.0)).unwrap();
        let b = generate_synthetic(&spec(10, 1, 1.0)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec(10, 2, 1.0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn marker_frequency_tracks_signal_strength() {
        // Independent scan: count marker words per label over the raw text.
        let c = generate_synthetic(&spec(100, 7, 0.8)).unwrap();
        for label in Label::ALL {
            let (mut markers, mut total) = (0usize, 0usize);
            for (_, s) in c.iter().filter(|(_, s)| s.label == label) {
                for w in s.text.split_whitespace() {
                    let w: String = w
                        .chars()
                        .filter(|c| c.is_alphanumeric())
                        .collect::<String>()
                        .to_lowercase();
                    total += 1;
                    if lexicon(label).contains(&w.as_str()) {
                        markers += 1;
                    }
                }
            }
            let freq = markers as f64 / total as f64;
            assert!((0.75..=0.85).contains(&freq), "{label}: {freq}");
        }
    }

    #[test]
    fn correlation_plants_paired_markers() {
        let mut s = spec(50, 3, 0.5);
        s.rhetoric_correlation = 1.0;
        let c = generate_synthetic(&s).unwrap();
        for (_, x) in c.iter().filter(|(_, x)| x.label.task() == Task::Emotion) {
            let rhet = paired_rhetoric(x.label).unwrap();
            let words = tokenize_words(&x.text);
            assert!(words.iter().any(|w| lexicon(rhet).contains(&w.as_str())));
        }
    }

    #[test]
    fn rejects_small_counts_and_bad_fractions() {
        assert!(generate_synthetic(&spec(9, 1, 1.0)).is_err());
        assert!(generate_synthetic(&spec(10, 1, 1.5)).is_err());
    }
}
