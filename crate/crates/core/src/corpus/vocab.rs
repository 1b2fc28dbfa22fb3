use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{SplitCorpus, Task};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const EMOTION_QUERY: u32 = 2;
const RHETORIC_QUERY: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<emotion>", "<rhetoric>"];

/// Lowercased word split on anything that is not alphanumeric.
pub fn tokenize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Closed word-level vocabulary built from a training split.
///
/// Index 0 is PAD, 1 is UNK, 2 and 3 are the per-task query tokens; words
/// follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::InvalidInput(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Builds the vocabulary from the train split only.
    pub fn build(corpus: &SplitCorpus) -> Result<Vocabulary> {
        if corpus.train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let words: BTreeSet<String> = corpus
            .train
            .iter()
            .flat_map(|s| tokenize_words(&s.text))
            .collect();
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Vocabulary::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn query_token(task: Task) -> u32 {
        match task {
            Task::Emotion => EMOTION_QUERY,
            Task::Rhetoric => RHETORIC_QUERY,
        }
    }

    /// Word indices of `text`, truncated to `max_seq`. Never fails.
    pub fn tokenize(&self, text: &str, max_seq: usize) -> Vec<u32> {
        tokenize_words(text)
            .iter()
            .take(max_seq)
            .map(|w| self.index_of(w))
            .collect()
    }

    /// Model input for `task`: the sentence truncated to `max_seq - 1` words
    /// followed by the task's query token.
    pub fn encode(&self, text: &str, task: Task, max_seq: usize) -> Vec<u32> {
        let mut ids = self.tokenize(text, max_seq.saturating_sub(1));
        ids.push(Self::query_token(task));
        ids
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::{Label, LabeledSentence};

    fn corpus(texts: &[&str]) -> SplitCorpus {
        SplitCorpus {
            train: texts
                .iter()
                .enumerate()
                .map(|(i, t)| LabeledSentence {
                    id: i as u64,
                    text: t.to_string(),
                    label: Label::Happiness,
                })
                .collect(),
            dev: vec![],
            test: vec![],
            seed: 0,
        }
    }

    #[test]
    fn lowercases_and_strips_punctuation() {
        let v = Vocabulary::build(&corpus(&["i am happy", "you are sad"])).unwrap();
        let ids = v.tokenize("I am HAPPY.", 16);
        assert_eq!(ids, vec![v.index_of("i"), v.index_of("am"), v.index_of("happy")]);
        assert!(ids.iter().all(|&i| i > RHETORIC_QUERY));
        assert_eq!(v.tokenize("zebra", 16), vec![UNK]);
        assert_eq!(v.token(PAD), Some("<pad>"));
    }

    #[test]
    fn dev_and_test_words_stay_out() {
        let mut c = corpus(&["alpha beta"]);
        c.test.push(LabeledSentence {
            id: 9,
            text: "gamma".into(),
            label: Label::Anger,
        });
        let v = Vocabulary::build(&c).unwrap();
        assert_eq!(v.index_of("gamma"), UNK);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn encode_appends_query() {
        let v = Vocabulary::build(&corpus(&["a b c d e"])).unwrap();
        let ids = v.encode("a b c d e", Task::Rhetoric, 4);
        assert_eq!(ids.len(), 4);
        assert_eq!(*ids.last().unwrap(), RHETORIC_QUERY);
        assert_eq!(v.encode("", Task::Emotion, 4), vec![EMOTION_QUERY]);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::build(&corpus(&["x y z"])).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }

    proptest! {
        #[test]
        fn tokenize_is_total_and_bounded(text in ".*", max_seq in 1usize..20) {
            let v = Vocabulary::build(&corpus(&["the quick brown fox"])).unwrap();
            let ids = v.tokenize(&text, max_seq);
            prop_assert!(ids.len() <= max_seq);
            prop_assert!(ids.iter().all(|&i| (i as usize) < v.len()));
        }

        #[test]
        fn in_vocab_text_round_trips(words in proptest::collection::vec(
            prop::sample::select(vec!["the", "quick", "brown", "fox"]), 1..10)
        ) {
            let v = Vocabulary::build(&corpus(&["the quick brown fox"])).unwrap();
            let text = words.join(" ").to_uppercase() + "!";
            let ids = v.tokenize(&text, 64);
            prop_assert_eq!(v.detokenize(&ids), words.join(" "));
        }
    }
}
