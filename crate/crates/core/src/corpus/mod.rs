//! Labeled sentence corpora: synthetic generation, JSONL ingestion and
//! word-level tokenization.

mod generate;
mod jsonl;
mod label;
mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use generate::{generate_synthetic, lexicon, paired_rhetoric, CorpusSpec, FILLER_WORDS};
pub use jsonl::{load_jsonl, write_jsonl};
pub use label::{Label, Task};
pub use vocab::{tokenize_words, Vocabulary, PAD, UNK};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: u64,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Train/dev/test partition of labeled sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitCorpus {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    pub seed: u64,
}

impl SplitCorpus {
    pub fn split(&self, split: Split) -> &[LabeledSentence] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every sentence with its split, in split order.
    pub fn iter(&self) -> impl Iterator<Item = (Split, &LabeledSentence)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |x| (s, x)))
    }

    /// Sentences of one split belonging to `task`.
    pub fn task_split(&self, split: Split, task: Task) -> Vec<LabeledSentence> {
        self.split(split)
            .iter()
            .filter(|s| s.label.task() == task)
            .cloned()
            .collect()
    }

    pub fn has_task(&self, task: Task) -> bool {
        self.iter().any(|(_, s)| s.label.task() == task)
    }

    /// Ids are unique across all splits.
    pub fn splits_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.iter().all(|(_, s)| seen.insert(s.id))
    }

    /// Every label of `task` occurs in every split.
    pub fn covers_labels(&self, task: Task) -> bool {
        Split::ALL.iter().all(|&split| {
            task.labels()
                .iter()
                .all(|l| self.split(split).iter().any(|s| s.label == *l))
        })
    }
}
