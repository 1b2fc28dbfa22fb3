use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The two classification tasks sharing one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Emotion,
    Rhetoric,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Emotion, Task::Rhetoric];

    pub fn labels(self) -> &'static [Label] {
        match self {
            Task::Emotion => &Label::ALL[..6],
            Task::Rhetoric => &Label::ALL[6..],
        }
    }

    pub fn num_labels(self) -> usize {
        self.labels().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Emotion => "emotion",
            Task::Rhetoric => "rhetoric",
        }
    }

    pub fn from_name(name: &str) -> Result<Task> {
        match name {
            "emotion" => Ok(Task::Emotion),
            "rhetoric" => Ok(Task::Rhetoric),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }

    /// Position of this task's head in the model.
    pub fn index(self) -> usize {
        match self {
            Task::Emotion => 0,
            Task::Rhetoric => 1,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the six emotions or four rhetorical devices.
///
/// The enum is closed: no other label can be constructed or parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Happiness,
    Sadness,
    Anger,
    Fear,
    Surprise,
    Disgust,
    Metaphor,
    Hyperbole,
    Humor,
    Sarcasm,
}

impl Label {
    pub const ALL: [Label; 10] = [
        Label::Happiness,
        Label::Sadness,
        Label::Anger,
        Label::Fear,
        Label::Surprise,
        Label::Disgust,
        Label::Metaphor,
        Label::Hyperbole,
        Label::Humor,
        Label::Sarcasm,
    ];

    pub fn task(self) -> Task {
        if self.code() < 6 {
            Task::Emotion
        } else {
            Task::Rhetoric
        }
    }

    /// Stable code across both tasks (0..10), used in binary formats.
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }

    /// Index within the label's own task (0..6 or 0..4).
    pub fn index(self) -> usize {
        match self.task() {
            Task::Emotion => self.code() as usize,
            Task::Rhetoric => self.code() as usize - 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Happiness => "happiness",
            Label::Sadness => "sadness",
            Label::Anger => "anger",
            Label::Fear => "fear",
            Label::Surprise => "surprise",
            Label::Disgust => "disgust",
            Label::Metaphor => "metaphor",
            Label::Hyperbole => "hyperbole",
            Label::Humor => "humor",
            Label::Sarcasm => "sarcasm",
        }
    }

    pub fn from_name(name: &str) -> Result<Label> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.name() == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Label::from_name(&name).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Task {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Task::from_name(&name).map_err(serde::de::Error::custom)
    }
}
