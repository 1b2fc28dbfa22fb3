use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, LabeledSentence, Split, SplitCorpus, Task};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    text: std::borrow::Cow<'a, str>,
    task: std::borrow::Cow<'a, str>,
    label: std::borrow::Cow<'a, str>,
    split: std::borrow::Cow<'a, str>,
}

/// Reads a `{text, task, label, split}` JSONL corpus.
///
/// Sentence ids are the 0-based record index. Blank lines are skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<SplitCorpus> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path)?;
    let mut corpus = SplitCorpus {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        seed: 0,
    };
    let mut id = 0u64;
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let task = Task::from_name(&rec.task).map_err(|e| malformed(e.to_string()))?;
        let label = Label::from_name(&rec.label)?;
        if label.task() != task {
            return Err(malformed(format!(
                "label {label} does not belong to task {task}"
            )));
        }
        let split = Split::from_name(&rec.split)
            .ok_or_else(|| malformed(format!("unknown split {:?}", rec.split)))?;
        if rec.text.trim().is_empty() {
            return Err(malformed("empty text".into()));
        }
        let s = LabeledSentence {
            id,
            text: rec.text.into_owned(),
            label,
        };
        id += 1;
        match split {
            Split::Train => corpus.train.push(s),
            Split::Dev => corpus.dev.push(s),
            Split::Test => corpus.test.push(s),
        }
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

/// Writes the corpus as JSONL ordered by sentence id, so that generated
/// corpora with contiguous ids reload with the same ids.
pub fn write_jsonl(path: impl AsRef<Path>, corpus: &SplitCorpus) -> Result<()> {
    let mut rows: Vec<(Split, &LabeledSentence)> = corpus.iter().collect();
    rows.sort_by_key(|(_, s)| s.id);
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (split, s) in rows {
        let rec = Record {
            text: s.text.as_str().into(),
            task: s.label.task().name().into(),
            label: s.label.name().into(),
            split: split.name().into(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
