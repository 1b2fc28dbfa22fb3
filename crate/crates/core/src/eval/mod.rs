//! Accuracy evaluation and the machine-readable experiment reports.

mod fixed;
mod report;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Task};
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::tinylm::{argmax, Example, InterventionPlan, Model};

pub use fixed::Fixed;
pub use report::{
    delta_table, layer_scope_report, write_json, DeltaReport, DeltaTable, EmotionDelta, FeedbackRow,
    FusionReport, LayerCount, LayerDistributionReport, LayerScopeReport, MaskReport, ScopeRow,
    SteeringReport,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: Label,
    pub correct: usize,
    pub total: usize,
}

/// Exact-match accuracy over a set of examples of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: Task,
    pub correct: usize,
    pub total: usize,
    pub per_label: Vec<LabelCount>,
}

impl EvalResult {
    pub fn overall(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Recall on sentences whose true label is `label`; `None` if absent.
    pub fn label_accuracy(&self, label: Label) -> Option<f64> {
        self.per_label
            .iter()
            .find(|c| c.label == label && c.total > 0)
            .map(|c| c.correct as f64 / c.total as f64)
    }
}

/// Predicted label for every example, in input order.
pub fn predictions(
    model: &Model,
    examples: &[Example],
    task: Task,
    plan: Option<&InterventionPlan>,
    par: Parallelism,
) -> Result<Vec<Label>> {
    for ex in examples {
        model.check_tokens(&ex.tokens)?;
    }
    let compiled = match plan {
        Some(p) if !p.is_empty() => {
            p.validate(model.config())?;
            Some(p.compile(model.config().n_layers))
        }
        _ => None,
    };
    Ok(par.map(examples, |ex| {
        let cache = model.run_compiled(&ex.tokens, compiled.as_ref());
        task.labels()[argmax(&cache.logits[task.index()])]
    }))
}

pub fn accuracy(
    model: &Model,
    examples: &[Example],
    task: Task,
    plan: Option<&InterventionPlan>,
) -> Result<EvalResult> {
    accuracy_with(model, examples, task, plan, Parallelism::default())
}

pub fn accuracy_with(
    model: &Model,
    examples: &[Example],
    task: Task,
    plan: Option<&InterventionPlan>,
    par: Parallelism,
) -> Result<EvalResult> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
    }
    if let Some(ex) = examples.iter().find(|e| e.label.task() != task) {
        return Err(Error::InvalidInput(format!(
            "example {} is labeled {}, outside task {task}",
            ex.id, ex.label
        )));
    }
    let preds = predictions(model, examples, task, plan, par)?;
    Ok(tally(task, examples.iter().map(|e| e.label).zip(preds)))
}

pub(crate) fn tally(task: Task, pairs: impl Iterator<Item = (Label, Label)>) -> EvalResult {
    let mut per_label: Vec<LabelCount> = task
        .labels()
        .iter()
        .map(|&label| LabelCount {
            label,
            correct: 0,
            total: 0,
        })
        .collect();
    for (truth, pred) in pairs {
        let c = &mut per_label[truth.index()];
        c.total += 1;
        c.correct += (truth == pred) as usize;
    }
    EvalResult {
        task,
        correct: per_label.iter().map(|c| c.correct).sum(),
        total: per_label.iter().map(|c| c.total).sum(),
        per_label,
    }
}

/// Accuracy on the examples whose true label is `label`.
pub fn label_accuracy(
    model: &Model,
    examples: &[Example],
    label: Label,
    plan: Option<&InterventionPlan>,
    par: Parallelism,
) -> Result<f64> {
    let subset: Vec<Example> = examples.iter().filter(|e| e.label == label).cloned().collect();
    if subset.is_empty() {
        return Err(Error::InvalidInput(format!("no examples labeled {label}")));
    }
    let preds = predictions(model, &subset, label.task(), plan, par)?;
    Ok(preds.iter().filter(|&&p| p == label).count() as f64 / subset.len() as f64)
}
