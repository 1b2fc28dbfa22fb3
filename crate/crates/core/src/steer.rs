//! Activation injection: functional vectors that push predictions toward a
//! target label, and rhetoric feature libraries fused into emotion neurons.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Task};
use crate::error::{Error, Result};
use crate::eval::predictions;
use crate::localize::NeuronId;
use crate::par::Parallelism;
use crate::tinylm::{Action, Directive, Example, InterventionPlan, Model};
use crate::trace::AggregateStats;

pub const DEFAULT_BETA_GRID: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_OMEGA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Which neurons a functional vector is built from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerSource {
    /// The adaptive-masking core set of the target label.
    #[default]
    Core,
    /// The localized neurons assigned to the target label.
    LabelSet,
}

impl SteerSource {
    pub fn name(self) -> &'static str {
        match self {
            SteerSource::Core => "core",
            SteerSource::LabelSet => "label_set",
        }
    }
}

/// Per-neuron mean activation of the target label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalVector {
    pub target: Label,
    pub entries: Vec<(NeuronId, f64)>,
}

fn mean_entries(stats: &AggregateStats, neurons: &[NeuronId], label: Label) -> Result<Vec<(NeuronId, f64)>> {
    if label.task() != stats.task() {
        return Err(Error::InvalidInput(format!(
            "label {label} is not part of task {}",
            stats.task()
        )));
    }
    if stats.token_total(label) == 0 {
        return Err(Error::EmptyLabel(label.name().to_string()));
    }
    if neurons.is_empty() {
        return Err(Error::InvalidInput("no neurons to build from".into()));
    }
    let mut seen = BTreeSet::new();
    neurons
        .iter()
        .map(|&id| {
            if id.layer >= stats.n_layers() || id.index >= stats.d_ff() {
                return Err(Error::Intervention(format!("neuron {id} outside the traced model")));
            }
            if !seen.insert(id) {
                return Err(Error::Intervention(format!("neuron {id} listed twice")));
            }
            Ok((id, stats.mean_activation(label, id)))
        })
        .collect()
}

pub fn build_functional_vector(stats: &AggregateStats, neurons: &[NeuronId], target: Label) -> Result<FunctionalVector> {
    Ok(FunctionalVector {
        target,
        entries: mean_entries(stats, neurons, target)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerConfig {
    pub beta: f64,
}

impl Default for SteerConfig {
    fn default() -> Self {
        SteerConfig { beta: 1.0 }
    }
}

fn check_coefficient(name: &str, v: f64, max: Option<f64>) -> Result<()> {
    if v.is_finite() && v >= 0.0 && max.is_none_or(|m| v <= m) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} out of range: {v}")))
    }
}

/// Adds `β · n̄` to each neuron of the vector.
pub fn steering_plan(vector: &FunctionalVector, config: &SteerConfig) -> Result<InterventionPlan> {
    check_coefficient("beta", config.beta, None)?;
    InterventionPlan::new(vector.entries.iter().map(|&(neuron, mean)| Directive {
        neuron,
        action: Action::Add(config.beta * mean),
    }))
}

/// Fraction of `examples` predicted as `target`. None of them may carry the
/// target label.
pub fn coverage_rate(
    model: &Model,
    examples: &[Example],
    target: Label,
    plan: Option<&InterventionPlan>,
    par: Parallelism,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("coverage needs at least one sentence".into()));
    }
    if let Some(e) = examples.iter().find(|e| e.label == target || e.label.task() != target.task()) {
        return Err(Error::InvalidInput(format!(
            "example {} ({}) does not belong in the non-target subset",
            e.id, e.label
        )));
    }
    let preds = predictions(model, examples, target.task(), plan, par)?;
    Ok(preds.iter().filter(|&&p| p == target).count() as f64 / examples.len() as f64)
}

/// Rhetoric neurons with their mean activation under one rhetoric label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionLibrary {
    pub rhetoric_label: Label,
    pub entries: Vec<(NeuronId, f64)>,
    pub omega: f64,
}

pub fn build_fusion_library(
    rhetoric_stats: &AggregateStats,
    neurons: &[NeuronId],
    rhetoric_label: Label,
    omega: f64,
) -> Result<FusionLibrary> {
    if rhetoric_label.task() != Task::Rhetoric {
        return Err(Error::InvalidInput(format!("{rhetoric_label} is not a rhetoric label")));
    }
    check_coefficient("omega", omega, Some(1.0))?;
    Ok(FusionLibrary {
        rhetoric_label,
        entries: mean_entries(rhetoric_stats, neurons, rhetoric_label)?,
        omega,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionMode {
    Intersection,
    Fallback,
}

impl InjectionMode {
    pub fn name(self) -> &'static str {
        match self {
            InjectionMode::Intersection => "intersection",
            InjectionMode::Fallback => "fallback",
        }
    }
}

/// Adds `ω · ā` at library neurons that are also emotion neurons; when the
/// two sets share nothing, at every library neuron instead.
pub fn fusion_plan(library: &FusionLibrary, emotion: &[NeuronId]) -> Result<(InterventionPlan, InjectionMode)> {
    check_coefficient("omega", library.omega, Some(1.0))?;
    let emotion: BTreeSet<NeuronId> = emotion.iter().copied().collect();
    let shared: Vec<&(NeuronId, f64)> = library.entries.iter().filter(|(id, _)| emotion.contains(id)).collect();
    let (chosen, mode) = if shared.is_empty() {
        (library.entries.iter().collect(), InjectionMode::Fallback)
    } else {
        (shared, InjectionMode::Intersection)
    };
    let plan = InterventionPlan::new(chosen.into_iter().map(|&(neuron, mean)| Directive {
        neuron,
        action: Action::Add(library.omega * mean),
    }))?;
    Ok((plan, mode))
}
