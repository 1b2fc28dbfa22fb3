//! Masking interventions: forced zero, mean substitution, and adaptive
//! attenuation of a core neuron set with feedback-driven intensity.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::eval::label_accuracy;
use crate::localize::{fraction_count, NeuronId};
use crate::par::Parallelism;
use crate::tinylm::{Action, Directive, Example, InterventionPlan, Model};
use crate::trace::AggregateStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMethod {
    Zero,
    Mean,
    Adaptive,
}

impl MaskMethod {
    pub const ALL: [MaskMethod; 3] = [MaskMethod::Zero, MaskMethod::Mean, MaskMethod::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            MaskMethod::Zero => "zero",
            MaskMethod::Mean => "mean",
            MaskMethod::Adaptive => "adaptive",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown masking method {name:?}")))
    }
}

/// Which layers a masking plan may touch. Layers split into thirds with the
/// remainder going to the top third.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerScope {
    Bot,
    Mid,
    Top,
    All,
}

impl LayerScope {
    pub const ALL: [LayerScope; 4] = [LayerScope::Bot, LayerScope::Mid, LayerScope::Top, LayerScope::All];

    pub fn name(self) -> &'static str {
        match self {
            LayerScope::Bot => "bot",
            LayerScope::Mid => "mid",
            LayerScope::Top => "top",
            LayerScope::All => "all",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown layer scope {name:?}")))
    }

    pub fn layers(self, n_layers: usize) -> Range<usize> {
        let third = n_layers / 3;
        match self {
            LayerScope::Bot => 0..third,
            LayerScope::Mid => third..2 * third,
            LayerScope::Top => 2 * third..n_layers,
            LayerScope::All => 0..n_layers,
        }
    }

    pub fn contains(self, n_layers: usize, layer: usize) -> bool {
        self.layers(n_layers).contains(&layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub fraction: f64,
    pub alpha: f64,
    pub fraction_step: f64,
    pub alpha_step: f64,
    pub fraction_cap: f64,
    pub alpha_cap: f64,
    pub max_iterations: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            fraction: 0.10,
            alpha: 0.5,
            fraction_step: 1.5,
            alpha_step: 1.25,
            fraction_cap: 1.0,
            alpha_cap: 1.0,
            max_iterations: 10,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if !(self.fraction_step > 1.0 && self.alpha_step > 1.0) {
            return bad("fraction_step and alpha_step must exceed 1".into());
        }
        if !(self.fraction_cap > 0.0 && self.fraction_cap <= 1.0) {
            return bad(format!("fraction_cap must lie in (0, 1], got {}", self.fraction_cap));
        }
        if !(self.alpha_cap >= 0.0 && self.alpha_cap <= 1.0) {
            return bad(format!("alpha_cap must lie in [0, 1], got {}", self.alpha_cap));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}

/// Sets every listed neuron to zero.
pub fn zero_plan(neurons: &[NeuronId]) -> Result<InterventionPlan> {
    if neurons.is_empty() {
        return Err(Error::InvalidInput("zero masking needs at least one neuron".into()));
    }
    InterventionPlan::new(neurons.iter().map(|&neuron| Directive {
        neuron,
        action: Action::Zero,
    }))
}

/// Replaces every listed neuron with the mean `A_all` of the non-target
/// neurons in its layer.
pub fn mean_plan(neurons: &[NeuronId], stats: &AggregateStats) -> Result<InterventionPlan> {
    if neurons.is_empty() {
        return Err(Error::InvalidInput("mean masking needs at least one neuron".into()));
    }
    let mut by_layer: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for n in neurons {
        if n.layer >= stats.n_layers() || n.index >= stats.d_ff() {
            return Err(Error::Intervention(format!("neuron {n} outside the traced model")));
        }
        by_layer.entry(n.layer).or_default().push(n.index);
    }
    let mut plan = InterventionPlan::empty();
    for (layer, mut targets) in by_layer {
        targets.sort_unstable();
        targets.dedup();
        let rest = stats.d_ff() - targets.len();
        if rest == 0 {
            return Err(Error::NoNonTargetNeurons(layer));
        }
        let sum: f64 = (0..stats.d_ff())
            .filter(|i| targets.binary_search(i).is_err())
            .map(|index| stats.mean_activation_all(NeuronId { layer, index }))
            .sum();
        let value = sum / rest as f64;
        for index in targets {
            plan.push(Directive {
                neuron: NeuronId { layer, index },
                action: Action::Substitute(value),
            })?;
        }
    }
    Ok(plan)
}

/// `D = |A[target] − A[non-target]| / A_all` for every neuron with
/// `A_all > 0`, in (layer, index) order.
pub fn activation_difference(stats: &AggregateStats, target: Label) -> Result<Vec<(NeuronId, f64)>> {
    check_task(stats, target)?;
    Ok((0..stats.total_neurons())
        .map(|flat| stats.neuron_id(flat))
        .filter_map(|id| {
            let all = stats.mean_activation_all(id);
            (all > 0.0).then(|| {
                let t = stats.mean_activation(target, id);
                let nt = stats.mean_activation_excluding(target, id);
                (id, (t - nt).abs() / all)
            })
        })
        .collect())
}

fn check_task(stats: &AggregateStats, target: Label) -> Result<()> {
    if target.task() != stats.task() {
        return Err(Error::InvalidInput(format!(
            "label {target} is not part of task {}",
            stats.task()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreNeuron {
    pub id: NeuronId,
    pub d: f64,
    /// `A[target]`.
    pub a_target: f64,
}

/// The core set `S` for one label, with per-layer peak activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSelection {
    pub target: Label,
    pub fraction: f64,
    /// Number of neurons with a defined `D`.
    pub candidates: usize,
    /// Descending `D`.
    pub neurons: Vec<CoreNeuron>,
    /// Max `A[target]` over `S` per layer; 1 where that max is 0 so scale
    /// factors stay finite.
    pub layer_max: BTreeMap<usize, f64>,
}

impl CoreSelection {
    fn from_neurons(target: Label, fraction: f64, candidates: usize, neurons: Vec<CoreNeuron>) -> Self {
        let mut layer_max: BTreeMap<usize, f64> = BTreeMap::new();
        for n in &neurons {
            let m = layer_max.entry(n.id.layer).or_insert(0.0);
            *m = m.max(n.a_target);
        }
        for m in layer_max.values_mut() {
            if *m <= 0.0 {
                *m = 1.0;
            }
        }
        CoreSelection {
            target,
            fraction,
            candidates,
            neurons,
            layer_max,
        }
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn ids(&self) -> Vec<NeuronId> {
        self.neurons.iter().map(|n| n.id).collect()
    }

    /// Keeps only neurons inside `scope`. `A_max` values are kept as is.
    pub fn restrict(&self, scope: LayerScope, n_layers: usize) -> CoreSelection {
        let mut out = self.clone();
        out.neurons.retain(|n| scope.contains(n_layers, n.id.layer));
        out.layer_max.retain(|l, _| scope.contains(n_layers, *l));
        out
    }
}

/// Takes the top `ceil(fraction · candidates)` neurons by `D`, ties going to
/// the lower (layer, index).
pub fn select_core(
    differences: &[(NeuronId, f64)],
    stats: &AggregateStats,
    target: Label,
    fraction: f64,
) -> Result<CoreSelection> {
    check_task(stats, target)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if differences.is_empty() {
        return Err(Error::NothingToSelect("no neuron has a defined activation difference".into()));
    }
    let mut ranked = differences.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let take = fraction_count(fraction, ranked.len()).max(1);
    let neurons = ranked[..take]
        .iter()
        .map(|&(id, d)| CoreNeuron {
            id,
            d,
            a_target: stats.mean_activation(target, id),
        })
        .collect();
    Ok(CoreSelection::from_neurons(target, fraction, ranked.len(), neurons))
}

/// A control selection: `size` neurons drawn uniformly from the whole model,
/// carrying the same per-neuron statistics a core selection would.
pub fn random_selection(stats: &AggregateStats, target: Label, size: usize, seed: u64) -> Result<CoreSelection> {
    check_task(stats, target)?;
    let total = stats.total_neurons();
    if size == 0 || size > total {
        return Err(Error::InvalidInput(format!(
            "cannot draw {size} neurons out of {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flats = sample(&mut rng, total, size).into_vec();
    flats.sort_unstable();
    let neurons = flats
        .into_iter()
        .map(|flat| {
            let id = stats.neuron_id(flat);
            CoreNeuron {
                id,
                d: f64::NAN,
                a_target: stats.mean_activation(target, id),
            }
        })
        .collect();
    Ok(CoreSelection::from_neurons(target, size as f64 / total as f64, total, neurons))
}

/// Attenuation factor `clamp(1 − α·A_i/A_max, 0, 1)`.
pub fn attenuation(alpha: f64, a: f64, a_max: f64) -> f64 {
    (1.0 - alpha * a / a_max).clamp(0.0, 1.0)
}

/// One Scale directive per core neuron.
pub fn adaptive_plan(selection: &CoreSelection, alpha: f64) -> Result<InterventionPlan> {
    if !(alpha >= 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    InterventionPlan::new(selection.neurons.iter().map(|n| Directive {
        neuron: n.id,
        action: Action::Scale(attenuation(alpha, n.a_target, selection.layer_max[&n.id.layer])),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub fraction: f64,
    pub alpha: f64,
    /// Unmasked dev accuracy on the target label.
    pub acc_before: f64,
    pub acc_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLog {
    pub entries: Vec<FeedbackEntry>,
    /// Whether the last plan pushed dev accuracy below the unmasked baseline.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FeedbackOutcome {
    pub plan: InterventionPlan,
    pub selection: CoreSelection,
    pub alpha: f64,
    pub log: FeedbackLog,
}

/// Strengthens adaptive masking until the target label's dev accuracy drops
/// below its unmasked value: each round that fails to degrade it enlarges
/// the core fraction and the attenuation coefficient.
pub fn feedback_optimize(
    model: &Model,
    dev: &[Example],
    target: Label,
    stats: &AggregateStats,
    config: &AdaptiveConfig,
    par: Parallelism,
) -> Result<FeedbackOutcome> {
    config.validate()?;
    let origin = label_accuracy(model, dev, target, None, par)?;
    let diffs = activation_difference(stats, target)?;
    let (mut fraction, mut alpha) = (config.fraction, config.alpha);
    let mut entries = Vec::new();
    loop {
        let selection = select_core(&diffs, stats, target, fraction)?;
        let plan = adaptive_plan(&selection, alpha)?;
        let acc = label_accuracy(model, dev, target, Some(&plan), par)?;
        entries.push(FeedbackEntry {
            fraction,
            alpha,
            acc_before: origin,
            acc_after: acc,
        });
        let converged = acc < origin;
        if converged || entries.len() >= config.max_iterations {
            return Ok(FeedbackOutcome {
                plan,
                selection,
                alpha,
                log: FeedbackLog { entries, converged },
            });
        }
        fraction = (fraction * config.fraction_step).min(config.fraction_cap);
        alpha = (alpha * config.alpha_step).min(config.alpha_cap);
    }
}
