//! Neuron recognition: per-label activation probabilities, entropy-based
//! selectivity, lowest-entropy selection and layer-wise distribution.

use std::cmp::Ordering;
use std::fmt;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Label, Task};
use crate::error::{Error, Result};
use crate::trace::AggregateStats;

/// One FFN hidden unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.layer, self.index)
    }
}

/// Selectivity of one neuron over a task's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronScore {
    pub id: NeuronId,
    /// Raw activation probability per label, in task label order.
    pub p: Vec<f64>,
    /// Entropy in nats of the renormalized probabilities; `None` when the
    /// neuron never activates.
    pub entropy: Option<f64>,
    pub assigned: Label,
}

impl NeuronScore {
    fn max_p(&self) -> f64 {
        self.p.iter().copied().fold(0.0, f64::max)
    }
}

/// Raw activation probability `P[label] = f[label] / T[label]` for every
/// neuron, indexed `[flat neuron][label]`.
pub fn activation_probabilities(stats: &AggregateStats) -> Result<Vec<Vec<f64>>> {
    let labels = stats.task().labels();
    for &l in labels {
        if stats.token_total(l) == 0 {
            return Err(Error::EmptyLabel(l.to_string()));
        }
    }
    Ok((0..stats.total_neurons())
        .map(|flat| {
            let id = stats.neuron_id(flat);
            labels
                .iter()
                .map(|&l| stats.activation_count(l, id) as f64 / stats.token_total(l) as f64)
                .collect()
        })
        .collect())
}

/// Entropy (nats) of `raw` after renormalizing it to sum to one, with
/// `0 · ln 0 = 0`. Returns `None` when every entry is zero.
pub fn selectivity_entropy(raw: &[f64]) -> Option<f64> {
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let h = -raw
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            q * q.ln()
        })
        .sum::<f64>();
    Some(h.max(0.0))
}

fn argmax_label(task: Task, p: &[f64]) -> Label {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    task.labels()[best]
}

/// Scores every neuron of `stats`.
pub fn score_neurons(stats: &AggregateStats) -> Result<Vec<NeuronScore>> {
    let task = stats.task();
    Ok(activation_probabilities(stats)?
        .into_iter()
        .enumerate()
        .map(|(flat, p)| NeuronScore {
            id: stats.neuron_id(flat),
            entropy: selectivity_entropy(&p),
            assigned: argmax_label(task, &p),
            p,
        })
        .collect())
}

/// Number of items a fraction selects out of `n`: `ceil(fraction · n)`,
/// tolerant of rounding in fractions like `k / n`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let c = x.ceil();
    let count = if c - x > 1.0 - 1e-9 { x.floor() } else { c };
    (count as usize).min(n)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")))
    }
}

/// A selected neuron with its scores, as written to neuron-set reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedNeuron {
    pub layer: usize,
    pub index: usize,
    pub label: Label,
    pub entropy: f64,
    #[serde(serialize_with = "ser_label_map", deserialize_with = "de_label_map")]
    pub p: Vec<(Label, f64)>,
}

impl SelectedNeuron {
    pub fn id(&self) -> NeuronId {
        NeuronId {
            layer: self.layer,
            index: self.index,
        }
    }
}

fn ser_label_map<S: Serializer>(p: &[(Label, f64)], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut m = s.serialize_map(Some(p.len()))?;
    for (l, v) in p {
        m.serialize_entry(l.name(), v)?;
    }
    m.end()
}

fn de_label_map<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<(Label, f64)>, D::Error> {
    let map = std::collections::BTreeMap::<Label, f64>::deserialize(d)?;
    Ok(map.into_iter().collect())
}

/// The lowest-entropy neurons of a task, each assigned to one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSet {
    pub task: Task,
    pub fraction: f64,
    /// In selection order (ascending entropy).
    pub neurons: Vec<SelectedNeuron>,
}

impl NeuronSet {
    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn ids(&self) -> Vec<NeuronId> {
        self.neurons.iter().map(SelectedNeuron::id).collect()
    }

    /// Neurons assigned to `label`, in selection order.
    pub fn for_label(&self, label: Label) -> Vec<NeuronId> {
        self.neurons
            .iter()
            .filter(|n| n.label == label)
            .map(SelectedNeuron::id)
            .collect()
    }
}

/// Entropies within 1e-9 nats compare equal, so rounding noise from the
/// renormalization cannot reorder neurons with mathematically equal entropy.
fn entropy_key(h: f64) -> i64 {
    (h * 1e9).round() as i64
}

fn rank(a: &NeuronScore, b: &NeuronScore) -> Ordering {
    entropy_key(a.entropy.unwrap())
        .cmp(&entropy_key(b.entropy.unwrap()))
        .then_with(|| b.max_p().total_cmp(&a.max_p()))
        .then_with(|| a.id.cmp(&b.id))
}

/// Selects `ceil(fraction · total neurons)` lowest-entropy neurons (never
/// active neurons excluded) and assigns each to its argmax-probability label.
pub fn select_neurons(scores: &[NeuronScore], task: Task, fraction: f64) -> Result<NeuronSet> {
    check_fraction(fraction)?;
    let mut scorable: Vec<&NeuronScore> = scores.iter().filter(|s| s.entropy.is_some()).collect();
    if scorable.is_empty() {
        return Err(Error::NothingToSelect("no neuron ever activates".into()));
    }
    scorable.sort_by(|a, b| rank(a, b));
    let take = fraction_count(fraction, scores.len()).min(scorable.len());
    let neurons = scorable[..take]
        .iter()
        .map(|s| SelectedNeuron {
            layer: s.id.layer,
            index: s.id.index,
            label: s.assigned,
            entropy: s.entropy.unwrap(),
            p: task.labels().iter().copied().zip(s.p.iter().copied()).collect(),
        })
        .collect();
    Ok(NeuronSet {
        task,
        fraction,
        neurons,
    })
}

/// Scores and selects in one step.
pub fn localize(stats: &AggregateStats, fraction: f64) -> Result<NeuronSet> {
    select_neurons(&score_neurons(stats)?, stats.task(), fraction)
}

/// Number of selected neurons per layer.
pub fn layer_distribution(set: &NeuronSet, n_layers: usize) -> Vec<usize> {
    let mut hist = vec![0; n_layers];
    for n in &set.neurons {
        hist[n.layer] += 1;
    }
    hist
}
