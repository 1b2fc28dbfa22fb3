//! FFN activation traces and the per-neuron statistics derived from them.

mod io;

use crate::corpus::{Label, Task};
use crate::error::{Error, Result};
use crate::localize::NeuronId;
use crate::par::Parallelism;
use crate::tinylm::{Example, InterventionPlan, Model};

pub use io::{load_traces, read_traces, save_traces, write_traces, TraceFile};

/// Post-ReLU, post-intervention FFN activations of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub sample_id: u64,
    token_count: usize,
    d_ff: usize,
    /// One `[token][neuron]` row-major matrix per layer.
    layers: Vec<Vec<f32>>,
}

impl ActivationTrace {
    pub fn from_layers(sample_id: u64, token_count: usize, d_ff: usize, layers: Vec<Vec<f32>>) -> Self {
        assert!(
            layers.iter().all(|l| l.len() == token_count * d_ff),
            "layer matrix does not match {token_count} x {d_ff}"
        );
        ActivationTrace {
            sample_id,
            token_count,
            d_ff,
            layers,
        }
    }

    pub fn with_sample_id(mut self, id: u64) -> Self {
        self.sample_id = id;
        self
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, layer: usize) -> &[f32] {
        &self.layers[layer]
    }

    pub fn get(&self, layer: usize, token: usize, neuron: usize) -> f32 {
        self.layers[layer][token * self.d_ff + neuron]
    }
}

/// Token-level activation counts and sums per (label, neuron) for one task.
///
/// Neurons are addressed by the flat index `layer * d_ff + index`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    task: Task,
    n_layers: usize,
    d_ff: usize,
    /// `T[label]`: total tokens of that label's sentences.
    token_total: Vec<u64>,
    /// `f[label][neuron]`: tokens on which the neuron is active (`> 0`).
    active: Vec<Vec<u64>>,
    /// Sum of activations over all tokens of the label's sentences.
    sum: Vec<Vec<f64>>,
}

impl AggregateStats {
    /// Builds statistics directly from counts and sums. `active` and `sum`
    /// are indexed `[label][flat neuron]`.
    pub fn from_parts(
        task: Task,
        n_layers: usize,
        d_ff: usize,
        token_total: Vec<u64>,
        active: Vec<Vec<u64>>,
        sum: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = task.num_labels();
        let n = n_layers * d_ff;
        if token_total.len() != k
            || active.len() != k
            || sum.len() != k
            || active.iter().any(|a| a.len() != n)
            || sum.iter().any(|s| s.len() != n)
        {
            return Err(Error::Shape("statistics do not match task and layout".into()));
        }
        for (l, row) in active.iter().enumerate() {
            if row.iter().any(|&f| f > token_total[l]) {
                return Err(Error::InvalidInput("activation count exceeds token total".into()));
            }
        }
        Ok(AggregateStats {
            task,
            n_layers,
            d_ff,
            token_total,
            active,
            sum,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff
    }

    pub fn total_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }

    pub fn neuron_id(&self, flat: usize) -> NeuronId {
        NeuronId {
            layer: flat / self.d_ff,
            index: flat % self.d_ff,
        }
    }

    pub fn flat(&self, id: NeuronId) -> usize {
        id.layer * self.d_ff + id.index
    }

    pub fn token_total(&self, label: Label) -> u64 {
        self.token_total[self.label_index(label)]
    }

    pub fn task_token_total(&self) -> u64 {
        self.token_total.iter().sum()
    }

    pub fn activation_count(&self, label: Label, neuron: NeuronId) -> u64 {
        self.active[self.label_index(label)][self.flat(neuron)]
    }

    pub fn activation_sum(&self, label: Label, neuron: NeuronId) -> f64 {
        self.sum[self.label_index(label)][self.flat(neuron)]
    }

    /// `A[label]`: mean activation over all tokens of the label's sentences
    /// (zeros included). Zero when the label has no tokens.
    pub fn mean_activation(&self, label: Label, neuron: NeuronId) -> f64 {
        let t = self.token_total(label);
        if t == 0 {
            0.0
        } else {
            self.activation_sum(label, neuron) / t as f64
        }
    }

    /// Token-weighted mean over every label except `label`.
    pub fn mean_activation_excluding(&self, label: Label, neuron: NeuronId) -> f64 {
        let skip = self.label_index(label);
        let flat = self.flat(neuron);
        let (mut s, mut t) = (0.0, 0u64);
        for l in 0..self.token_total.len() {
            if l != skip {
                s += self.sum[l][flat];
                t += self.token_total[l];
            }
        }
        if t == 0 {
            0.0
        } else {
            s / t as f64
        }
    }

    /// `A_all`: mean activation over all tokens of all the task's sentences.
    pub fn mean_activation_all(&self, neuron: NeuronId) -> f64 {
        let flat = self.flat(neuron);
        let t = self.task_token_total();
        if t == 0 {
            return 0.0;
        }
        self.sum.iter().map(|s| s[flat]).sum::<f64>() / t as f64
    }

    fn label_index(&self, label: Label) -> usize {
        assert_eq!(label.task(), self.task, "label {label} outside task {}", self.task);
        label.index()
    }
}

/// Runs every example through `model` and keeps its FFN activations, with
/// the example id as `sample_id`. Output follows input order.
pub fn record(
    model: &Model,
    examples: &[Example],
    plan: Option<&InterventionPlan>,
    par: Parallelism,
) -> Result<Vec<(ActivationTrace, Label)>> {
    if let Some(p) = plan {
        p.validate(model.config())?;
    }
    for ex in examples {
        model.check_tokens(&ex.tokens)?;
    }
    par.map(examples, |ex| {
        let out = model.forward(&ex.tokens, plan)?;
        Ok((out.trace.with_sample_id(ex.id), ex.label))
    })
    .into_iter()
    .collect()
}

/// Aggregates labeled traces of one task into [`AggregateStats`].
///
/// Traces are reduced in `sample_id` order, so the result does not depend
/// on arrival order.
pub fn aggregate<'a, I>(traces: I) -> Result<AggregateStats>
where
    I: IntoIterator<Item = (&'a ActivationTrace, Label)>,
{
    aggregate_with(traces, Parallelism::default())
}

pub fn aggregate_with<'a, I>(traces: I, par: Parallelism) -> Result<AggregateStats>
where
    I: IntoIterator<Item = (&'a ActivationTrace, Label)>,
{
    let mut items: Vec<(&ActivationTrace, Label)> = traces.into_iter().collect();
    let (first, _) = *items
        .first()
        .ok_or_else(|| Error::InvalidInput("no traces to aggregate".into()))?;
    let task = items[0].1.task();
    let (n_layers, d_ff) = (first.n_layers(), first.d_ff());
    for (t, l) in &items {
        if t.d_ff() != d_ff || t.n_layers() != n_layers {
            return Err(Error::Shape(format!(
                "trace {} has {} layers x {} neurons, expected {n_layers} x {d_ff}",
                t.sample_id,
                t.n_layers(),
                t.d_ff()
            )));
        }
        if l.task() != task {
            return Err(Error::InvalidInput(format!(
                "trace {} is labeled {l}, outside task {task}",
                t.sample_id
            )));
        }
    }
    items.sort_by_key(|(t, _)| t.sample_id);

    let k = task.num_labels();
    let mut token_total = vec![0u64; k];
    for (t, l) in &items {
        token_total[l.index()] += t.token_count() as u64;
    }

    // Each layer is reduced independently; within a layer the traversal is
    // the fixed sample_id order.
    let per_layer = par.map_range(n_layers, |layer| {
        let mut active = vec![vec![0u64; d_ff]; k];
        let mut sum = vec![vec![0.0f64; d_ff]; k];
        for (t, l) in &items {
            let (a, s) = (&mut active[l.index()], &mut sum[l.index()]);
            for row in t.layer(layer).chunks_exact(d_ff) {
                for ((ai, si), &v) in a.iter_mut().zip(s.iter_mut()).zip(row) {
                    if v > 0.0 {
                        *ai += 1;
                    }
                    *si += v as f64;
                }
            }
        }
        (active, sum)
    });

    let mut active = vec![Vec::with_capacity(n_layers * d_ff); k];
    let mut sum = vec![Vec::with_capacity(n_layers * d_ff); k];
    for (a, s) in per_layer {
        for l in 0..k {
            active[l].extend_from_slice(&a[l]);
            sum[l].extend_from_slice(&s[l]);
        }
    }
    AggregateStats::from_parts(task, n_layers, d_ff, token_total, active, sum)
}
