use std::collections::BTreeMap;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::localize::NeuronId;

/// What happens to one post-ReLU FFN activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Zero,
    Substitute(f64),
    /// Multiply by a factor in `[0, 1]`.
    Scale(f64),
    Add(f64),
}

impl Action {
    fn stage(self) -> u8 {
        match self {
            Action::Zero | Action::Substitute(_) => 0,
            Action::Scale(_) => 1,
            Action::Add(_) => 2,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Action::Zero => 0.0,
            Action::Substitute(v) => v,
            Action::Scale(f) => x * f,
            Action::Add(d) => x + d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Directive {
    pub neuron: NeuronId,
    pub action: Action,
}

/// Declarative set of per-neuron edits applied inside the FFN at every token
/// position. At most one directive exists per neuron.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterventionPlan {
    directives: BTreeMap<NeuronId, Action>,
}

impl InterventionPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(directives: impl IntoIterator<Item = Directive>) -> Result<Self> {
        let mut plan = Self::default();
        for d in directives {
            plan.push(d)?;
        }
        Ok(plan)
    }

    pub fn push(&mut self, d: Directive) -> Result<()> {
        let finite = match d.action {
            Action::Zero => true,
            Action::Substitute(v) | Action::Add(v) => v.is_finite(),
            Action::Scale(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Intervention(format!(
                        "scale factor {f} outside [0, 1] at {}",
                        d.neuron
                    )));
                }
                true
            }
        };
        if !finite {
            return Err(Error::Intervention(format!("non-finite value at {}", d.neuron)));
        }
        if self.directives.insert(d.neuron, d.action).is_some() {
            return Err(Error::Intervention(format!("duplicate directive for {}", d.neuron)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.directives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    pub fn get(&self, neuron: NeuronId) -> Option<Action> {
        self.directives.get(&neuron).copied()
    }

    /// Directives in (layer, index) order.
    pub fn directives(&self) -> impl Iterator<Item = Directive> + '_ {
        self.directives
            .iter()
            .map(|(&neuron, &action)| Directive { neuron, action })
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        for n in self.directives.keys() {
            if n.layer >= config.n_layers || n.index >= config.d_ff {
                return Err(Error::Intervention(format!(
                    "{n} out of range for {} layers x {} neurons",
                    config.n_layers, config.d_ff
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn compile(&self, n_layers: usize) -> CompiledPlan {
        let mut layers = vec![Vec::new(); n_layers];
        for (n, a) in &self.directives {
            layers[n.layer].push((n.index, *a));
        }
        for l in &mut layers {
            l.sort_by_key(|(i, a)| (a.stage(), *i));
        }
        CompiledPlan { layers }
    }
}

/// Per-layer directive lists, ordered Zero/Substitute, then Scale, then Add.
#[derive(Debug, Clone)]
pub(crate) struct CompiledPlan {
    layers: Vec<Vec<(usize, Action)>>,
}

impl CompiledPlan {
    #[inline]
    pub(crate) fn apply(&self, layer: usize, activations: &mut [f64]) {
        for &(i, action) in &self.layers[layer] {
            activations[i] = action.apply(activations[i]);
        }
    }
}
