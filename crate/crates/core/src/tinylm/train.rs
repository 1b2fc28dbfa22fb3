use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{quantize, Model, ModelConfig};
use crate::corpus::{Label, LabeledSentence, SplitCorpus, Task, Vocabulary};
use crate::error::{Error, Result};
use crate::par::Parallelism;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Tasks whose heads are trained; sentences of other tasks are ignored.
    pub tasks: Vec<Task>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 0,
            tasks: Task::ALL.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks to train".into()));
        }
        Ok(())
    }
}

/// An encoded, labeled model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub label: Label,
}

impl Example {
    pub fn encode(sentence: &LabeledSentence, vocab: &Vocabulary, max_seq: usize) -> Example {
        Example {
            id: sentence.id,
            tokens: vocab.encode(&sentence.text, sentence.label.task(), max_seq),
            label: sentence.label,
        }
    }

    pub fn encode_all(sentences: &[LabeledSentence], vocab: &Vocabulary, max_seq: usize) -> Vec<Example> {
        sentences
            .iter()
            .map(|s| Example::encode(s, vocab, max_seq))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Fraction of training examples classified correctly during each epoch
    /// (measured before each batch's update).
    pub epoch_accuracy: Vec<f64>,
}

impl Model {
    /// Mean loss and mean gradient over `batch`.
    ///
    /// Per-example gradients are summed in batch order, so the result is
    /// bitwise identical for every [`Parallelism`] mode.
    pub fn loss_and_gradient(&self, batch: &[Example], par: Parallelism) -> Result<(f64, Vec<f64>, usize)> {
        for ex in batch {
            self.check_example(ex)?;
        }
        let per_example = par.map(batch, |ex| {
            let cache = self.run_compiled(&ex.tokens, None);
            let mut g = vec![0.0; self.num_params()];
            let loss = self.backward(&cache, ex.label, &mut g);
            let logits = &cache.logits[ex.label.task().index()];
            let correct = super::forward::argmax(logits) == ex.label.index();
            (loss, g, correct)
        });
        let mut grad = vec![0.0; self.num_params()];
        let (mut loss, mut correct) = (0.0, 0);
        for (l, g, c) in per_example {
            loss += l;
            correct += c as usize;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad, correct))
    }

    /// Mean loss over `batch` without gradients.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let logits = self.logits(&ex.tokens, ex.label.task(), None)?;
            let mut p = logits;
            super::linalg::softmax_in_place(&mut p);
            total -= p[ex.label.index()].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Moves one parameter by `delta` without quantization. Used by
    /// finite-difference checks.
    pub fn perturb(&mut self, index: usize, delta: f64) {
        self.params[index] += delta;
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.tokens.is_empty() || ex.tokens.len() > self.config.max_seq {
            return Err(Error::InvalidInput(format!("example {} has bad length", ex.id)));
        }
        if ex.tokens.iter().any(|&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("example {} outside vocabulary", ex.id)));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            *p = quantize(*p - step);
        }
    }
}

/// Trains a freshly initialized model on the train split of `corpus`.
///
/// Mini-batch Adam on the cross-entropy of each sentence's task head.
/// Deterministic for a fixed `(model_config.seed, train_config.seed)`.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    corpus: &SplitCorpus,
    vocab: &Vocabulary,
) -> Result<(Model, TrainHistory)> {
    train_with(model_config, train_config, corpus, vocab, Parallelism::default())
}

pub fn train_with(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    corpus: &SplitCorpus,
    vocab: &Vocabulary,
    par: Parallelism,
) -> Result<(Model, TrainHistory)> {
    train_config.validate()?;
    if model_config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "vocab_size {} does not match vocabulary of {} tokens",
            model_config.vocab_size,
            vocab.len()
        )));
    }
    for &task in &train_config.tasks {
        if !corpus.train.iter().any(|s| s.label.task() == task) {
            return Err(Error::InvalidInput(format!("train split has no {task} sentences")));
        }
    }
    let sentences: Vec<LabeledSentence> = corpus
        .train
        .iter()
        .filter(|s| train_config.tasks.contains(&s.label.task()))
        .cloned()
        .collect();
    let examples = Example::encode_all(&sentences, vocab, model_config.max_seq);
    train_examples(model_config, train_config, &examples, par)
}

pub fn train_examples(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    examples: &[Example],
    par: Parallelism,
) -> Result<(Model, TrainHistory)> {
    train_config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = Model::init(model_config.clone())?;
    let mut adam = Adam::new(model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = TrainHistory::default();
    let mut batch = Vec::with_capacity(train_config.batch_size);
    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(train_config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (loss, grad, ok) = model.loss_and_gradient(&batch, par)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            correct += ok;
            adam.update(model.params_mut(), &grad, train_config.learning_rate);
        }
        let n = examples.len() as f64;
        history.epoch_loss.push(loss_sum / n);
        history.epoch_accuracy.push(correct as f64 / n);
    }
    Ok((model, history))
}
