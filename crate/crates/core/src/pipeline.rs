//! End-to-end experiment pipeline over a run directory.
//!
//! Every stage reads its inputs from, and writes its outputs to, a fixed
//! layout under the output directory: `corpus/`, `model/`, `traces/`,
//! `neurons/` and `reports/`. A stage can be rerun on its own as long as the
//! artifacts it names exist; a missing one is reported as
//! [`Error::MissingArtifact`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{
    generate_synthetic, load_jsonl, write_jsonl, CorpusSpec, Label, Split, SplitCorpus, Task, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy_with, delta_table, label_accuracy, layer_scope_report, write_json, DeltaReport, EmotionDelta, Fixed,
    FusionReport, LayerDistributionReport, MaskReport, SteeringReport,
};
use crate::localize::{layer_distribution, localize, NeuronId, NeuronSet};
use crate::mask::{
    adaptive_plan, feedback_optimize, mean_plan, random_selection, zero_plan, AdaptiveConfig, CoreSelection,
    LayerScope, MaskMethod,
};
use crate::par::Parallelism;
use crate::steer::{
    build_fusion_library, build_functional_vector, coverage_rate, fusion_plan, steering_plan, SteerConfig,
    SteerSource, DEFAULT_BETA_GRID, DEFAULT_OMEGA_GRID,
};
use crate::tinylm::{
    load_checkpoint, save_checkpoint, train_with, Example, InterventionPlan, Model, ModelConfig, TrainConfig,
};
use crate::trace::{aggregate_with, load_traces, record, save_traces, AggregateStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    /// Read this JSONL corpus instead of generating one.
    pub jsonl: Option<PathBuf>,
    pub per_label_count: usize,
    pub signal_strength: f64,
    pub rhetoric_correlation: f64,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        let spec = CorpusSpec::default();
        CorpusSettings {
            jsonl: None,
            per_label_count: spec.per_label_count,
            signal_strength: spec.signal_strength,
            rhetoric_correlation: spec.rhetoric_correlation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub max_seq: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = ModelConfig::default();
        ModelSettings {
            n_layers: c.n_layers,
            d_model: c.d_model,
            d_ff: c.d_ff,
            n_heads: c.n_heads,
            max_seq: c.max_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSettings {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeSettings {
    /// Share of all FFN neurons kept per task.
    pub fraction: f64,
}

impl Default for LocalizeSettings {
    fn default() -> Self {
        LocalizeSettings { fraction: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerSettings {
    pub beta_grid: Vec<f64>,
    pub source: SteerSource,
}

impl Default for SteerSettings {
    fn default() -> Self {
        SteerSettings {
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            source: SteerSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    pub omega_grid: Vec<f64>,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            omega_grid: DEFAULT_OMEGA_GRID.to_vec(),
        }
    }
}

/// Everything a pipeline run depends on. One `seed` drives corpus
/// generation, initialization, batch order and random control sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub localize: LocalizeSettings,
    pub adaptive: AdaptiveConfig,
    pub steer: SteerSettings,
    pub fusion: FusionSettings,
    /// Random equal-size control sets drawn per adaptive masking run.
    pub random_draws: usize,
    /// Restrict evaluation stages to one task.
    pub task: Option<Task>,
    /// Restrict evaluation stages to one label.
    pub label: Option<Label>,
    /// Restrict `mask-eval` to one method.
    pub method: Option<MaskMethod>,
    /// Layers the masking reports use; `all` when unset.
    pub layer_scope: Option<LayerScope>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: PathBuf::from("run"),
            corpus: CorpusSettings::default(),
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            localize: LocalizeSettings::default(),
            adaptive: AdaptiveConfig::default(),
            steer: SteerSettings::default(),
            fusion: FusionSettings::default(),
            random_draws: 5,
            task: None,
            label: None,
            method: None,
            layer_scope: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        RunConfig::from_json(&fs::read_to_string(path)?)
    }

    /// Sets the value at a dotted path such as `train.epochs`. `raw` is
    /// parsed as JSON when possible and taken as a string otherwise.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set_value(key, value)
    }

    pub fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *node = value;
        let updated: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.jsonl.is_none() {
            self.corpus_spec().validate()?;
        }
        ModelConfig {
            vocab_size: 1,
            ..self.model_config(1)
        }
        .validate()?;
        self.train_config(Task::ALL.to_vec()).validate()?;
        if !(self.localize.fraction > 0.0 && self.localize.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "localize.fraction must lie in (0, 1], got {}",
                self.localize.fraction
            )));
        }
        self.adaptive.validate()?;
        if self.steer.beta_grid.is_empty() || self.steer.beta_grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config("steer.beta_grid must be non-empty and non-negative".into()));
        }
        if self.fusion.omega_grid.is_empty() || self.fusion.omega_grid.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("fusion.omega_grid must be non-empty within [0, 1]".into()));
        }
        if self.random_draws == 0 {
            return Err(Error::Config("random_draws must be >= 1".into()));
        }
        if let (Some(t), Some(l)) = (self.task, self.label) {
            if l.task() != t {
                return Err(Error::Config(format!("label {l} is not part of task {t}")));
            }
        }
        Ok(())
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            per_label_count: self.corpus.per_label_count,
            seed: self.seed,
            signal_strength: self.corpus.signal_strength,
            rhetoric_correlation: self.corpus.rhetoric_correlation,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            d_ff: m.d_ff,
            n_heads: m.n_heads,
            vocab_size,
            max_seq: m.max_seq,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, tasks: Vec<Task>) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.seed,
            tasks,
        }
    }

    fn wants_task(&self, task: Task) -> bool {
        self.task.is_none_or(|t| t == task) && self.label.is_none_or(|l| l.task() == task)
    }

    fn wants_label(&self, label: Label) -> bool {
        self.wants_task(label.task()) && self.label.is_none_or(|l| l == label)
    }
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenCorpus,
    Train,
    Trace,
    Localize,
    MaskEval,
    SteerEval,
    FuseEval,
    ReportAll,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenCorpus,
        Stage::Train,
        Stage::Trace,
        Stage::Localize,
        Stage::MaskEval,
        Stage::SteerEval,
        Stage::FuseEval,
        Stage::ReportAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::Train => "train",
            Stage::Trace => "trace",
            Stage::Localize => "localize",
            Stage::MaskEval => "mask-eval",
            Stage::SteerEval => "steer-eval",
            Stage::FuseEval => "fuse-eval",
            Stage::ReportAll => "report-all",
        }
    }
}

/// Runs every stage in order.
pub fn run_all(config: &RunConfig, par: Parallelism) -> Result<()> {
    for stage in Stage::ALL {
        run_stage(stage, config, par)?;
    }
    Ok(())
}

pub fn run_stage(stage: Stage, config: &RunConfig, par: Parallelism) -> Result<()> {
    config.validate()?;
    let run = Run {
        dir: RunDir::new(&config.out),
        config,
        par,
    };
    match stage {
        Stage::GenCorpus => run.gen_corpus(),
        Stage::Train => run.train(),
        Stage::Trace => run.trace(),
        Stage::Localize => run.localize(),
        Stage::MaskEval => run.mask_eval(),
        Stage::SteerEval => run.steer_eval(),
        Stage::FuseEval => run.fuse_eval(),
        Stage::ReportAll => run.report_all(),
    }
}

/// Artifact paths relative to the run directory.
pub mod artifact {
    use crate::corpus::{Label, Task};

    pub const CORPUS: &str = "corpus/corpus.jsonl";
    pub const MODEL: &str = "model/model.nslm";
    pub const TRAIN_REPORT: &str = "model/train.json";
    pub const REPORT_INDEX: &str = "reports/index.json";

    pub fn traces(task: Task) -> String {
        format!("traces/{}.nstr", task.name())
    }

    pub fn neurons(task: Task) -> String {
        format!("neurons/{}.json", task.name())
    }

    pub fn core(label: Label) -> String {
        format!("neurons/core_{}.json", label.name())
    }
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn new(root: &Path) -> Self {
        RunDir { root: root.to_path_buf() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn require(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(rel.to_string()))
        }
    }

    /// Path for writing `rel`, creating its directory.
    fn output(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(p)
    }

    fn write_report<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(self.output(&format!("reports/{name}"))?, value)
    }
}

/// The adaptive core set persisted by `mask-eval` for steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreFile {
    pub alpha: f64,
    pub converged: bool,
    pub selection: CoreSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub task: Task,
    pub split: String,
    /// Percent.
    pub accuracy: Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<Fixed>,
    pub epoch_accuracy: Vec<Fixed>,
    pub accuracy: Vec<SplitAccuracy>,
}

/// Adaptive masking against random equal-size neuron sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub label: Label,
    pub core_size: usize,
    pub alpha: Fixed,
    pub acc_origin: Fixed,
    pub acc_adaptive: Fixed,
    /// Percent, one per draw.
    pub acc_random: Vec<Fixed>,
    pub acc_random_mean: Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub sha256: String,
}

struct Loaded {
    corpus: SplitCorpus,
    vocab: Vocabulary,
    model: Model,
}

impl Loaded {
    fn examples(&self, split: Split, task: Task) -> Vec<Example> {
        Example::encode_all(
            &self.corpus.task_split(split, task),
            &self.vocab,
            self.model.config().max_seq,
        )
    }
}

struct Run<'a> {
    dir: RunDir,
    config: &'a RunConfig,
    par: Parallelism,
}

fn tasks_in(corpus: &SplitCorpus) -> Vec<Task> {
    Task::ALL.into_iter().filter(|&t| corpus.has_task(t)).collect()
}

fn pct(v: f64) -> Fixed {
    Fixed(v * 100.0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Run<'_> {
    fn corpus(&self) -> Result<SplitCorpus> {
        load_jsonl(self.dir.require(artifact::CORPUS)?)
    }

    fn load(&self) -> Result<Loaded> {
        let corpus = self.corpus()?;
        let model = load_checkpoint(self.dir.require(artifact::MODEL)?)?;
        let vocab = Vocabulary::build(&corpus)?;
        if vocab.len() != model.config().vocab_size {
            return Err(Error::ConfigMismatch { kind: "checkpoint" });
        }
        Ok(Loaded { corpus, vocab, model })
    }

    fn stats(&self, task: Task, model: &Model) -> Result<AggregateStats> {
        let file = load_traces(self.dir.require(&artifact::traces(task))?)?;
        file.check(model.config())?;
        aggregate_with(file.records.iter().map(|(t, l)| (t, *l)), self.par)
    }

    fn neuron_set(&self, task: Task) -> Result<NeuronSet> {
        let text = fs::read_to_string(self.dir.require(&artifact::neurons(task))?)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn gen_corpus(&self) -> Result<()> {
        let corpus = match &self.config.corpus.jsonl {
            Some(path) => load_jsonl(path)?,
            None => generate_synthetic(&self.config.corpus_spec())?,
        };
        write_jsonl(self.dir.output(artifact::CORPUS)?, &corpus)
    }

    fn train(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let vocab = Vocabulary::build(&corpus)?;
        let tasks = tasks_in(&corpus);
        let model_config = self.config.model_config(vocab.len());
        let train_config = self.config.train_config(tasks.clone());
        let (model, history) = train_with(&model_config, &train_config, &corpus, &vocab, self.par)?;
        save_checkpoint(self.dir.output(artifact::MODEL)?, &model)?;
        let loaded = Loaded { corpus, vocab, model };
        let mut accuracy = Vec::new();
        for task in tasks {
            for split in Split::ALL {
                let ex = loaded.examples(split, task);
                if ex.is_empty() {
                    continue;
                }
                let r = accuracy_with(&loaded.model, &ex, task, None, self.par)?;
                accuracy.push(SplitAccuracy {
                    task,
                    split: split.name().to_string(),
                    accuracy: pct(r.overall()),
                });
            }
        }
        let report = TrainReport {
            epoch_loss: history.epoch_loss.iter().map(|&v| Fixed(v)).collect(),
            epoch_accuracy: history.epoch_accuracy.iter().map(|&v| pct(v)).collect(),
            accuracy,
        };
        write_json(self.dir.output(artifact::TRAIN_REPORT)?, &report)
    }

    fn trace(&self) -> Result<()> {
        let l = self.load()?;
        for task in tasks_in(&l.corpus) {
            let examples = l.examples(Split::Train, task);
            if examples.is_empty() {
                continue;
            }
            let traces = record(&l.model, &examples, None, self.par)?;
            save_traces(self.dir.output(&artifact::traces(task))?, l.model.config(), &traces)?;
        }
        Ok(())
    }

    fn localize(&self) -> Result<()> {
        let l = self.load()?;
        let n_layers = l.model.config().n_layers;
        for task in tasks_in(&l.corpus) {
            let stats = self.stats(task, &l.model)?;
            let set = localize(&stats, self.config.localize.fraction)?;
            write_json(self.dir.output(&artifact::neurons(task))?, &set)?;
            let hist = layer_distribution(&set, n_layers);
            self.dir.write_report(
                &format!("layer_distribution_{}.json", task.name()),
                &LayerDistributionReport::new(task, &hist),
            )?;
        }
        Ok(())
    }

    fn mask_eval(&self) -> Result<()> {
        let l = self.load()?;
        let cfg = self.config;
        let n_layers = l.model.config().n_layers;
        let scope = cfg.layer_scope.unwrap_or(LayerScope::All);
        let methods: Vec<MaskMethod> = MaskMethod::ALL
            .into_iter()
            .filter(|m| cfg.method.is_none_or(|c| c == *m))
            .collect();
        for task in tasks_in(&l.corpus).into_iter().filter(|&t| cfg.wants_task(t)) {
            let stats = self.stats(task, &l.model)?;
            let set = self.neuron_set(task)?;
            let dev = l.examples(Split::Dev, task);
            let test = l.examples(Split::Test, task);
            let mut deltas = Vec::new();
            for &label in task.labels().iter().filter(|&&x| cfg.wants_label(x)) {
                let origin = label_accuracy(&l.model, &test, label, None, self.par)?;
                let localized: Vec<NeuronId> = set
                    .for_label(label)
                    .into_iter()
                    .filter(|id| scope.contains(n_layers, id.layer))
                    .collect();
                for &method in &methods {
                    let (plan, log) = match method {
                        MaskMethod::Zero if localized.is_empty() => (InterventionPlan::empty(), None),
                        MaskMethod::Zero => (zero_plan(&localized)?, None),
                        MaskMethod::Mean if localized.is_empty() => (InterventionPlan::empty(), None),
                        MaskMethod::Mean => (mean_plan(&localized, &stats)?, None),
                        MaskMethod::Adaptive => {
                            let outcome = feedback_optimize(&l.model, &dev, label, &stats, &cfg.adaptive, self.par)?;
                            write_json(
                                self.dir.output(&artifact::core(label))?,
                                &CoreFile {
                                    alpha: outcome.alpha,
                                    converged: outcome.log.converged,
                                    selection: outcome.selection.clone(),
                                },
                            )?;
                            self.adaptive_extras(&l.model, &test, &stats, label, origin, &outcome.selection, outcome.alpha)?;
                            let plan = adaptive_plan(&outcome.selection.restrict(scope, n_layers), outcome.alpha)?;
                            (plan, Some(outcome.log))
                        }
                    };
                    let masked = label_accuracy(&l.model, &test, label, Some(&plan), self.par)?;
                    let delta = DeltaReport::new(method, label, origin, masked);
                    self.dir.write_report(
                        &format!("mask_{}_{}.json", method.name(), label.name()),
                        &MaskReport::new(&delta, scope, log.as_ref()),
                    )?;
                    deltas.push(delta);
                }
            }
            let table = delta_table(&deltas);
            self.dir.write_report(&format!("delta_table_{}.json", task.name()), &table)?;
            fs::write(
                self.dir.output(&format!("reports/delta_table_{}.csv", task.name()))?,
                table.to_csv()?,
            )?;
        }
        Ok(())
    }

    /// Layer-scope comparison and random control for one converged
    /// adaptive selection.
    #[allow(clippy::too_many_arguments)]
    fn adaptive_extras(
        &self,
        model: &Model,
        test: &[Example],
        stats: &AggregateStats,
        label: Label,
        origin: f64,
        selection: &CoreSelection,
        alpha: f64,
    ) -> Result<()> {
        let n_layers = model.config().n_layers;
        let mut scopes = Vec::with_capacity(4);
        for scope in LayerScope::ALL {
            let plan = adaptive_plan(&selection.restrict(scope, n_layers), alpha)?;
            scopes.push((scope, label_accuracy(model, test, label, Some(&plan), self.par)?));
        }
        self.dir.write_report(
            &format!("layer_scope_{}.json", label.name()),
            &layer_scope_report(label, &scopes)?,
        )?;
        let mut random = Vec::with_capacity(self.config.random_draws);
        for draw in 0..self.config.random_draws {
            let seed = control_seed(self.config.seed, label, draw);
            let sel = random_selection(stats, label, selection.len(), seed)?;
            random.push(label_accuracy(model, test, label, Some(&adaptive_plan(&sel, alpha)?), self.par)?);
        }
        let all = scopes.iter().find(|(s, _)| *s == LayerScope::All).map(|(_, a)| *a).unwrap_or(origin);
        self.dir.write_report(
            &format!("adaptive_control_{}.json", label.name()),
            &ControlReport {
                label,
                core_size: selection.len(),
                alpha: Fixed(alpha),
                acc_origin: pct(origin),
                acc_adaptive: pct(all),
                acc_random_mean: pct(random.iter().sum::<f64>() / random.len() as f64),
                acc_random: random.into_iter().map(pct).collect(),
            },
        )
    }

    fn steer_eval(&self) -> Result<()> {
        let l = self.load()?;
        let cfg = self.config;
        for task in tasks_in(&l.corpus).into_iter().filter(|&t| cfg.wants_task(t)) {
            let stats = self.stats(task, &l.model)?;
            let set = self.neuron_set(task)?;
            let test = l.examples(Split::Test, task);
            for &label in task.labels().iter().filter(|&&x| cfg.wants_label(x)) {
                let neurons = match cfg.steer.source {
                    SteerSource::Core => {
                        let text = fs::read_to_string(self.dir.require(&artifact::core(label))?)?;
                        serde_json::from_str::<CoreFile>(&text)?.selection.ids()
                    }
                    SteerSource::LabelSet => set.for_label(label),
                };
                let others: Vec<Example> = test.iter().filter(|e| e.label != label).cloned().collect();
                let before = coverage_rate(&l.model, &others, label, None, self.par)?;
                let after = if neurons.is_empty() {
                    vec![before; cfg.steer.beta_grid.len()]
                } else {
                    let vector = build_functional_vector(&stats, &neurons, label)?;
                    cfg.steer
                        .beta_grid
                        .iter()
                        .map(|&beta| {
                            let plan = steering_plan(&vector, &SteerConfig { beta })?;
                            coverage_rate(&l.model, &others, label, Some(&plan), self.par)
                        })
                        .collect::<Result<Vec<f64>>>()?
                };
                self.dir.write_report(
                    &format!("steering_{}.json", label.name()),
                    &SteeringReport {
                        target: label,
                        beta_grid: cfg.steer.beta_grid.iter().map(|&b| Fixed(b)).collect(),
                        coverage_before: pct(before),
                        coverage_after: after.into_iter().map(pct).collect(),
                        mode: cfg.steer.source.name().to_string(),
                    },
                )?;
            }
        }
        Ok(())
    }

    fn fuse_eval(&self) -> Result<()> {
        let l = self.load()?;
        let cfg = self.config;
        if !(l.corpus.has_task(Task::Emotion) && l.corpus.has_task(Task::Rhetoric)) {
            return Err(Error::InvalidInput("fusion needs both emotion and rhetoric sentences".into()));
        }
        let rhet_stats = self.stats(Task::Rhetoric, &l.model)?;
        let rhet_set = self.neuron_set(Task::Rhetoric)?;
        let emotion_ids = self.neuron_set(Task::Emotion)?.ids();
        let test = l.examples(Split::Test, Task::Emotion);
        let base = accuracy_with(&l.model, &test, Task::Emotion, None, self.par)?;
        let rhetoric_labels = Task::Rhetoric.labels().iter().filter(|&&r| cfg.label.is_none_or(|x| x == r));
        for &rhet in rhetoric_labels {
            let library_neurons = rhet_set.for_label(rhet);
            let mut mode = "none";
            let mut results = Vec::with_capacity(cfg.fusion.omega_grid.len());
            for &omega in &cfg.fusion.omega_grid {
                let r = if library_neurons.is_empty() {
                    base.clone()
                } else {
                    let library = build_fusion_library(&rhet_stats, &library_neurons, rhet, omega)?;
                    let (plan, m) = fusion_plan(&library, &emotion_ids)?;
                    mode = m.name();
                    accuracy_with(&l.model, &test, Task::Emotion, Some(&plan), self.par)?
                };
                results.push(r);
            }
            let per_emotion_delta = Task::Emotion
                .labels()
                .iter()
                .filter_map(|&e| {
                    let b = base.label_accuracy(e)?;
                    Some(EmotionDelta {
                        emotion: e,
                        delta: results
                            .iter()
                            .map(|r| pct(r.label_accuracy(e).unwrap_or(b) - b))
                            .collect(),
                    })
                })
                .collect();
            self.dir.write_report(
                &format!("fusion_{}.json", rhet.name()),
                &FusionReport {
                    rhetoric_label: rhet,
                    omega_grid: cfg.fusion.omega_grid.iter().map(|&w| Fixed(w)).collect(),
                    emotion_acc_before: pct(base.overall()),
                    emotion_acc_after: results.iter().map(|r| pct(r.overall())).collect(),
                    per_emotion_delta,
                    injection_mode: mode.to_string(),
                },
            )?;
        }
        Ok(())
    }

    /// Checks that every report of a full run exists and writes an index of
    /// their digests.
    fn report_all(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let tasks = tasks_in(&corpus);
        let mut expected = vec![artifact::TRAIN_REPORT.to_string()];
        for &task in &tasks {
            expected.push(format!("reports/layer_distribution_{}.json", task.name()));
            expected.push(format!("reports/delta_table_{}.json", task.name()));
            expected.push(format!("reports/delta_table_{}.csv", task.name()));
            for &label in task.labels() {
                let n = label.name();
                for m in MaskMethod::ALL {
                    expected.push(format!("reports/mask_{}_{n}.json", m.name()));
                }
                expected.push(format!("reports/layer_scope_{n}.json"));
                expected.push(format!("reports/adaptive_control_{n}.json"));
                expected.push(format!("reports/steering_{n}.json"));
            }
        }
        if tasks.len() == 2 {
            for &r in Task::Rhetoric.labels() {
                expected.push(format!("reports/fusion_{}.json", r.name()));
            }
        }
        let mut index = Vec::with_capacity(expected.len());
        for rel in expected {
            let bytes = fs::read(self.dir.require(&rel)?)?;
            index.push(IndexEntry {
                sha256: hex(&Sha256::digest(&bytes)),
                file: rel,
            });
        }
        write_json(self.dir.output(artifact::REPORT_INDEX)?, &index)
    }
}

/// Seed of one random control draw; distinct per label and draw.
pub fn control_seed(seed: u64, label: Label, draw: usize) -> u64 {
    seed.wrapping_mul(1_000_003)
        .wrapping_add(label.code() as u64 * 1_000)
        .wrapping_add(draw as u64)
}
