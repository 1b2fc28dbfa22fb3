//! `nsteer`: runs the experiment pipeline stage by stage over a run directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nsteer_core::par::Parallelism;
use nsteer_core::pipeline::{run_all, run_stage, RunConfig, Stage};
use nsteer_core::Error;

#[derive(Parser)]
#[command(name = "nsteer", version, about = "Neuron localization, masking and steering pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate (or import) the corpus
    GenCorpus,
    /// Train the model on the corpus
    Train,
    /// Record FFN activations over the train split
    Trace,
    /// Select selective neurons per task
    Localize,
    /// Zero, mean and adaptive masking reports
    MaskEval,
    /// Steering coverage reports
    SteerEval,
    /// Rhetoric-to-emotion fusion reports
    FuseEval,
    /// Check that every report exists and index their digests
    ReportAll,
    /// Every stage in order
    Run,
}

/// Each flag overrides the config value of the same dotted name.
#[derive(Args)]
struct Overrides {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// emotion | rhetoric
    #[arg(long, global = true)]
    task: Option<String>,
    #[arg(long, global = true)]
    label: Option<String>,
    /// zero | mean | adaptive
    #[arg(long, global = true)]
    method: Option<String>,
    /// bot | mid | top | all
    #[arg(long, global = true)]
    layer_scope: Option<String>,
    /// Comma-separated steering coefficients
    #[arg(long, global = true)]
    beta_grid: Option<String>,
    /// Comma-separated fusion coefficients
    #[arg(long, global = true)]
    omega_grid: Option<String>,
    /// Any other config value, as KEY=VALUE with a dotted key
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run on the calling thread only
    #[arg(long, global = true)]
    sequential: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut config = match &self.config {
            Some(path) if !path.is_file() => {
                return Err(Error::Config(format!("config file {} not found", path.display())))
            }
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        let quoted = |v: &String| format!("\"{v}\"");
        let grid = |v: &String| format!("[{v}]");
        let flags = [
            ("seed", self.seed.clone()),
            ("task", self.task.as_ref().map(quoted)),
            ("label", self.label.as_ref().map(quoted)),
            ("method", self.method.as_ref().map(quoted)),
            ("layer_scope", self.layer_scope.as_ref().map(quoted)),
            ("steer.beta_grid", self.beta_grid.as_ref().map(grid)),
            ("fusion.omega_grid", self.omega_grid.as_ref().map(grid)),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config.set(key, value)?;
        }
        Ok(config)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingArtifact(_) => 2,
        Error::Config(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(3);
        }
    };
    let par = if cli.overrides.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::default()
    };
    let result = cli.overrides.resolve().and_then(|config| {
        let stage = match cli.command {
            Command::GenCorpus => Stage::GenCorpus,
            Command::Train => Stage::Train,
            Command::Trace => Stage::Trace,
            Command::Localize => Stage::Localize,
            Command::MaskEval => Stage::MaskEval,
            Command::SteerEval => Stage::SteerEval,
            Command::FuseEval => Stage::FuseEval,
            Command::ReportAll => Stage::ReportAll,
            Command::Run => return run_all(&config, par),
        };
        run_stage(stage, &config, par)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
