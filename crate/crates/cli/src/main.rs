mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use syllogism_circuits::datasets::Intervention;
use syllogism_circuits::HeadId;

use commands::Session;
use config::{usage, ExperimentConfig, UsageError};

#[derive(Debug, Parser)]
#[command(name = "syllo", version, about = "Circuit experiments on syllogistic completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a symbolic dataset and write it as JSON lines.
    Generate(Overrides),
    /// Completion accuracy and logit difference.
    Run(Overrides),
    /// Activation-patching sweeps over the residual stream and heads.
    Sweep(Overrides),
    /// Path patching into one receiver head.
    PathPatch(Overrides),
    /// OV lens over the letter alphabet.
    Lens(Overrides),
    /// Necessity and sufficiency curves for a circuit.
    Ablate(Overrides),
    /// Mover-head classification from value patching.
    Movers(Overrides),
    /// Logit degradation under subject-term corruption.
    SubjectBias(Overrides),
    /// Index the reports in the output directory.
    Report(Overrides),
}

/// Flags override the matching config keys.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML experiment config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// GPT-2 safetensors checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(short, long)]
    n: Option<usize>,
    /// JSON-lines dataset written by `generate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// middle_term, all_term or subject_term.
    #[arg(long)]
    intervention: Option<String>,
    #[arg(long)]
    circuit: Option<PathBuf>,
    #[arg(long)]
    receiver: Option<HeadId>,
    #[arg(long)]
    sender: Option<HeadId>,
    /// Comma-separated heads, e.g. `11.10,19.1`.
    #[arg(long)]
    heads: Option<String>,
    /// Write PPM heatmaps next to score grids.
    #[arg(long)]
    heatmap: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(c) = &self.checkpoint {
            cfg.model.checkpoint = Some(c.clone());
        }
        if let Some(s) = &self.scheme {
            cfg.dataset.scheme = s.clone();
        }
        if let Some(n) = self.n {
            cfg.dataset.n = n;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset.file = Some(d.clone());
        }
        if let Some(i) = &self.intervention {
            cfg.dataset.intervention = i.parse::<Intervention>().map_err(|e| usage(e.to_string()))?;
        }
        if let Some(c) = &self.circuit {
            cfg.circuit = Some(c.clone());
        }
        if self.receiver.is_some() {
            cfg.path.receiver = self.receiver;
        }
        if self.sender.is_some() {
            cfg.path.sender = self.sender;
        }
        if let Some(list) = &self.heads {
            let heads = commands::parse_heads(list)?;
            cfg.lens.heads = heads.clone();
            cfg.sweep.heads = heads;
        }
        if self.heatmap {
            cfg.sweep.heatmap = true;
        }
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> Result<()> {
    let (overrides, verb): (&Overrides, fn(&Session) -> Result<()>) = match &command {
        Command::Generate(o) => (o, commands::generate),
        Command::Run(o) => (o, commands::run),
        Command::Sweep(o) => (o, commands::sweep),
        Command::PathPatch(o) => (o, commands::path_patching),
        Command::Lens(o) => (o, commands::lens),
        Command::Ablate(o) => (o, commands::ablate),
        Command::Movers(o) => (o, commands::movers),
        Command::SubjectBias(o) => (o, commands::subject_bias),
        Command::Report(o) => (o, commands::report),
    };
    let ctx = Session::new(overrides.resolve()?)?;
    verb(&ctx)
}

/// 1 usage, 2 data, 3 model.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<syllogism_circuits::Error>() {
            return if e.is_model_error() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
