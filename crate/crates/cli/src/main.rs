//! `cse`: synthetic corpora, member training, stacking and reports.

mod config;
mod error;
mod plot;
mod stage;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::{EXIT_OK, EXIT_USER};
use stages::Ctx;

#[derive(Debug, Parser)]
#[command(name = "cse", version, about = "Crossing-intent stacking ensemble pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic annotation corpus and split file.
    Synth,
    /// Validate and summarize a corpus.
    Ingest,
    /// Cut segments and cache model features.
    Featurize,
    /// Train every member on every fold.
    Train,
    /// Assemble out-of-fold scores and train the stacking head.
    Stack,
    /// Score the test set.
    Eval,
    /// Parameter and FLOP counts for the configured models.
    Profile,
    /// Pairwise member sensitivity on the test set.
    Analyze,
    /// Confusion heatmap, ROC curves and attribute histograms.
    Report,
    /// Run every stage in order.
    Pipeline,
}

#[derive(Debug, Args)]
struct Opts {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated subset of m1,m2,m3.
    #[arg(long, global = true)]
    members: Option<String>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Window stride in frames.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Output root (default: $CSE_OUT, then ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format: csv or tsv.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Fold protocol: stratified or balanced.
    #[arg(long, global = true)]
    protocol: Option<String>,
    /// Annotation corpus (default: <out>/synth/corpus.jsonl).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Split file (default: <out>/synth/split.json).
    #[arg(long, global = true)]
    split: Option<PathBuf>,
    /// Member training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Synthetic clip count.
    #[arg(long, global = true)]
    clips: Option<usize>,
    /// Score the test set with fold-model averages instead of pool refits.
    #[arg(long, global = true)]
    fold_average: Option<bool>,
    /// Rerun stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
}

impl Opts {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            members: self.members.clone(),
            folds: self.folds,
            stride: self.stride,
            out: self.out.clone(),
            format: self.format.clone(),
            protocol: self.protocol.clone(),
            corpus: self.corpus.clone(),
            split: self.split.clone(),
            epochs: self.epochs,
            clips: self.clips,
            fold_average: self.fold_average,
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth => "synth",
        Command::Ingest => "ingest",
        Command::Featurize => "featurize",
        Command::Train => "train",
        Command::Stack => "stack",
        Command::Eval => "eval",
        Command::Profile => "profile",
        Command::Analyze => "analyze",
        Command::Report => "report",
        Command::Pipeline => "pipeline",
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.opts.config.as_deref(), &cli.opts.overrides())?;
    let ctx = Ctx::new(cfg, cli.opts.force);
    match cli.command {
        Command::Synth => stages::synth(&ctx),
        Command::Ingest => stages::ingest(&ctx),
        Command::Featurize => stages::featurize(&ctx),
        Command::Train => stages::train(&ctx),
        Command::Stack => stages::stack(&ctx),
        Command::Eval => stages::eval(&ctx),
        Command::Profile => stages::profile(&ctx),
        Command::Analyze => stages::analyze(&ctx),
        Command::Report => stages::report(&ctx),
        Command::Pipeline => stages::pipeline(&ctx),
    }
}

fn emit(rec: &error::ErrorRecord) {
    eprintln!("{}", serde_json::to_string(rec).unwrap_or_else(|_| format!("{rec:?}")));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK);
        }
        Err(e) => {
            emit(&error::ErrorRecord {
                status: "error",
                code: EXIT_USER,
                kind: "user_error",
                command: String::new(),
                message: e.kind().to_string(),
                causes: vec![e.to_string().trim().to_string()],
            });
            return ExitCode::from(EXIT_USER);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            let rec = error::record(command_name(&cli.command), &e);
            emit(&rec);
            ExitCode::from(rec.code)
        }
    }
}
