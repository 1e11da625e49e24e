//! `adham`: train, evaluate, refine and export additive deep hazard mixture
//! models from CSV survival data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "adham", version, about = "Additive deep hazard mixtures for survival data", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model per cross-validation fold.
    Train(Flags),
    /// Score fold models on their test records at event-time quantiles.
    Evaluate(Flags),
    /// Merge correlated subgroups of trained models.
    Refine(Flags),
    /// Write population, subgroup and individual interpretability tables.
    Export(Flags),
}

/// Flags shared by every subcommand. Each overrides the matching key of
/// `--config`; unset flags keep the file's value or the default.
#[derive(Args, Default)]
struct Flags {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row
    #[arg(long)]
    data: Option<String>,
    /// Name of the time column
    #[arg(long)]
    time: Option<String>,
    /// Name of the event column (values 0 or 1)
    #[arg(long)]
    event: Option<String>,
    /// Output directory [default: adham-out]
    #[arg(long)]
    out: Option<String>,
    /// Model file, or a directory of fold*/model.json
    #[arg(long)]
    model: Option<String>,
    /// Number of cross-validation folds [default: 5]
    #[arg(long)]
    folds: Option<String>,
    /// Comma-separated folds to train [default: all]
    #[arg(long = "only-folds")]
    only_folds: Option<String>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// Number of latent subgroups C [default: 100]
    #[arg(long = "c", visible_alias = "subgroups")]
    subgroups: Option<String>,
    /// Hidden width of every network [default: 100]
    #[arg(long)]
    hidden: Option<String>,
    /// Hidden layers per network [default: 3]
    #[arg(long)]
    depth: Option<String>,
    /// Layer normalisation after hidden layers [default: true]
    #[arg(long = "layer-norm")]
    layer_norm: Option<String>,
    /// Learnable constant added to hazard outputs [default: false]
    #[arg(long = "add-const")]
    add_const: Option<String>,
    /// Mini-batch size L [default: 512]
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    /// Monte Carlo time samples per record M [default: 64]
    #[arg(long = "importance-samples")]
    importance_samples: Option<String>,
    /// Adam learning rate [default: 0.001]
    #[arg(long = "learning-rate", visible_alias = "lr")]
    learning_rate: Option<String>,
    /// Maximum epochs [default: 4000]
    #[arg(long)]
    epochs: Option<String>,
    /// Dropout rate of the assignment network [default: 0]
    #[arg(long)]
    dropout: Option<String>,
    /// Orthogonality regulariser weight [default: 1]
    #[arg(long = "w-orth")]
    w_orth: Option<String>,
    /// Entropy regulariser weight [default: 1]
    #[arg(long = "w-ent")]
    w_ent: Option<String>,
    /// Early-stopping patience in epochs, or "none" [default: 100]
    #[arg(long)]
    patience: Option<String>,
    /// Optimise all parameters jointly instead of in two phases [default: false]
    #[arg(long)]
    joint: Option<String>,
    /// Comma-separated event-time quantiles [default: 0.25,0.5,0.75]
    #[arg(long)]
    quantiles: Option<String>,
    /// Monte Carlo samples per survival curve segment [default: 64]
    #[arg(long = "prediction-samples")]
    prediction_samples: Option<String>,
    /// Comma-separated refinement thresholds in (0, 1] [default: 0.8]
    #[arg(long)]
    h: Option<String>,
    /// Time grid points for exports [default: 50]
    #[arg(long = "time-points")]
    time_points: Option<String>,
    /// Largest exported time [default: training horizon]
    #[arg(long = "time-max")]
    time_max: Option<String>,
    /// Covariate sweep points for population curves [default: 5]
    #[arg(long = "sweep-values")]
    sweep_values: Option<String>,
    /// Lowest standardized sweep value [default: -2]
    #[arg(long = "sweep-min", allow_hyphen_values = true)]
    sweep_min: Option<String>,
    /// Highest standardized sweep value [default: 2]
    #[arg(long = "sweep-max", allow_hyphen_values = true)]
    sweep_max: Option<String>,
    /// Comma-separated 0-based data rows to explain
    #[arg(long)]
    patients: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("data", &self.data),
            ("time", &self.time),
            ("event", &self.event),
            ("out", &self.out),
            ("model", &self.model),
            ("folds", &self.folds),
            ("only_folds", &self.only_folds),
            ("seed", &self.seed),
            ("subgroups", &self.subgroups),
            ("hidden", &self.hidden),
            ("depth", &self.depth),
            ("layer_norm", &self.layer_norm),
            ("add_const", &self.add_const),
            ("batch_size", &self.batch_size),
            ("importance_samples", &self.importance_samples),
            ("learning_rate", &self.learning_rate),
            ("epochs", &self.epochs),
            ("dropout", &self.dropout),
            ("w_orth", &self.w_orth),
            ("w_ent", &self.w_ent),
            ("patience", &self.patience),
            ("joint", &self.joint),
            ("quantiles", &self.quantiles),
            ("prediction_samples", &self.prediction_samples),
            ("h", &self.h),
            ("time_points", &self.time_points),
            ("time_max", &self.time_max),
            ("sweep_values", &self.sweep_values),
            ("sweep_min", &self.sweep_min),
            ("sweep_max", &self.sweep_max),
            ("patients", &self.patients),
        ]
    }

    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(f) => commands::train::run(&f.resolve()?),
        Command::Evaluate(f) => commands::evaluate::run(&f.resolve()?),
        Command::Refine(f) => commands::refine::run(&f.resolve()?),
        Command::Export(f) => commands::export::run(&f.resolve()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
