//! Command-line driver: corpus generation, training, evaluation and the
//! scaling, few-shot and jitter-ablation studies.

pub mod commands;
pub mod config;
pub mod studies;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Arm, EvalSplit};
use crate::config::{ExperimentConfig, OUTPUT_ROOT_ENV};

#[derive(Debug, Parser)]
#[command(name = "naq", version, about = "Narrations-as-queries experiments on a synthetic corpus")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.stage1.learning_rate=1.0`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory; takes precedence over the config and environment.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenWorld,
    /// Build NaQ samples from the train narrations.
    GenNaq {
        /// Expansion bound S.
        #[arg(long)]
        scale: Option<f64>,
        /// Use the clamped seed windows as they are.
        #[arg(long)]
        no_jitter: bool,
    },
    /// Train one or both arms and report on a held-out split.
    Train {
        #[arg(long, value_enum, default_value = "both")]
        arm: Arm,
        #[arg(long, value_enum, default_value = "val")]
        split: EvalSplit,
    },
    /// Evaluate saved checkpoints.
    Eval {
        #[arg(long, value_enum, default_value = "both")]
        arm: Arm,
        #[arg(long, value_enum, default_value = "val")]
        split: EvalSplit,
    },
    /// Evaluate every trained arm on val and test.
    Report,
    /// NaQ fraction sweep.
    Scaling,
    /// NLQ fraction sweep with all NaQ data.
    Fewshot,
    /// NaQ with and without jittering.
    AblateTrj,
    /// Print the effective configuration.
    ShowConfig,
}

/// Config file, then the output-root variable, then `--set`, then `--out`.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
        cfg.paths.output_dir = PathBuf::from(root);
    }
    let mut cfg = cfg.with_overrides(&cli.set)?;
    if let Some(out) = &cli.out {
        cfg.paths.output_dir = out.clone();
    }
    if cli.sequential {
        cfg.parallel = false;
    }
    if let Command::GenNaq { scale, no_jitter } = &cli.command {
        if let Some(s) = scale {
            cfg.trj.scale_max = *s;
        }
        if *no_jitter {
            cfg.trj.jitter = false;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenWorld => commands::gen_world(&cfg),
        Command::GenNaq { .. } => commands::gen_naq(&cfg),
        Command::Train { arm, split } => commands::train(&cfg, *arm, *split),
        Command::Eval { arm, split } => commands::eval(&cfg, *arm, *split),
        Command::Report => commands::report(&cfg),
        Command::Scaling => commands::scaling(&cfg),
        Command::Fewshot => commands::fewshot(&cfg),
        Command::AblateTrj => commands::ablate_trj(&cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// 1 for bad input or configuration, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<naq_core::Error>() {
            return if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
        }
        if cause.is::<toml::de::Error>() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_RUNTIME
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
