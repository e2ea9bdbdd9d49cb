use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

use config::{ConfigError, RunConfig};

/// Compositional set embeddings: training, set identification and
/// overlap-aware diarization on synthetic speakers.
#[derive(Debug, Parser)]
#[command(name = "compemb", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct ModelPaths {
    /// CmpEm model file.
    #[arg(long)]
    cmpem: Option<PathBuf>,
    /// CmpEmL2 model file.
    #[arg(long)]
    cmpeml2: Option<PathBuf>,
    /// SingleEm model file.
    #[arg(long)]
    single_em: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints, log and resolved config.
    Train {
        /// cmpem, cmpeml2, singleem or all.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        episodes_train: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        lr: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Set-identification report over held-out speakers.
    Eval {
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        common: Common,
    },
    /// DER report over seeded synthetic streams.
    Diarize {
        #[command(flatten)]
        models: ModelPaths,
        /// Write reference and hypothesis RTTM files.
        #[arg(long)]
        dump_rttm: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every backward rule.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        cfg.merge_file(p)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = &common.out {
        cfg.set("out", &o.display().to_string())?;
    }
    for (k, v) in extra {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    for pair in &common.overrides {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

fn model_keys(m: &ModelPaths) -> Vec<(&'static str, Option<String>)> {
    let s = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    vec![
        ("eval.cmpem", s(&m.cmpem)),
        ("eval.cmpeml2", s(&m.cmpeml2)),
        ("eval.singleem", s(&m.single_em)),
    ]
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            variant,
            episodes_train,
            lr,
            common,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("train.variant", variant),
                    ("train.episodes_train", episodes_train.map(|v| v.to_string())),
                    ("train.lr", lr.map(|v| v.to_string())),
                ],
            )?;
            commands::cmd_train(&cfg)
        }
        Command::Eval { models, common } => commands::cmd_eval(&resolve(&common, &model_keys(&models))?),
        Command::Diarize {
            models,
            dump_rttm,
            common,
        } => commands::cmd_diarize(&resolve(&common, &model_keys(&models))?, dump_rttm),
        Command::Gradcheck { common } => commands::cmd_gradcheck(&resolve(&common, &[])?),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 for usage and configuration errors,
/// 2 for runtime failures.
pub fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                1
            } else {
                2
            }
        }
    }
}
