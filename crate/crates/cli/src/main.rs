mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mczsl_core::protocols::Protocol;

use config::{CliError, RunConfig};

/// Continual zero-shot learning with meta-learned attribute embeddings.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
#[derive(Parser)]
#[command(name = "mczsl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset container.
    Synth(SynthArgs),
    /// Train through a protocol's task stream and score after every task.
    Train(Box<TrainArgs>),
    /// Re-score a finished run from its checkpoints; prints metrics JSON.
    Eval(EvalArgs),
    /// Print a run's per-task metrics as CSV.
    Report(ReportArgs),
}

#[derive(Args, Default)]
struct SynthFlags {
    #[arg(long, value_name = "N")]
    seen: Option<String>,
    #[arg(long, value_name = "N")]
    unseen: Option<String>,
    #[arg(long, value_name = "D")]
    feat_dim: Option<String>,
    #[arg(long, value_name = "Z")]
    attr_dim: Option<String>,
    #[arg(long, value_name = "SIGMA")]
    noise: Option<String>,
    #[arg(long, value_name = "N")]
    per_class: Option<String>,
    #[arg(long, value_name = "SEED")]
    synth_seed: Option<String>,
}

impl SynthFlags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        [
            ("synth.seen", &self.seen),
            ("synth.unseen", &self.unseen),
            ("synth.feat_dim", &self.feat_dim),
            ("synth.attr_dim", &self.attr_dim),
            ("synth.noise", &self.noise),
            ("synth.per_class", &self.per_class),
            ("synth.seed", &self.synth_seed),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output container path.
    output: PathBuf,
    #[command(flatten)]
    spec: SynthFlags,
}

#[derive(Args)]
struct TrainArgs {
    /// key = value config file; flags given here take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset container (.czsf). Registry datasets are recognized by file name, e.g. AWA2.czsf.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Train on generated data.
    #[arg(long)]
    synth: bool,
    #[command(flatten)]
    synth_spec: SynthFlags,
    /// gzsl, fixed or dynamic.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// no-meta, no-gate, no-norm, plain-cn or no-replay; repeatable.
    #[arg(long, value_name = "VARIANT")]
    ablate: Vec<String>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for run directories when --out is not given.
    #[arg(long, env = "MCZSL_OUT", default_value = "runs")]
    out_root: PathBuf,
    /// Overwrite a finished run in the same directory.
    #[arg(long)]
    force: bool,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Some(d) = &self.dataset {
            pairs.push(("dataset".into(), d.display().to_string()));
            pairs.push(("synth".into(), "false".into()));
        }
        if self.synth {
            pairs.push(("synth".into(), "true".into()));
            pairs.push(("dataset".into(), "none".into()));
        }
        pairs.extend(self.synth_spec.overrides().into_iter().map(|(k, v)| (k.to_string(), v)));
        for (k, v) in [
            ("protocol", &self.protocol),
            ("tasks", &self.tasks),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
        ] {
            if let Some(v) = v {
                pairs.push((k.into(), v.clone()));
            }
        }
        if !self.ablate.is_empty() {
            pairs.push(("ablate".into(), self.ablate.join(",")));
        }
        if let Some(o) = &self.out {
            pairs.push(("out".into(), o.display().to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            pairs.push((k.trim().into(), v.into()));
        }
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    run_dir: PathBuf,
    /// Score against this container instead of the one recorded in the run.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Must match the protocol the run was trained under.
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    run_dir: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let mut cfg = RunConfig::default();
            for (k, v) in args.spec.overrides() {
                cfg.set(k, &v)?;
            }
            commands::synth(&cfg, &args.output)
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            if args.dry_run {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            let run_dir = match &cfg.out {
                Some(dir) => dir.clone(),
                None => {
                    let name = match &cfg.dataset {
                        Some(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                        None => "synth".into(),
                    };
                    commands::default_run_dir(&cfg, &name, &args.out_root)
                }
            };
            commands::train(&cfg, &run_dir, args.force)?;
            println!("{}", run_dir.display());
            Ok(())
        }
        Command::Eval(args) => {
            let protocol = args
                .protocol
                .as_deref()
                .map(|p| p.parse::<Protocol>().map_err(|e| CliError::Config(e.to_string())))
                .transpose()?;
            let metrics = commands::eval(&args.run_dir, args.dataset.as_deref(), protocol)?;
            println!("{}", metrics.to_json()?);
            Ok(())
        }
        Command::Report(args) => {
            print!("{}", commands::report(&args.run_dir)?);
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => 2,
                CliError::Data(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<mczsl_core::Error>() {
            return match e {
                e if e.is_numeric() => 4,
                mczsl_core::Error::InvalidArgument(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
