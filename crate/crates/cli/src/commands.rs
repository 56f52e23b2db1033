use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mczsl_core::continual::write_reservoir;
use mczsl_core::data::{lookup, read_container, synth_dataset, write_container, DatasetContainer, DatasetMeta};
use mczsl_core::model::{read_checkpoint, write_checkpoint};
use mczsl_core::pipeline::{describe, evaluate_run, initial_params, prepare, run_protocol, PreparedRun};
use mczsl_core::protocols::{MetricsRecord, Protocol, METRICS_SCHEMA};
use mczsl_core::Rng;

use crate::config::{CliError, RunConfig};

const DEFAULT_TASKS: usize = 5;
const DEFAULT_BUDGET_PER_CLASS: usize = 25;

pub const CONFIG_FILE: &str = "config.txt";
pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const LOG_FILE: &str = "train.log";

pub fn checkpoint_path(run_dir: &Path, task: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("task_{task}.mczp"))
}

pub fn reservoir_path(run_dir: &Path, task: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("task_{task}.mczr"))
}

pub struct Loaded {
    pub name: String,
    pub meta: DatasetMeta,
    pub data: DatasetContainer,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Loaded> {
    let (name, data, registry) = match (&cfg.dataset, cfg.synth) {
        (Some(_), true) => return Err(CliError::Config("set either `dataset` or `synth`, not both".into()).into()),
        (None, false) => {
            return Err(CliError::Config("no dataset: pass --dataset <file.czsf> or --synth".into()).into());
        }
        (None, true) => {
            let data = synth_dataset(&cfg.synth_spec, &mut Rng::seed_from(cfg.synth_seed))?;
            ("synth".to_string(), data, None)
        }
        (Some(path), false) => {
            let data = read_container(path).with_context(|| format!("reading {}", path.display()))?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let registry = lookup(&stem).ok();
            (stem, data, registry)
        }
    };
    let meta = match registry {
        Some(mut m) => {
            data.check_against(&m)?;
            m.tasks = cfg.tasks.unwrap_or(m.tasks);
            m.budget_per_class = cfg.budget_per_class.unwrap_or(m.budget_per_class);
            m
        }
        None => describe(
            &data,
            cfg.tasks.unwrap_or(DEFAULT_TASKS),
            cfg.budget_per_class.unwrap_or(DEFAULT_BUDGET_PER_CLASS),
        ),
    };
    Ok(Loaded { name, meta, data })
}

pub fn default_run_dir(cfg: &RunConfig, dataset: &str, out_root: &Path) -> PathBuf {
    out_root.join(format!("{dataset}-{}-seed{}", cfg.exp.protocol.as_str(), cfg.exp.seed))
}

fn provenance_header() -> String {
    format!(
        "# mczsl {} (core {}), metrics schema {METRICS_SCHEMA}\n",
        env!("CARGO_PKG_VERSION"),
        mczsl_core::VERSION
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn summary(m: &MetricsRecord) -> String {
    format!("mSA {:.2}  mUA {:.2}  mH {:.2}", m.msa, m.mua, m.mh)
}

pub fn train(cfg: &RunConfig, run_dir: &Path, force: bool) -> Result<MetricsRecord> {
    let loaded = load_dataset(cfg)?;
    let exp = cfg.experiment();
    let prepared = prepare(&exp, &loaded.meta, &loaded.data)?;

    if run_dir.join(METRICS_JSON).exists() && !force {
        return Err(CliError::Config(format!(
            "{} already holds a finished run; pass --force to overwrite it",
            run_dir.display()
        ))
        .into());
    }
    fs::create_dir_all(run_dir.join("checkpoints")).with_context(|| format!("creating {}", run_dir.display()))?;
    let mut resolved = cfg.clone();
    resolved.out = Some(run_dir.to_path_buf());
    write_text(&run_dir.join(CONFIG_FILE), &(provenance_header() + &resolved.to_text()))?;
    write_text(&run_dir.join(EXPERIMENT_FILE), &(serde_json::to_string_pretty(&exp)? + "\n"))?;

    let log_path = run_dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    writeln!(
        log,
        "dataset {} ({} samples, {} classes), {} protocol, {} tasks, replay budget {}",
        loaded.name,
        prepared.data.len(),
        prepared.data.num_classes(),
        exp.protocol.as_str(),
        prepared.plan.num_tasks(),
        mczsl_core::pipeline::replay_budget(&exp, &prepared.plan),
    )?;

    let result = run_protocol(&exp, &prepared, |o| {
        let t = o.split.task;
        write_checkpoint(o.params, checkpoint_path(run_dir, t))?;
        write_reservoir(o.memory, reservoir_path(run_dir, t))?;
        let mut line = format!(
            "task {t}: {} meta-batches/epoch, loss {:.4} -> {:.4}, memory {}/{}",
            o.stats.meta_batches_per_epoch,
            o.stats.first_epoch_loss,
            o.stats.last_epoch_loss,
            o.memory.len(),
            o.memory.capacity()
        );
        if let Some(m) = o.metrics {
            line += &format!(
                ", seen {:.2} unseen {:.2} H {:.2}",
                m.seen_acc, m.unseen_acc, m.harmonic
            );
        }
        eprintln!("{line}");
        writeln!(log, "{line}").map_err(mczsl_core::Error::from)?;
        Ok(())
    })?;

    let metrics = result.metrics;
    write_text(&run_dir.join(METRICS_JSON), &(metrics.to_json()? + "\n"))?;
    write_text(&run_dir.join(METRICS_CSV), &metrics.to_csv())?;
    writeln!(log, "{}", summary(&metrics))?;
    eprintln!("{}", summary(&metrics));
    Ok(metrics)
}

pub fn read_run_config(run_dir: &Path) -> Result<RunConfig> {
    let path = run_dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(CliError::Data(format!("{} is not a run directory (no {CONFIG_FILE})", run_dir.display())).into());
    }
    let mut cfg = RunConfig::default();
    cfg.apply_file(&path)?;
    Ok(cfg)
}

/// Re-scores a finished run from its per-task checkpoints.
pub fn eval(run_dir: &Path, dataset: Option<&Path>, protocol: Option<Protocol>) -> Result<MetricsRecord> {
    let mut cfg = read_run_config(run_dir)?;
    if let Some(p) = protocol {
        if p != cfg.exp.protocol {
            return Err(CliError::Config(format!(
                "run was trained under the {} protocol; its checkpoints cannot be scored as {}",
                cfg.exp.protocol.as_str(),
                p.as_str()
            ))
            .into());
        }
    }
    if let Some(d) = dataset {
        cfg.dataset = Some(d.to_path_buf());
        cfg.synth = false;
    }
    let loaded = load_dataset(&cfg)?;
    let exp = cfg.experiment();
    let prepared: PreparedRun = prepare(&exp, &loaded.meta, &loaded.data)?;
    let template = initial_params(&exp, &prepared.data)?;
    let mut per_task = Vec::with_capacity(prepared.plan.num_tasks());
    for split in &prepared.plan.tasks {
        let path = checkpoint_path(run_dir, split.task);
        let mut p = template.clone();
        read_checkpoint(&path, &mut p).with_context(|| format!("loading {}", path.display()))?;
        per_task.push(p);
    }
    Ok(evaluate_run(&prepared, &per_task)?)
}

pub fn read_metrics(run_dir: &Path) -> Result<MetricsRecord> {
    let path = run_dir.join(METRICS_JSON);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    MetricsRecord::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())).into())
}

pub fn report(run_dir: &Path) -> Result<String> {
    let m = read_metrics(run_dir)?;
    eprintln!("{} protocol, {}", m.protocol.as_str(), summary(&m));
    Ok(m.to_csv())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = synth_dataset(&cfg.synth_spec, &mut Rng::seed_from(cfg.synth_seed))?;
    write_container(&data, out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "wrote {}: {} samples, d={}, z={}, {} classes ({} train / {} test seen / {} test unseen)",
        out.display(),
        data.len(),
        data.feat_dim(),
        data.attr_dim(),
        data.num_classes(),
        data.train.len(),
        data.test_seen.len(),
        data.test_unseen.len()
    );
    Ok(())
}
