//! Flat `key = value` run configuration.
//!
//! Values are resolved as defaults, then the `--config` file, then command
//! line flags. Unknown keys are errors wherever they appear. A resolved
//! config is written to every run directory as `config.txt` and can be fed
//! back through `--config`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mczsl_core::data::SynthSpec;
use mczsl_core::model::Normalization;
use mczsl_core::pipeline::Experiment;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Documented keys, in `config.txt` order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "path to a .czsf container; `none` when training on synthetic data"),
    ("synth", "train on generated data instead of a container"),
    ("synth.seen", "generated seen classes"),
    ("synth.unseen", "generated unseen classes"),
    ("synth.feat_dim", "generated feature dimension"),
    ("synth.attr_dim", "generated attribute dimension"),
    ("synth.noise", "feature noise standard deviation"),
    ("synth.per_class", "generated samples per class"),
    ("synth.seed", "generator seed"),
    ("protocol", "gzsl, fixed or dynamic"),
    ("tasks", "task count; `auto` takes the registry value, or 5"),
    ("budget_per_class", "replay slots per class; `auto` takes the registry value, or 25"),
    ("seed", "run seed"),
    ("class_order", "canonical or shuffled"),
    ("hidden_width", "hidden width; `auto` uses the feature dimension"),
    ("logit_scale", "cosine logit multiplier"),
    ("self_gating", "attribute self-gating block"),
    ("normalization", "scn, plain_cn or none"),
    ("epochs", "epochs per task"),
    ("meta_lr", "initial meta learning rate, decayed linearly to 0"),
    ("inner_lr", "inner-loop learning rate"),
    ("inner_steps", "inner-loop steps per meta-batch"),
    ("inner_optimizer", "adam or sgd"),
    ("meta_update", "adam or plain"),
    ("n_way", "classes per episode"),
    ("k_shot", "samples per class per episode"),
    ("replay_policy", "reservoir or ring"),
    ("replay_budget", "replay slots; `auto` derives them from the protocol"),
    ("ablate", "comma-separated: no-meta, no-gate, no-norm, plain-cn, no-replay; `none` for no ablation"),
    ("out", "run directory; `auto` is $MCZSL_OUT/<dataset>-<protocol>-seed<seed>"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoMeta,
    NoGate,
    NoNorm,
    PlainCn,
    NoReplay,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoMeta => "no-meta",
            Ablation::NoGate => "no-gate",
            Ablation::NoNorm => "no-norm",
            Ablation::PlainCn => "plain-cn",
            Ablation::NoReplay => "no-replay",
        }
    }
}

impl FromStr for Ablation {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s.trim() {
            "no-meta" => Ablation::NoMeta,
            "no-gate" => Ablation::NoGate,
            "no-norm" => Ablation::NoNorm,
            "plain-cn" => Ablation::PlainCn,
            "no-replay" => Ablation::NoReplay,
            other => return Err(bad(format!("unknown ablation `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub synth: bool,
    pub synth_spec: SynthSpec,
    pub synth_seed: u64,
    pub tasks: Option<usize>,
    pub budget_per_class: Option<usize>,
    /// As configured, before ablations.
    pub exp: Experiment,
    pub ablate: Vec<Ablation>,
    pub out: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| bad(format!("{key}: cannot parse `{v}`")))
}

fn parse_auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, CliError> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(format!("{key}: expected true or false, got `{v}`"))),
    }
}

// snake_case enums go through their serde names
fn parse_enum<T: DeserializeOwned>(key: &str, v: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(v.to_string())).map_err(|_| bad(format!("{key}: unknown value `{v}`")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("enum did not serialize to a string: {other:?}"),
    }
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), ToString::to_string)
}

fn core_err(key: &str, e: mczsl_core::Error) -> CliError {
    bad(format!("{key}: {e}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let exp = &mut self.exp;
        let sched = &mut exp.train.schedule;
        match key {
            "dataset" => self.dataset = (v != "none" && !v.is_empty()).then(|| PathBuf::from(v)),
            "synth" => self.synth = parse_bool(key, v)?,
            "synth.seen" => self.synth_spec.n_seen = parse(key, v)?,
            "synth.unseen" => self.synth_spec.n_unseen = parse(key, v)?,
            "synth.feat_dim" => self.synth_spec.feat_dim = parse(key, v)?,
            "synth.attr_dim" => self.synth_spec.attr_dim = parse(key, v)?,
            "synth.noise" => self.synth_spec.noise_sigma = parse(key, v)?,
            "synth.per_class" => self.synth_spec.samples_per_class = parse(key, v)?,
            "synth.seed" => self.synth_seed = parse(key, v)?,
            "protocol" => exp.protocol = v.parse().map_err(|e| core_err(key, e))?,
            "tasks" => self.tasks = parse_auto(key, v)?,
            "budget_per_class" => self.budget_per_class = parse_auto(key, v)?,
            "seed" => exp.seed = parse(key, v)?,
            "class_order" => exp.class_order = parse_enum(key, v)?,
            "hidden_width" => exp.model.hidden_width = parse_auto(key, v)?,
            "logit_scale" => exp.model.logit_scale = parse(key, v)?,
            "self_gating" => exp.model.self_gating = parse_bool(key, v)?,
            "normalization" => exp.model.normalization = v.parse::<Normalization>().map_err(|e| core_err(key, e))?,
            "epochs" => sched.epochs = parse(key, v)?,
            "meta_lr" => sched.meta_lr = parse(key, v)?,
            "inner_lr" => sched.inner_lr = parse(key, v)?,
            "inner_steps" => sched.inner_steps = parse(key, v)?,
            "inner_optimizer" => sched.inner_optimizer = parse_enum(key, v)?,
            "meta_update" => sched.meta_update = parse_enum(key, v)?,
            "n_way" => exp.train.episode.n_way = parse(key, v)?,
            "k_shot" => exp.train.episode.k_shot = parse(key, v)?,
            "replay_policy" => exp.replay.policy = v.parse().map_err(|e| core_err(key, e))?,
            "replay_budget" => exp.replay.budget = parse_auto(key, v)?,
            "ablate" => {
                self.ablate = if v == "none" || v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(str::parse).collect::<Result<_, _>>()?
                };
            }
            "out" => self.out = (v != "auto").then(|| PathBuf::from(v)),
            other => return Err(bad(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let exp = &self.exp;
        let sched = &exp.train.schedule;
        match key {
            "dataset" => self.dataset.as_ref().map_or("none".into(), |p| p.display().to_string()),
            "synth" => self.synth.to_string(),
            "synth.seen" => self.synth_spec.n_seen.to_string(),
            "synth.unseen" => self.synth_spec.n_unseen.to_string(),
            "synth.feat_dim" => self.synth_spec.feat_dim.to_string(),
            "synth.attr_dim" => self.synth_spec.attr_dim.to_string(),
            "synth.noise" => self.synth_spec.noise_sigma.to_string(),
            "synth.per_class" => self.synth_spec.samples_per_class.to_string(),
            "synth.seed" => self.synth_seed.to_string(),
            "protocol" => exp.protocol.as_str().into(),
            "tasks" => auto(&self.tasks),
            "budget_per_class" => auto(&self.budget_per_class),
            "seed" => exp.seed.to_string(),
            "class_order" => enum_name(&exp.class_order),
            "hidden_width" => auto(&exp.model.hidden_width),
            "logit_scale" => exp.model.logit_scale.to_string(),
            "self_gating" => exp.model.self_gating.to_string(),
            "normalization" => exp.model.normalization.as_str().into(),
            "epochs" => sched.epochs.to_string(),
            "meta_lr" => sched.meta_lr.to_string(),
            "inner_lr" => sched.inner_lr.to_string(),
            "inner_steps" => sched.inner_steps.to_string(),
            "inner_optimizer" => enum_name(&sched.inner_optimizer),
            "meta_update" => enum_name(&sched.meta_update),
            "n_way" => exp.train.episode.n_way.to_string(),
            "k_shot" => exp.train.episode.k_shot.to_string(),
            "replay_policy" => exp.replay.policy.as_str().into(),
            "replay_budget" => auto(&exp.replay.budget),
            "ablate" if self.ablate.is_empty() => "none".into(),
            "ablate" => self.ablate.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(","),
            "out" => self.out.as_ref().map_or("auto".into(), |p| p.display().to_string()),
            other => panic!("no config key `{other}`"),
        }
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("{origin}:{}: expected `key = value`, got `{raw}`", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| bad(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{key} = {}", self.get(key));
        }
        s
    }

    /// The experiment actually run: the configured one with ablations applied.
    pub fn experiment(&self) -> Experiment {
        let mut exp = self.exp.clone();
        for a in &self.ablate {
            match a {
                Ablation::NoMeta => exp.train.disable_meta = true,
                Ablation::NoGate => exp.model.self_gating = false,
                Ablation::NoNorm => exp.model.normalization = Normalization::None,
                Ablation::PlainCn => exp.model.normalization = Normalization::PlainCn,
                Ablation::NoReplay => exp.replay.budget = Some(0),
            }
        }
        exp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mczsl_core::protocols::Protocol;

    #[test]
    fn text_round_trip_of_defaults_and_edits() {
        let mut c = RunConfig::default();
        assert_eq!(
            {
                let mut back = RunConfig::default();
                back.apply_text(&c.to_text(), "t").unwrap();
                back
            },
            c
        );
        for (k, v) in [
            ("synth", "true"),
            ("synth.noise", "0.25"),
            ("protocol", "dynamic"),
            ("tasks", "3"),
            ("hidden_width", "48"),
            ("meta_lr", "0.0003"),
            ("inner_optimizer", "sgd"),
            ("meta_update", "plain"),
            ("class_order", "shuffled"),
            ("replay_policy", "ring"),
            ("ablate", "no-meta,no-gate"),
            ("out", "runs/x"),
        ] {
            c.set(k, v).unwrap();
        }
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "t").unwrap();
        assert_eq!(back, c);
        assert_eq!(c.exp.protocol, Protocol::DynamicContinual);
        assert_eq!(c.tasks, Some(3));
    }

    #[test]
    fn every_key_is_readable_and_writable() {
        let mut c = RunConfig::default();
        for (k, _) in KEYS {
            let v = c.get(k);
            c.set(k, &v).unwrap_or_else(|e| panic!("{k} = {v}: {e}"));
        }
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("epoch", "3"), Err(CliError::Config(_))));
        assert!(matches!(c.set("epochs", "three"), Err(CliError::Config(_))));
        assert!(matches!(c.set("protocol", "online"), Err(CliError::Config(_))));
        assert!(matches!(c.set("ablate", "no-meta,no-brain"), Err(CliError::Config(_))));
        assert!(c.apply_text("seed 3\n", "t").is_err());
        let err = c.apply_text("# ok\nseed = 3\nbogus = 1\n", "f.cfg").unwrap_err().to_string();
        assert!(err.starts_with("f.cfg:3:"), "{err}");
    }

    #[test]
    fn ablations_touch_only_their_setting() {
        let mut c = RunConfig::default();
        c.set("ablate", "no-meta").unwrap();
        let e = c.experiment();
        assert!(e.train.disable_meta);
        assert_eq!(e.model, c.exp.model);
        c.set("ablate", "no-norm,no-replay,no-gate").unwrap();
        let e = c.experiment();
        assert_eq!(e.model.normalization, Normalization::None);
        assert!(!e.model.self_gating);
        assert_eq!(e.replay.budget, Some(0));
        assert!(!e.train.disable_meta);
    }
}
