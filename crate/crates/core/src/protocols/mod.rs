//! Task splits for the three evaluation settings and the metrics computed over them.
//!
//! * GZSL: one training stage on every seen class, evaluated against all classes.
//! * Fixed continual: all classes are split into `K` groups in class order;
//!   group `t` becomes seen at task `t`, later groups are the unseen set.
//!   Only tasks `1..K-1` are scored since task `K` has no unseen classes.
//! * Dynamic continual: the dataset's seen and unseen classes are each split
//!   into `K` groups; task `t` adds one group of each.

mod metrics;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetContainer, DatasetMeta};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub use metrics::{
    aggregate, evaluate_dynamic, evaluate_fixed, evaluate_gzsl, evaluate_plan, evaluate_task, harmonic_mean,
    per_class_accuracy, AttributeClassifier, Classifier, MetricsRecord, TaskMetrics, METRICS_SCHEMA,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Gzsl,
    #[default]
    FixedContinual,
    DynamicContinual,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Gzsl => "gzsl",
            Protocol::FixedContinual => "fixed_continual",
            Protocol::DynamicContinual => "dynamic_continual",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gzsl" => Ok(Protocol::Gzsl),
            "fixed" | "fixed_continual" => Ok(Protocol::FixedContinual),
            "dynamic" | "dynamic_continual" => Ok(Protocol::DynamicContinual),
            other => Err(Error::invalid(format!(
                "unknown protocol `{other}` (expected gzsl, fixed or dynamic)"
            ))),
        }
    }
}

/// How class indices are assigned to tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    /// Ascending class index.
    #[default]
    Canonical,
    /// Seeded permutation.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    /// 1-based task number.
    pub task: usize,
    /// Classes whose training samples arrive with this task.
    pub new_seen: Vec<usize>,
    /// Seen classes scored after this task.
    pub seen: Vec<usize>,
    /// Unseen classes scored after this task.
    pub unseen: Vec<usize>,
    /// Training sample indices (the classes in `new_seen`).
    pub train: Vec<usize>,
    /// Test samples of `seen` classes.
    pub test_seen: Vec<usize>,
    /// Test samples of `unseen` classes.
    pub test_unseen: Vec<usize>,
    /// Candidate classes for the combined (harmonic) score.
    pub candidates: Vec<usize>,
    /// False for the last fixed-protocol task, which has nothing unseen to score.
    pub evaluated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolPlan {
    pub protocol: Protocol,
    pub tasks: Vec<TaskSplit>,
    /// Replay memory size in samples.
    pub replay_budget: usize,
}

impl ProtocolPlan {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Checks disjointness and the protocol's growth pattern.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::PlanMismatch(msg));
        let mut prev_seen: Vec<usize> = Vec::new();
        let mut prev_unseen: Vec<usize> = Vec::new();
        for (k, t) in self.tasks.iter().enumerate() {
            if t.task != k + 1 {
                return fail(format!("task {} listed at position {}", t.task, k + 1));
            }
            let seen: BTreeSet<_> = t.seen.iter().collect();
            if t.unseen.iter().any(|c| seen.contains(c)) {
                return fail(format!("task {}: seen and unseen classes overlap", t.task));
            }
            let idx: BTreeSet<_> = t.train.iter().chain(&t.test_seen).chain(&t.test_unseen).collect();
            if idx.len() != t.train.len() + t.test_seen.len() + t.test_unseen.len() {
                return fail(format!("task {}: sample index sets overlap", t.task));
            }
            if !is_superset(&t.seen, &prev_seen) || t.seen.len() <= prev_seen.len() {
                return fail(format!("task {}: seen classes must strictly grow", t.task));
            }
            match self.protocol {
                Protocol::FixedContinual => {
                    if k > 0 && !(is_superset(&prev_unseen, &t.unseen) && t.unseen.len() < prev_unseen.len()) {
                        return fail(format!("task {}: unseen classes must shrink", t.task));
                    }
                    if k > 0 && t.seen.len() + t.unseen.len() != prev_seen.len() + prev_unseen.len() {
                        return fail(format!("task {}: class union changed", t.task));
                    }
                }
                Protocol::DynamicContinual => {
                    if !is_superset(&t.unseen, &prev_unseen) || t.unseen.len() <= prev_unseen.len() {
                        return fail(format!("task {}: unseen classes must grow", t.task));
                    }
                    let old: BTreeSet<_> = prev_seen.iter().chain(&prev_unseen).collect();
                    if t.new_seen.iter().any(|c| old.contains(c)) {
                        return fail(format!("task {}: class reused from an earlier task", t.task));
                    }
                }
                Protocol::Gzsl => {
                    if self.tasks.len() != 1 {
                        return fail("gzsl plan must have exactly one task".into());
                    }
                }
            }
            prev_seen = t.seen.clone();
            prev_unseen = t.unseen.clone();
        }
        Ok(())
    }
}

fn is_superset(big: &[usize], small: &[usize]) -> bool {
    let big: BTreeSet<_> = big.iter().collect();
    small.iter().all(|c| big.contains(c))
}

/// Splits `total` into `parts` near-equal sizes, larger ones last.
pub fn even_split(total: usize, parts: usize) -> Result<Vec<usize>> {
    if parts == 0 || parts > total {
        return Err(Error::invalid(format!("cannot split {total} classes into {parts} tasks")));
    }
    let base = total / parts;
    let extra = total % parts;
    Ok((0..parts).map(|i| base + usize::from(i >= parts - extra)).collect())
}

/// Class groups and replay budget of the fixed protocol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedShape {
    pub group_sizes: Vec<usize>,
    pub budget: usize,
}

/// Per-task seen/unseen group sizes and replay budget of the dynamic protocol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DynamicShape {
    pub seen_sizes: Vec<usize>,
    pub unseen_sizes: Vec<usize>,
    pub budget: usize,
}

pub fn fixed_shape(meta: &DatasetMeta) -> Result<FixedShape> {
    Ok(FixedShape {
        group_sizes: even_split(meta.classes, meta.tasks)?,
        budget: meta.budget_per_class * meta.classes,
    })
}

pub fn dynamic_shape(meta: &DatasetMeta) -> Result<DynamicShape> {
    Ok(DynamicShape {
        seen_sizes: even_split(meta.seen, meta.tasks)?,
        unseen_sizes: even_split(meta.unseen, meta.tasks)?,
        budget: meta.budget_per_class * meta.seen,
    })
}

fn ordered(mut classes: Vec<usize>, order: ClassOrder, rng: &mut Rng) -> Vec<usize> {
    if order == ClassOrder::Shuffled {
        rng.shuffle(&mut classes);
    }
    classes
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

fn chunks(classes: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in sizes {
        out.push(classes[at..at + s].to_vec());
        at += s;
    }
    out
}

fn samples_of(data: &DatasetContainer, pool: &[usize], classes: &[usize]) -> Vec<usize> {
    let wanted: BTreeSet<usize> = classes.iter().copied().collect();
    pool.iter().copied().filter(|&i| wanted.contains(&data.labels[i])).collect()
}

fn check_meta(meta: &DatasetMeta, data: &DatasetContainer) -> Result<()> {
    if data.num_classes() != meta.classes {
        return Err(Error::PlanMismatch(format!(
            "{}: dataset has {} classes, expected {}",
            meta.name,
            data.num_classes(),
            meta.classes
        )));
    }
    Ok(())
}

/// Fixed continual plan. Every class needs training samples; see
/// [`DatasetContainer::with_train_for_all_classes`].
pub fn build_fixed_splits(
    meta: &DatasetMeta,
    data: &DatasetContainer,
    order: ClassOrder,
    rng: &mut Rng,
) -> Result<ProtocolPlan> {
    check_meta(meta, data)?;
    let shape = fixed_shape(meta)?;
    if data.train_classes().len() != meta.classes {
        return Err(Error::PlanMismatch(format!(
            "fixed protocol needs training samples for all {} classes, dataset has {}",
            meta.classes,
            data.train_classes().len()
        )));
    }
    let groups = chunks(&ordered((0..meta.classes).collect(), order, rng), &shape.group_sizes);
    let test = data.test_indices();
    let all: Vec<usize> = (0..meta.classes).collect();
    let k = groups.len();
    let tasks = (1..=k)
        .map(|t| {
            let seen = sorted(&groups[..t].concat());
            let unseen = sorted(&groups[t..].concat());
            TaskSplit {
                task: t,
                new_seen: sorted(&groups[t - 1]),
                train: samples_of(data, &data.train, &groups[t - 1]),
                test_seen: samples_of(data, &test, &seen),
                test_unseen: samples_of(data, &test, &unseen),
                seen,
                unseen,
                candidates: all.clone(),
                evaluated: t < k,
            }
        })
        .collect();
    let plan = ProtocolPlan {
        protocol: Protocol::FixedContinual,
        tasks,
        replay_budget: shape.budget,
    };
    plan.check_invariants()?;
    Ok(plan)
}

pub fn build_dynamic_splits(
    meta: &DatasetMeta,
    data: &DatasetContainer,
    order: ClassOrder,
    rng: &mut Rng,
) -> Result<ProtocolPlan> {
    check_meta(meta, data)?;
    let shape = dynamic_shape(meta)?;
    let (seen_all, unseen_all) = (data.train_classes(), data.unseen_classes());
    if seen_all.len() != meta.seen || unseen_all.len() != meta.unseen {
        return Err(Error::PlanMismatch(format!(
            "{}: dataset has {}/{} seen/unseen classes, expected {}/{}",
            meta.name,
            seen_all.len(),
            unseen_all.len(),
            meta.seen,
            meta.unseen
        )));
    }
    let seen_groups = chunks(&ordered(seen_all, order, rng), &shape.seen_sizes);
    let unseen_groups = chunks(&ordered(unseen_all, order, rng), &shape.unseen_sizes);
    let test = data.test_indices();
    let tasks = (1..=seen_groups.len())
        .map(|t| {
            let seen = sorted(&seen_groups[..t].concat());
            let unseen = sorted(&unseen_groups[..t].concat());
            let candidates = sorted(&[seen.clone(), unseen.clone()].concat());
            TaskSplit {
                task: t,
                new_seen: sorted(&seen_groups[t - 1]),
                train: samples_of(data, &data.train, &seen_groups[t - 1]),
                test_seen: samples_of(data, &test, &seen),
                test_unseen: samples_of(data, &test, &unseen),
                seen,
                unseen,
                candidates,
                evaluated: true,
            }
        })
        .collect();
    let plan = ProtocolPlan {
        protocol: Protocol::DynamicContinual,
        tasks,
        replay_budget: shape.budget,
    };
    plan.check_invariants()?;
    Ok(plan)
}

/// Single-stage plan over the dataset's own splits.
pub fn build_gzsl_plan(data: &DatasetContainer) -> Result<ProtocolPlan> {
    let seen = data.train_classes();
    let unseen = data.unseen_classes();
    if seen.is_empty() {
        return Err(Error::PlanMismatch("gzsl needs training samples".into()));
    }
    if unseen.is_empty() {
        return Err(Error::PlanMismatch("gzsl needs unseen test samples".into()));
    }
    let candidates = sorted(&[seen.clone(), unseen.clone()].concat());
    let plan = ProtocolPlan {
        protocol: Protocol::Gzsl,
        tasks: vec![TaskSplit {
            task: 1,
            new_seen: seen.clone(),
            train: data.train.clone(),
            test_seen: data.test_seen.clone(),
            test_unseen: data.test_unseen.clone(),
            seen,
            unseen,
            candidates,
            evaluated: true,
        }],
        replay_budget: 0,
    };
    plan.check_invariants()?;
    Ok(plan)
}
