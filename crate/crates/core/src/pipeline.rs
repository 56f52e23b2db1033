//! Full protocol runs: plan construction, the task stream and evaluation after every task.

use serde::{Deserialize, Serialize};

use crate::continual::{run_task, ReplayPolicy, Reservoir, TaskStats, TrainConfig};
use crate::data::{DatasetContainer, DatasetMeta};
use crate::error::Result;
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::numerics::Rng;
use crate::protocols::{
    aggregate, build_dynamic_splits, build_fixed_splits, build_gzsl_plan, evaluate_task, AttributeClassifier,
    ClassOrder, MetricsRecord, Protocol, ProtocolPlan, TaskMetrics, TaskSplit,
};

// Independent random streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_PLAN: u64 = 2;
const STREAM_TRAIN: u64 = 3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub policy: ReplayPolicy,
    /// Overrides the protocol's budget when set. `Some(0)` disables replay.
    pub budget: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub protocol: Protocol,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub replay: ReplayConfig,
    pub class_order: ClassOrder,
}

/// The dataset actually trained on (the fixed protocol may move test samples
/// into training) together with its plan.
pub struct PreparedRun {
    pub data: DatasetContainer,
    pub plan: ProtocolPlan,
}

pub fn prepare(exp: &Experiment, meta: &DatasetMeta, data: &DatasetContainer) -> Result<PreparedRun> {
    let mut rng = Rng::seed_from(exp.seed).fork(STREAM_PLAN);
    let (data, plan) = match exp.protocol {
        Protocol::Gzsl => (data.clone(), build_gzsl_plan(data)?),
        Protocol::FixedContinual => {
            let full = data.with_train_for_all_classes(&mut rng)?;
            let plan = build_fixed_splits(meta, &full, exp.class_order, &mut rng)?;
            (full, plan)
        }
        Protocol::DynamicContinual => {
            let plan = build_dynamic_splits(meta, data, exp.class_order, &mut rng)?;
            (data.clone(), plan)
        }
    };
    Ok(PreparedRun { data, plan })
}

pub fn initial_params(exp: &Experiment, data: &DatasetContainer) -> Result<ModelParams<f32>> {
    let mut rng = Rng::seed_from(exp.seed).fork(STREAM_INIT);
    init_params(&exp.model, data.attr_dim(), data.feat_dim(), &mut rng)
}

pub fn replay_budget(exp: &Experiment, plan: &ProtocolPlan) -> usize {
    exp.replay.budget.unwrap_or(plan.replay_budget)
}

/// Everything known after a task finished.
pub struct TaskOutcome<'a> {
    pub split: &'a TaskSplit,
    pub params: &'a ModelParams<f32>,
    pub memory: &'a Reservoir,
    pub stats: &'a TaskStats,
    /// `None` for tasks the protocol does not score.
    pub metrics: Option<&'a TaskMetrics>,
}

pub struct RunResult {
    pub params: ModelParams<f32>,
    pub memory: Reservoir,
    pub metrics: MetricsRecord,
    pub stats: Vec<TaskStats>,
}

/// Trains through every task of the plan, scoring after each one.
pub fn run_protocol(
    exp: &Experiment,
    prepared: &PreparedRun,
    mut on_task: impl FnMut(&TaskOutcome<'_>) -> Result<()>,
) -> Result<RunResult> {
    let PreparedRun { data, plan } = prepared;
    let mut params = initial_params(exp, data)?;
    let mut memory = Reservoir::new(replay_budget(exp, plan), data.feat_dim(), exp.replay.policy);
    let mut rng = Rng::seed_from(exp.seed).fork(STREAM_TRAIN);
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    for split in &plan.tasks {
        let st = run_task(&mut params, data, split, &mut memory, &exp.train, &mut rng)?;
        let row = if split.evaluated {
            let clf = AttributeClassifier {
                params: &params,
                attributes: &data.attributes,
            };
            Some(evaluate_task(&clf, split, data, plan.protocol)?)
        } else {
            None
        };
        on_task(&TaskOutcome {
            split,
            params: &params,
            memory: &memory,
            stats: &st,
            metrics: row.as_ref(),
        })?;
        rows.extend(row);
        stats.push(st);
    }
    Ok(RunResult {
        params,
        memory,
        metrics: aggregate(plan.protocol, rows),
        stats,
    })
}

/// Re-scores a finished run from its per-task parameters.
pub fn evaluate_run(prepared: &PreparedRun, per_task: &[ModelParams<f32>]) -> Result<MetricsRecord> {
    let PreparedRun { data, plan } = prepared;
    let classifiers: Vec<AttributeClassifier<'_>> = per_task
        .iter()
        .map(|p| AttributeClassifier {
            params: p,
            attributes: &data.attributes,
        })
        .collect();
    let refs: Vec<&dyn crate::protocols::Classifier> = classifiers.iter().map(|c| c as _).collect();
    crate::protocols::evaluate_plan(&refs, plan, data)
}

/// Registry-style description of a container that is not a registry dataset.
pub fn describe(data: &DatasetContainer, tasks: usize, budget_per_class: usize) -> DatasetMeta {
    DatasetMeta {
        name: "custom",
        feat_dim: data.feat_dim(),
        attr_dim: data.attr_dim(),
        classes: data.num_classes(),
        seen: data.train_classes().len(),
        unseen: data.unseen_classes().len(),
        tasks,
        budget_per_class,
    }
}
