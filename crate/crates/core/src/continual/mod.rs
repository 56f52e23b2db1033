//! Replay memory, episode sampling and the per-task training loop.
//!
//! Each task trains on its own samples pooled with the replay memory as it
//! stood when the task began. Once training ends the task's samples are
//! offered to the memory.

mod episode;
mod reservoir;

use serde::{Deserialize, Serialize};

use crate::data::DatasetContainer;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::Rng;
use crate::optim::{adam_step, inner_loop, reptile_outer_step, AdamState, MetaSchedule};
use crate::protocols::TaskSplit;

pub use episode::{Episode, EpisodeConfig, SamplePool};
pub use reservoir::{read_reservoir, write_reservoir, ReplayPolicy, ReplaySlot, Reservoir, RESERVOIR_MAGIC, RESERVOIR_VERSION};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: MetaSchedule,
    pub episode: EpisodeConfig,
    /// Replace the meta-learner with plain Adam on the episode loss, using
    /// the meta learning-rate schedule.
    pub disable_meta: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStats {
    pub task: usize,
    pub meta_batches_per_epoch: usize,
    /// Mean pre-adaptation episode loss over the first epoch.
    pub first_epoch_loss: f64,
    /// Mean pre-adaptation episode loss over the last epoch.
    pub last_epoch_loss: f64,
}

/// `⌈task size / (way · shot)⌉`, at least 1.
pub fn meta_batches_per_epoch(task_size: usize, cfg: &EpisodeConfig) -> usize {
    task_size.div_ceil(cfg.n_way * cfg.k_shot).max(1)
}

/// Trains `params` on one task and then streams the task's samples into `memory`.
pub fn run_task(
    params: &mut ModelParams<f32>,
    data: &DatasetContainer,
    task: &TaskSplit,
    memory: &mut Reservoir,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TaskStats> {
    if task.train.is_empty() {
        return Err(Error::invalid(format!("task {} has no training samples", task.task)));
    }
    let sched = &cfg.schedule;
    let batches = meta_batches_per_epoch(task.train.len(), &cfg.episode);
    let pool = SamplePool::new(&data.features, &data.labels, &task.train, memory)?;

    let mut theta = params.flatten();
    let mut work = params.clone();
    let mut meta_state = AdamState::new(theta.len());
    let (mut first_epoch_loss, mut last_epoch_loss) = (0.0, 0.0);
    for epoch in 0..sched.epochs {
        let lr = sched.meta_lr(epoch)? as f32;
        let mut epoch_loss = 0.0;
        for _ in 0..batches {
            let ep = pool.sample_episode(&cfg.episode, rng)?;
            let attrs = data.attributes.select_rows(&ep.classes)?;
            let mut first_loss = None;
            let mut loss_grad = |p: &[f32]| {
                work.unflatten(p)?;
                let (loss, grads) = work.loss_and_grads(&ep.features, &ep.labels, &attrs)?;
                first_loss.get_or_insert(loss as f64);
                Ok((loss, grads))
            };
            if cfg.disable_meta {
                let (_, grads) = loss_grad(&theta)?;
                adam_step(&mut theta, &grads, &mut meta_state, lr)?;
            } else {
                let adapted = inner_loop(
                    &theta,
                    &mut loss_grad,
                    sched.inner_steps,
                    sched.inner_lr as f32,
                    sched.inner_optimizer,
                )?;
                reptile_outer_step(&mut theta, &adapted, &mut meta_state, lr, sched.meta_update)?;
            }
            if let Some(l) = first_loss {
                epoch_loss += l;
            }
        }
        epoch_loss /= batches as f64;
        if epoch == 0 {
            first_epoch_loss = epoch_loss;
        }
        last_epoch_loss = epoch_loss;
    }
    params.unflatten(&theta)?;
    drop(pool);

    for &i in &task.train {
        memory.offer(data.features.row(i), data.labels[i], task.task, rng)?;
    }
    Ok(TaskStats {
        task: task.task,
        meta_batches_per_epoch: batches,
        first_epoch_loss,
        last_epoch_loss,
    })
}
