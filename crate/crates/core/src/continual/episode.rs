use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::reservoir::Reservoir;
use crate::error::{Error, Result};
use crate::numerics::{Dense2D, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Classes per episode, capped by the classes available.
    pub n_way: usize,
    /// Samples per class, fewer when a class is scarce.
    pub k_shot: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { n_way: 32, k_shot: 4 }
    }
}

/// A training batch. `labels[i]` indexes into `classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub features: Dense2D<f32>,
    pub labels: Vec<usize>,
    /// Global class index of each local label.
    pub classes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Current(usize),
    Replay(usize),
}

/// Current-task samples pooled with a frozen view of the replay memory.
pub struct SamplePool<'a> {
    features: &'a Dense2D<f32>,
    reservoir: &'a Reservoir,
    by_class: BTreeMap<usize, Vec<Source>>,
}

impl<'a> SamplePool<'a> {
    /// `current` lists row indices of `features`, with `labels` giving each row's class.
    pub fn new(features: &'a Dense2D<f32>, labels: &[usize], current: &[usize], reservoir: &'a Reservoir) -> Result<Self> {
        if !reservoir.is_empty() && reservoir.feat_dim() != features.cols() {
            return Err(Error::Length {
                op: "sample pool",
                expected: features.cols(),
                got: reservoir.feat_dim(),
            });
        }
        let mut by_class: BTreeMap<usize, Vec<Source>> = BTreeMap::new();
        for &i in current {
            if i >= features.rows() || i >= labels.len() {
                return Err(Error::invalid(format!("sample index {i} out of range")));
            }
            by_class.entry(labels[i]).or_default().push(Source::Current(i));
        }
        for (j, slot) in reservoir.slots().iter().enumerate() {
            by_class.entry(slot.label).or_default().push(Source::Replay(j));
        }
        Ok(Self {
            features,
            reservoir,
            by_class,
        })
    }

    /// Available classes, ascending.
    pub fn classes(&self) -> Vec<usize> {
        self.by_class.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_class.is_empty()
    }

    fn row(&self, s: Source) -> &[f32] {
        match s {
            Source::Current(i) => self.features.row(i),
            Source::Replay(j) => &self.reservoir.slots()[j].feature,
        }
    }

    /// Draws `min(n_way, classes)` classes uniformly without replacement, then
    /// up to `k_shot` samples of each without replacement. Classes keep their
    /// draw order as local labels.
    pub fn sample_episode(&self, cfg: &EpisodeConfig, rng: &mut Rng) -> Result<Episode> {
        if self.by_class.is_empty() {
            return Err(Error::EmptyPool("episode: no classes available"));
        }
        if cfg.n_way == 0 || cfg.k_shot == 0 {
            return Err(Error::invalid("episode way and shot must be positive"));
        }
        let all = self.classes();
        let picked: Vec<usize> = rng.choose_distinct(all.len(), cfg.n_way).into_iter().map(|k| all[k]).collect();
        let d = self.features.cols();
        let mut data = Vec::with_capacity(picked.len() * cfg.k_shot * d);
        let mut labels = Vec::with_capacity(picked.len() * cfg.k_shot);
        for (local, class) in picked.iter().enumerate() {
            let pool = &self.by_class[class];
            for k in rng.choose_distinct(pool.len(), cfg.k_shot) {
                data.extend_from_slice(self.row(pool[k]));
                labels.push(local);
            }
        }
        Ok(Episode {
            features: Dense2D::new(labels.len(), d, data)?,
            labels,
            classes: picked,
        })
    }
}
