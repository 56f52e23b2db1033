//! Constant-size replay memory.
//!
//! Checkpoint layout (`.mczr`, little-endian):
//!
//! ```text
//! magic     "MCZR"
//! version   u32 = 1
//! policy    u32            0 reservoir, 1 ring
//! capacity  u32
//! seen      u64            items offered so far
//! d         u32            feature width
//! slots     u32
//! per slot  u32 label, u32 task, f32 × d
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{to_u32, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::numerics::Rng;

pub const RESERVOIR_MAGIC: [u8; 4] = *b"MCZR";
pub const RESERVOIR_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayPolicy {
    /// Uniform sample of everything offered (Algorithm R).
    #[default]
    Reservoir,
    /// Per-class FIFO queues of equal length.
    Ring,
}

impl ReplayPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplayPolicy::Reservoir => "reservoir",
            ReplayPolicy::Ring => "ring",
        }
    }
}

impl std::str::FromStr for ReplayPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reservoir" => Ok(ReplayPolicy::Reservoir),
            "ring" => Ok(ReplayPolicy::Ring),
            other => Err(Error::invalid(format!("unknown replay policy `{other}` (expected reservoir or ring)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySlot {
    pub feature: Vec<f32>,
    pub label: usize,
    pub task: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reservoir {
    capacity: usize,
    feat_dim: usize,
    policy: ReplayPolicy,
    seen: u64,
    slots: Vec<ReplaySlot>,
}

impl Reservoir {
    pub fn new(capacity: usize, feat_dim: usize, policy: ReplayPolicy) -> Self {
        Self {
            capacity,
            feat_dim,
            policy,
            seen: 0,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn policy(&self) -> ReplayPolicy {
        self.policy
    }

    /// Number of items offered so far.
    pub fn seen_count(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[ReplaySlot] {
        &self.slots
    }

    /// Distinct stored labels, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.slots.iter().map(|s| s.label).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn offer(&mut self, feature: &[f32], label: usize, task: usize, rng: &mut Rng) -> Result<()> {
        if feature.len() != self.feat_dim {
            return Err(Error::Length {
                op: "reservoir offer",
                expected: self.feat_dim,
                got: feature.len(),
            });
        }
        self.seen += 1;
        if self.capacity == 0 {
            return Ok(());
        }
        let item = ReplaySlot {
            feature: feature.to_vec(),
            label,
            task,
        };
        match self.policy {
            ReplayPolicy::Reservoir => self.reservoir_offer(item, rng),
            ReplayPolicy::Ring => self.ring_offer(item),
        }
        Ok(())
    }

    fn reservoir_offer(&mut self, item: ReplaySlot, rng: &mut Rng) {
        if self.slots.len() < self.capacity {
            self.slots.push(item);
            return;
        }
        let j = rng.below(usize::try_from(self.seen).unwrap_or(usize::MAX));
        if j < self.capacity {
            self.slots[j] = item;
        }
    }

    /// Appends, then drops the oldest item of the most populous class (lowest
    /// label on ties) while over capacity. Slots stay in arrival order.
    fn ring_offer(&mut self, item: ReplaySlot) {
        self.slots.push(item);
        while self.slots.len() > self.capacity {
            let mut counts = std::collections::BTreeMap::new();
            for s in &self.slots {
                *counts.entry(s.label).or_insert(0usize) += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            let victim = counts.iter().find(|(_, &n)| n == top).map(|(&l, _)| l);
            let pos = self.slots.iter().position(|s| Some(s.label) == victim);
            if let Some(pos) = pos {
                self.slots.remove(pos);
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(&RESERVOIR_MAGIC);
        w.u32(RESERVOIR_VERSION);
        w.u32(match self.policy {
            ReplayPolicy::Reservoir => 0,
            ReplayPolicy::Ring => 1,
        });
        w.u32(to_u32(self.capacity, "capacity")?);
        w.u64(self.seen);
        w.u32(to_u32(self.feat_dim, "feature width")?);
        w.u32(to_u32(self.slots.len(), "slot count")?);
        for s in &self.slots {
            w.u32(to_u32(s.label, "label")?);
            w.u32(to_u32(s.task, "task")?);
            w.f32s(&s.feature);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(RESERVOIR_MAGIC)?;
        r.version(RESERVOIR_VERSION)?;
        let policy = match r.u32()? {
            0 => ReplayPolicy::Reservoir,
            1 => ReplayPolicy::Ring,
            p => return Err(FormatError::Invariant(format!("unknown replay policy code {p}")).into()),
        };
        let capacity = r.u32()? as usize;
        let seen = r.u64()?;
        let feat_dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        if count > capacity || count as u64 > seen {
            return Err(FormatError::Invariant(format!(
                "{count} slots with capacity {capacity} after {seen} offers"
            ))
            .into());
        }
        let mut slots = Vec::with_capacity(count);
        for _ in 0..count {
            let label = r.u32()? as usize;
            let task = r.u32()? as usize;
            let feature = r.f32s(feat_dim)?;
            slots.push(ReplaySlot { feature, label, task });
        }
        r.finish()?;
        Ok(Self {
            capacity,
            feat_dim,
            policy,
            seen,
            slots,
        })
    }
}

pub fn write_reservoir(r: &Reservoir, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, r.to_bytes()?)?;
    Ok(())
}

pub fn read_reservoir(path: impl AsRef<Path>) -> Result<Reservoir> {
    Reservoir::from_bytes(&fs::read(path)?)
}
