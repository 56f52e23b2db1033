//! Dataset registry, the CZSF container format and the synthetic generator.
//!
//! CZSF v1 layout (all little-endian):
//!
//! ```text
//! magic        "CZSF"
//! version      u32 = 1
//! n d C z      u32 × 4
//! split sizes  u32 × 3       train, test_seen, test_unseen
//! features     f32 × n·d     row-major, unnormalized
//! labels       u32 × n
//! attributes   f32 × C·z
//! splits       u32 × (train + test_seen + test_unseen)
//! ```
//!
//! Real datasets are conventionally stored as `<dataset>.czsf`, e.g. `AWA2.czsf`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::binio::{to_u32, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::numerics::{Dense2D, Rng};

pub const CONTAINER_MAGIC: [u8; 4] = *b"CZSF";
pub const CONTAINER_VERSION: u32 = 1;

/// Fraction of each seen class's samples assigned to training by the
/// synthetic generator and by [`DatasetContainer::with_train_for_all_classes`].
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: &'static str,
    pub feat_dim: usize,
    pub attr_dim: usize,
    pub classes: usize,
    pub seen: usize,
    pub unseen: usize,
    /// Task count of both continual protocols.
    pub tasks: usize,
    /// Replay slots per class: the fixed protocol multiplies by all classes,
    /// the dynamic one by seen classes.
    pub budget_per_class: usize,
}

pub const AWA1: DatasetMeta = DatasetMeta {
    name: "AWA1",
    feat_dim: 2048,
    attr_dim: 85,
    classes: 50,
    seen: 40,
    unseen: 10,
    tasks: 5,
    budget_per_class: 25,
};

pub const AWA2: DatasetMeta = DatasetMeta { name: "AWA2", ..AWA1 };

pub const CUB: DatasetMeta = DatasetMeta {
    name: "CUB",
    feat_dim: 2048,
    attr_dim: 312,
    classes: 200,
    seen: 150,
    unseen: 50,
    tasks: 20,
    budget_per_class: 10,
};

pub const SUN: DatasetMeta = DatasetMeta {
    name: "SUN",
    feat_dim: 2048,
    attr_dim: 102,
    classes: 717,
    seen: 645,
    unseen: 72,
    tasks: 15,
    budget_per_class: 5,
};

pub const APY: DatasetMeta = DatasetMeta {
    name: "aPY",
    feat_dim: 2048,
    attr_dim: 64,
    classes: 32,
    seen: 20,
    unseen: 12,
    tasks: 4,
    budget_per_class: 25,
};

pub const REGISTRY: [DatasetMeta; 5] = [AWA1, AWA2, CUB, SUN, APY];

/// Case-insensitive registry lookup.
pub fn lookup(name: &str) -> Result<DatasetMeta> {
    REGISTRY
        .iter()
        .find(|m| m.name.eq_ignore_ascii_case(name))
        .copied()
        .ok_or_else(|| Error::UnknownDataset(name.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetContainer {
    pub features: Dense2D<f32>,
    pub labels: Vec<usize>,
    pub attributes: Dense2D<f32>,
    pub train: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

impl DatasetContainer {
    pub fn new(
        features: Dense2D<f32>,
        labels: Vec<usize>,
        attributes: Dense2D<f32>,
        train: Vec<usize>,
        test_seen: Vec<usize>,
        test_unseen: Vec<usize>,
    ) -> Result<Self> {
        let c = Self {
            features,
            labels,
            attributes,
            train,
            test_seen,
            test_unseen,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    fn classes_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Classes with at least one training sample, ascending.
    pub fn train_classes(&self) -> Vec<usize> {
        self.classes_of(&self.train)
    }

    /// Classes appearing in the unseen test split, ascending.
    pub fn unseen_classes(&self) -> Vec<usize> {
        self.classes_of(&self.test_unseen)
    }

    /// Union of both test splits in ascending sample order.
    pub fn test_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.test_seen.iter().chain(&self.test_unseen).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| -> Result<()> { Err(FormatError::Invariant(msg).into()) };
        let n = self.labels.len();
        if self.features.rows() != n {
            return bad(format!("{} feature rows for {n} labels", self.features.rows()));
        }
        let classes = self.attributes.rows();
        if let Some(&l) = self.labels.iter().find(|&&l| l >= classes) {
            return bad(format!("label {l} out of range for {classes} classes"));
        }
        if !self.attributes.is_finite() {
            return bad("non-finite attribute value".into());
        }
        let mut used = vec![false; n];
        for (name, split) in [
            ("train", &self.train),
            ("test_seen", &self.test_seen),
            ("test_unseen", &self.test_unseen),
        ] {
            for &i in split {
                if i >= n {
                    return bad(format!("{name} index {i} out of range for {n} samples"));
                }
                if used[i] {
                    return bad(format!("sample {i} listed twice across splits ({name})"));
                }
                used[i] = true;
            }
        }
        Ok(())
    }

    /// Copy in which every class lacking training samples gets a seeded
    /// [`TRAIN_FRACTION`] share of its test samples moved into `train`. The
    /// fixed continual protocol needs training data for every class.
    pub fn with_train_for_all_classes(&self, rng: &mut Rng) -> Result<Self> {
        let have: BTreeSet<usize> = self.train_classes().into_iter().collect();
        let mut moved = vec![false; self.len()];
        let mut train = self.train.clone();
        for class in 0..self.num_classes() {
            if have.contains(&class) {
                continue;
            }
            let mut pool: Vec<usize> = self.test_indices().into_iter().filter(|&i| self.labels[i] == class).collect();
            if pool.len() < 2 {
                continue;
            }
            rng.shuffle(&mut pool);
            let k = train_count(pool.len());
            for &i in &pool[..k] {
                moved[i] = true;
                train.push(i);
            }
        }
        train.sort_unstable();
        let keep = |v: &[usize]| v.iter().copied().filter(|&i| !moved[i]).collect::<Vec<_>>();
        Self::new(
            self.features.clone(),
            self.labels.clone(),
            self.attributes.clone(),
            train,
            keep(&self.test_seen),
            keep(&self.test_unseen),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(&CONTAINER_MAGIC);
        w.u32(CONTAINER_VERSION);
        for (v, what) in [
            (self.len(), "n"),
            (self.feat_dim(), "d"),
            (self.num_classes(), "C"),
            (self.attr_dim(), "z"),
            (self.train.len(), "train length"),
            (self.test_seen.len(), "test_seen length"),
            (self.test_unseen.len(), "test_unseen length"),
        ] {
            w.u32(to_u32(v, what)?);
        }
        w.f32s(self.features.data());
        w.u32s(&to_u32_vec(&self.labels, "label")?);
        w.f32s(self.attributes.data());
        for split in [&self.train, &self.test_seen, &self.test_unseen] {
            w.u32s(&to_u32_vec(split, "index")?);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CONTAINER_MAGIC)?;
        r.version(CONTAINER_VERSION)?;
        let mut dims = [0usize; 7];
        for v in &mut dims {
            *v = r.u32()? as usize;
        }
        let [n, d, classes, z, n_train, n_seen, n_unseen] = dims;
        let size = |a: usize, b: usize| {
            a.checked_mul(b)
                .ok_or_else(|| FormatError::Invariant(format!("dimension product {a}×{b} overflows")))
        };
        let features = r.f32s(size(n, d)?)?;
        let labels = r.u32s(n)?;
        let attributes = r.f32s(size(classes, z)?)?;
        let train = r.u32s(n_train)?;
        let test_seen = r.u32s(n_seen)?;
        let test_unseen = r.u32s(n_unseen)?;
        r.finish()?;
        let matrix = |rows, cols, data, what: &str| {
            Dense2D::new(rows, cols, data).map_err(|_| FormatError::Invariant(format!("non-finite value in {what}")))
        };
        let widen = |v: Vec<u32>| v.into_iter().map(|x| x as usize).collect::<Vec<_>>();
        Self::new(
            matrix(n, d, features, "features")?,
            widen(labels),
            matrix(classes, z, attributes, "attributes")?,
            widen(train),
            widen(test_seen),
            widen(test_unseen),
        )
    }

    /// Errors when the stored dimensions disagree with a registry row.
    pub fn check_against(&self, meta: &DatasetMeta) -> Result<()> {
        let got = (self.feat_dim(), self.attr_dim(), self.num_classes());
        let want = (meta.feat_dim, meta.attr_dim, meta.classes);
        if got != want {
            return Err(FormatError::Invariant(format!(
                "{}: container has (d, z, C) = {got:?}, registry says {want:?}",
                meta.name
            ))
            .into());
        }
        Ok(())
    }
}

fn to_u32_vec(v: &[usize], what: &str) -> Result<Vec<u32>> {
    Ok(v.iter().map(|&x| to_u32(x, what)).collect::<std::result::Result<_, _>>()?)
}

fn train_count(class_size: usize) -> usize {
    ((class_size as f64 * TRAIN_FRACTION).round() as usize).clamp(1, class_size - 1)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<DatasetContainer> {
    DatasetContainer::from_bytes(&fs::read(path)?)
}

pub fn write_container(c: &DatasetContainer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, c.to_bytes()?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub feat_dim: usize,
    pub attr_dim: usize,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_seen: 20,
            n_unseen: 5,
            feat_dim: 64,
            attr_dim: 16,
            noise_sigma: 0.1,
            samples_per_class: 50,
        }
    }
}

/// Linear attribute→feature dataset. Classes `0..n_seen` are seen and split
/// per class into train / test_seen; the remaining classes go to test_unseen.
pub fn synth_dataset(spec: &SynthSpec, rng: &mut Rng) -> Result<DatasetContainer> {
    Ok(synth_dataset_with_truth(spec, rng)?.0)
}

/// [`synth_dataset`] plus the generating map `W*` (d×z), for oracle checks.
pub fn synth_dataset_with_truth(spec: &SynthSpec, rng: &mut Rng) -> Result<(DatasetContainer, Dense2D<f64>)> {
    let SynthSpec {
        n_seen,
        n_unseen,
        feat_dim: d,
        attr_dim: z,
        noise_sigma,
        samples_per_class: per_class,
    } = *spec;
    if z == 0 || d < z {
        return Err(Error::invalid(format!("synthetic data needs d >= z >= 1, got d={d}, z={z}")));
    }
    if n_seen == 0 || per_class < 2 {
        return Err(Error::invalid("synthetic data needs a seen class and at least 2 samples per class"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma {noise_sigma} must be finite and non-negative")));
    }
    let classes = n_seen + n_unseen;

    let mut attrs = Vec::with_capacity(classes * z);
    for _ in 0..classes {
        let v: Vec<f64> = (0..z).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        attrs.extend(v.iter().map(|x| x / norm));
    }
    let w_star: Vec<f64> = (0..d * z).map(|_| rng.normal()).collect();
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let a = &attrs[c * z..(c + 1) * z];
            (0..d).map(|i| (0..z).map(|j| w_star[i * z + j] * a[j]).sum()).collect()
        })
        .collect();

    let n = classes * per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let (mut train, mut test_seen, mut test_unseen) = (Vec::new(), Vec::new(), Vec::new());
    for (c, centre) in centres.iter().enumerate() {
        let first = labels.len();
        for _ in 0..per_class {
            features.extend(centre.iter().map(|&m| (m + noise_sigma * rng.normal()) as f32));
            labels.push(c);
        }
        let mut idx: Vec<usize> = (first..first + per_class).collect();
        if c < n_seen {
            rng.shuffle(&mut idx);
            let (tr, te) = idx.split_at(train_count(per_class));
            train.extend_from_slice(tr);
            test_seen.extend_from_slice(te);
        } else {
            test_unseen.extend(idx);
        }
    }
    for v in [&mut train, &mut test_seen] {
        v.sort_unstable();
    }
    let attributes: Vec<f32> = attrs.iter().map(|&a| a as f32).collect();
    let container = DatasetContainer::new(
        Dense2D::new(n, d, features)?,
        labels,
        Dense2D::new(classes, z, attributes)?,
        train,
        test_seen,
        test_unseen,
    )?;
    Ok((container, Dense2D::new(d, z, w_star)?))
}
