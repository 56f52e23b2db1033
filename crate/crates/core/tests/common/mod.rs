//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mczsl_core::data::DatasetContainer;
use mczsl_core::{Dense2D, Result, Rng};

/// Random container whose feature rows are `[label, sample id]`.
///
/// Classes `0..seen` get training samples; the rest only test samples. With
/// `train_everywhere` every class gets training samples.
pub fn random_container(rng: &mut Rng, classes: usize, seen: usize, train_everywhere: bool) -> DatasetContainer {
    let mut labels = Vec::new();
    let (mut train, mut test_seen, mut test_unseen) = (vec![], vec![], vec![]);
    for c in 0..classes {
        let has_train = c < seen || train_everywhere;
        let n_test = 1 + rng.below(4);
        let n_train = if has_train { 1 + rng.below(3) } else { 0 };
        for k in 0..n_test + n_train {
            let i = labels.len();
            labels.push(c);
            if k < n_train {
                train.push(i);
            } else if c < seen {
                test_seen.push(i);
            } else {
                test_unseen.push(i);
            }
        }
    }
    let rows: Vec<Vec<f32>> = labels.iter().enumerate().map(|(i, &l)| vec![l as f32, i as f32]).collect();
    DatasetContainer::new(
        Dense2D::from_rows(&rows).unwrap(),
        labels,
        Dense2D::filled(classes, 2, 0.5),
        train,
        test_seen,
        test_unseen,
    )
    .unwrap()
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-sample guesser: right about half the time when the true
/// class is a candidate, otherwise a pseudo-random candidate.
pub fn guess(label: usize, sample: usize, candidates: &[usize], salt: u64) -> usize {
    let mut h = mix(salt ^ (sample as u64).wrapping_mul(0x1000_0001));
    for &c in candidates {
        h = mix(h ^ c as u64);
    }
    if h.is_multiple_of(2) && candidates.contains(&label) {
        label
    } else {
        candidates[(h / 2 % candidates.len() as u64) as usize]
    }
}

pub fn guesser(salt: u64) -> impl Fn(&Dense2D<f32>, &[usize]) -> Result<Vec<usize>> {
    move |x: &Dense2D<f32>, cands: &[usize]| {
        Ok((0..x.rows())
            .map(|i| guess(x.get(i, 0) as usize, x.get(i, 1) as usize, cands, salt))
            .collect())
    }
}

/// Mean over classes in `classes` that have samples in `samples`, of the hit
/// rate of `predict`, in percent. `None` when no class has samples.
pub fn brute_accuracy(
    data: &DatasetContainer,
    samples: &[usize],
    classes: &[usize],
    predict: &dyn Fn(usize) -> usize,
) -> Option<f64> {
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &i in samples {
        let l = data.labels[i];
        if classes.contains(&l) {
            let e = hits.entry(l).or_insert((0, 0));
            e.1 += 1;
            if predict(i) == l {
                e.0 += 1;
            }
        }
    }
    if hits.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for (h, n) in hits.values() {
        sum += *h as f64 / *n as f64;
    }
    Some(100.0 * sum / hits.len() as f64)
}

fn harmonic(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Group sizes with the remainder on the last groups.
pub fn group_sizes(total: usize, k: usize) -> Vec<usize> {
    let mut sizes = vec![total / k; k];
    for i in 0..total % k {
        sizes[k - 1 - i] += 1;
    }
    sizes
}

fn groups(classes: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![];
    let mut rest = classes;
    for s in group_sizes(classes.len(), k) {
        out.push(rest[..s].to_vec());
        rest = &rest[s..];
    }
    out
}

/// Aggregated (mSA, mUA, mH) written directly from the fixed-protocol
/// definitions: seen accuracy over classes seen so far, unseen accuracy over
/// the classes still unseen, harmonic mean of both scored against all classes.
pub fn brute_fixed(data: &DatasetContainer, k: usize, salt: u64) -> (f64, f64, f64) {
    let all: Vec<usize> = (0..data.num_classes()).collect();
    let g = groups(&all, k);
    let test: Vec<usize> = (0..data.len()).filter(|i| !data.train.contains(i)).collect();
    let (mut s_sum, mut u_sum, mut h_sum) = (0.0, 0.0, 0.0);
    for i in 1..k {
        let seen: Vec<usize> = g[..i].concat();
        let unseen: Vec<usize> = g[i..].concat();
        let p = |cands: Vec<usize>| move |s: usize| guess(data.labels[s], s, &cands, salt);
        s_sum += brute_accuracy(data, &test, &seen, &p(seen.clone())).unwrap();
        u_sum += brute_accuracy(data, &test, &unseen, &p(unseen.clone())).unwrap();
        let hs = brute_accuracy(data, &test, &seen, &p(all.clone())).unwrap();
        let hu = brute_accuracy(data, &test, &unseen, &p(all.clone())).unwrap();
        h_sum += harmonic(hs, hu);
    }
    let n = (k - 1) as f64;
    (s_sum / n, u_sum / n, h_sum / n)
}

/// Dynamic-protocol counterpart: cumulative seen and unseen sets, scored
/// over all `k` tasks, combined score against the classes introduced so far.
pub fn brute_dynamic(data: &DatasetContainer, seen_total: usize, k: usize, salt: u64) -> (f64, f64, f64) {
    let seen_all: Vec<usize> = (0..seen_total).collect();
    let unseen_all: Vec<usize> = (seen_total..data.num_classes()).collect();
    let (gs, gu) = (groups(&seen_all, k), groups(&unseen_all, k));
    let test: Vec<usize> = (0..data.len()).filter(|i| !data.train.contains(i)).collect();
    let (mut s_sum, mut u_sum, mut h_sum) = (0.0, 0.0, 0.0);
    for i in 1..=k {
        let seen: Vec<usize> = gs[..i].concat();
        let unseen: Vec<usize> = gu[..i].concat();
        let mut both = [seen.clone(), unseen.clone()].concat();
        both.sort_unstable();
        let p = |cands: Vec<usize>| move |s: usize| guess(data.labels[s], s, &cands, salt);
        s_sum += brute_accuracy(data, &test, &seen, &p(seen.clone())).unwrap();
        u_sum += brute_accuracy(data, &test, &unseen, &p(unseen.clone())).unwrap();
        let hs = brute_accuracy(data, &test, &seen, &p(both.clone())).unwrap();
        let hu = brute_accuracy(data, &test, &unseen, &p(both.clone())).unwrap();
        h_sum += harmonic(hs, hu);
    }
    let n = k as f64;
    (s_sum / n, u_sum / n, h_sum / n)
}
