//! Reptile on the classic sinusoid-regression family, with a small tanh MLP.

use mczsl_core::optim::{inner_loop, reptile_outer_step, AdamState, InnerOptimizer, MetaUpdate};
use mczsl_core::{Result, Rng};

const HIDDEN: usize = 32;
const PARAMS: usize = 3 * HIDDEN + 1;
const SHOTS: usize = 10;
const INNER_STEPS: usize = 5;
const INNER_LR: f64 = 0.02;

struct Task {
    amp: f64,
    phase: f64,
}

impl Task {
    fn sample(rng: &mut Rng) -> Self {
        Self {
            amp: rng.uniform_in(0.1, 5.0),
            phase: rng.uniform_in(0.0, std::f64::consts::PI),
        }
    }

    fn points(&self, n: usize, rng: &mut Rng) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| {
                let x = rng.uniform_in(-5.0, 5.0);
                (x, self.amp * (x + self.phase).sin())
            })
            .collect()
    }
}

// layout: w1[H], b1[H], w2[H], b2
fn predict(p: &[f64], x: f64) -> f64 {
    let (w1, rest) = p.split_at(HIDDEN);
    let (b1, rest) = rest.split_at(HIDDEN);
    let (w2, b2) = rest.split_at(HIDDEN);
    (0..HIDDEN).map(|j| w2[j] * (w1[j] * x + b1[j]).tanh()).sum::<f64>() + b2[0]
}

fn mse_and_grad(p: &[f64], pts: &[(f64, f64)]) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; PARAMS];
    let mut loss = 0.0;
    let n = pts.len() as f64;
    for &(x, y) in pts {
        let h: Vec<f64> = (0..HIDDEN).map(|j| (p[j] * x + p[HIDDEN + j]).tanh()).collect();
        let out = (0..HIDDEN).map(|j| p[2 * HIDDEN + j] * h[j]).sum::<f64>() + p[3 * HIDDEN];
        let e = out - y;
        loss += e * e / n;
        let d = 2.0 * e / n;
        for j in 0..HIDDEN {
            let dh = d * p[2 * HIDDEN + j] * (1.0 - h[j] * h[j]);
            g[j] += dh * x;
            g[HIDDEN + j] += dh;
            g[2 * HIDDEN + j] += d * h[j];
        }
        g[3 * HIDDEN] += d;
    }
    Ok((loss, g))
}

fn adapted_loss(init: &[f64], task: &Task, rng: &mut Rng) -> f64 {
    let support = task.points(SHOTS, rng);
    let query = task.points(50, rng);
    let adapted = inner_loop(init, |p: &[f64]| mse_and_grad(p, &support), INNER_STEPS, INNER_LR, InnerOptimizer::Sgd).unwrap();
    query.iter().map(|&(x, y)| (predict(&adapted, x) - y).powi(2)).sum::<f64>() / query.len() as f64
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = Rng::seed_from(1);
    let p: Vec<f64> = (0..PARAMS).map(|_| rng.normal() * 0.5).collect();
    let pts = Task::sample(&mut rng).points(4, &mut rng);
    let (_, g) = mse_and_grad(&p, &pts).unwrap();
    for k in 0..PARAMS {
        let h = 1e-6;
        let mut a = p.clone();
        let mut b = p.clone();
        a[k] += h;
        b[k] -= h;
        let num = (mse_and_grad(&a, &pts).unwrap().0 - mse_and_grad(&b, &pts).unwrap().0) / (2.0 * h);
        assert!((num - g[k]).abs() < 1e-6 * (1.0 + num.abs()), "param {k}: {num} vs {}", g[k]);
    }
}

#[test]
fn meta_learned_init_adapts_better_than_random_init() {
    let mut rng = Rng::seed_from(2);
    let init: Vec<f64> = (0..PARAMS).map(|_| rng.normal() * 0.5).collect();
    let mut theta = init.clone();
    let mut state = AdamState::new(PARAMS);
    let iterations = 3000;
    for it in 0..iterations {
        let task = Task::sample(&mut rng);
        let pts = task.points(SHOTS, &mut rng);
        let adapted = inner_loop(&theta, |p: &[f64]| mse_and_grad(p, &pts), INNER_STEPS, INNER_LR, InnerOptimizer::Sgd).unwrap();
        let lr = 0.1 * (1.0 - it as f64 / iterations as f64);
        reptile_outer_step(&mut theta, &adapted, &mut state, lr, MetaUpdate::Plain).unwrap();
    }

    let mut eval_rng = Rng::seed_from(3);
    let tasks: Vec<Task> = (0..100).map(|_| Task::sample(&mut eval_rng)).collect();
    let mut a = Rng::seed_from(4);
    let mut b = Rng::seed_from(4);
    let meta: f64 = tasks.iter().map(|t| adapted_loss(&theta, t, &mut a)).sum::<f64>() / tasks.len() as f64;
    let random: f64 = tasks.iter().map(|t| adapted_loss(&init, t, &mut b)).sum::<f64>() / tasks.len() as f64;
    assert!(meta < 0.8 * random, "meta-init loss {meta:.3} vs random-init {random:.3}");
}
