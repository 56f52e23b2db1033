//! Adam, the inner adaptation loop, the Reptile outer update and the meta
//! learning-rate schedule.
//!
//! Everything here works on flat parameter vectors so it stays independent
//! of the network layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

/// Moment estimates of the Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

fn check_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Length { op, expected, got });
    }
    Ok(())
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(params: &mut [T], grad: &[T], state: &mut AdamState<T>, lr: T) -> Result<()> {
    check_len("adam_step", params.len(), grad.len())?;
    check_len("adam_step", params.len(), state.len())?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("adam_step"));
    }
    Ok(())
}

pub fn sgd_step<T: Real>(params: &mut [T], grad: &[T], lr: T) -> Result<()> {
    check_len("sgd_step", params.len(), grad.len())?;
    for (p, &g) in params.iter_mut().zip(grad) {
        *p = *p - lr * g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaUpdate {
    /// Adam over the pseudo-gradient `θ − θ̃`.
    Adam,
    /// `θ ← θ − η(θ − θ̃)`.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSchedule {
    /// Meta learning rate at epoch 0.
    pub meta_lr: f64,
    /// Constant inner-loop learning rate.
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub epochs: usize,
    pub inner_optimizer: InnerOptimizer,
    pub meta_update: MetaUpdate,
}

impl Default for MetaSchedule {
    fn default() -> Self {
        Self {
            meta_lr: 0.001,
            inner_lr: 0.0001,
            inner_steps: 5,
            epochs: 200,
            inner_optimizer: InnerOptimizer::Adam,
            meta_update: MetaUpdate::Adam,
        }
    }
}

impl MetaSchedule {
    /// `η₀ · (1 − e/(E−1))`, reaching 0 at the last epoch. A single-epoch
    /// schedule keeps `η₀`.
    pub fn meta_lr(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.epochs
            )));
        }
        if self.epochs == 1 {
            return Ok(self.meta_lr);
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        Ok((self.meta_lr * (1.0 - frac)).max(0.0))
    }
}

/// Runs `steps` optimizer steps on a copy of `params` and returns the adapted
/// parameters. `loss_grad` maps parameters to `(loss, gradient)`. Adam starts
/// from a fresh state on every call.
pub fn inner_loop<T, F>(params: &[T], mut loss_grad: F, steps: usize, lr: T, optimizer: InnerOptimizer) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let mut adapted = params.to_vec();
    let mut state = AdamState::new(params.len());
    for _ in 0..steps {
        let (loss, grad) = loss_grad(&adapted)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("inner_loop loss"));
        }
        match optimizer {
            InnerOptimizer::Adam => adam_step(&mut adapted, &grad, &mut state, lr)?,
            InnerOptimizer::Sgd => sgd_step(&mut adapted, &grad, lr)?,
        }
    }
    Ok(adapted)
}

/// Reptile update treating `θ − θ̃` as the gradient.
pub fn reptile_outer_step<T: Real>(
    theta: &mut [T],
    adapted: &[T],
    meta_state: &mut AdamState<T>,
    lr: T,
    mode: MetaUpdate,
) -> Result<()> {
    check_len("reptile_outer_step", theta.len(), adapted.len())?;
    let pseudo_grad: Vec<T> = theta.iter().zip(adapted).map(|(&a, &b)| a - b).collect();
    match mode {
        MetaUpdate::Adam => adam_step(theta, &pseudo_grad, meta_state, lr),
        MetaUpdate::Plain => sgd_step(theta, &pseudo_grad, lr),
    }
}
