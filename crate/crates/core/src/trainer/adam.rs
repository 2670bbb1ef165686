//! Adam with per-slot learning rates.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Moment buffers for a block of parameters sharing one step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update. `lr(i)` gives the rate for slot `i`.
/// Non-finite gradients abort the step and leave `params` and `state`
/// untouched.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: impl Fn(usize) -> f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: grads.len().min(state.len()),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient slot {i} is {}", grads[i])));
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        params[i] -= lr(i) * mh / (vh.sqrt() + EPSILON);
    }
    Ok(())
}
