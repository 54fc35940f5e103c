use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{PacerError, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn for_params(params: &ParamVector) -> Self {
        AdamState::new(params.len())
    }
}

/// One bias-corrected Adam update, in place.
///
/// Fails without touching `params` or `state` if any gradient entry is not
/// finite; the error names the layer holding the first offending entry.
pub fn adam_step(params: &mut ParamVector, grads: &ParamVector, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(PacerError::config(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(PacerError::config(format!(
            "adam size mismatch: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(PacerError::training(
            grads.layer_name_at(i),
            format!("non-finite gradient {} at flat index {i}", grads.values()[i]),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}
