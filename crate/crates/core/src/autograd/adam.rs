use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// # Panics
/// If `params`, `grads` and the state have different lengths.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    if state.m.is_empty() && !params.is_empty() {
        *state = AdamState::new(params.len());
    }
    assert_eq!(state.m.len(), params.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i].to_f64_lossy();
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let delta = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        params[i] = T::of(params[i].to_f64_lossy() - delta);
    }
}

/// Adam over a whole [`ParamStore`], reading the stored gradients.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            states: Vec::new(),
        }
    }

    /// Updates every parameter that has a gradient, scaled by `grad_scale`
    /// (e.g. `1 / batch` to average accumulated gradients).
    pub fn step<T: Scalar>(&mut self, params: &mut ParamStore<T>, grad_scale: f64) {
        if self.states.len() != params.len() {
            self.states = params
                .tensors()
                .iter()
                .map(|t| AdamState::new(t.numel()))
                .collect();
        }
        for (tensor, state) in params.tensors_mut().iter_mut().zip(&mut self.states) {
            let Some(g) = tensor.grad() else { continue };
            let g: Vec<T> = g.iter().map(|&v| v * T::of(grad_scale)).collect();
            adam_step(tensor.data_mut(), &g, state, &self.config);
        }
    }
}
