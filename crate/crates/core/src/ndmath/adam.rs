use super::tensor::ParamStore;
use crate::error::{config, usage, Result};

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction over every tensor of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let states = params
            .iter()
            .map(|(_, t)| AdamState {
                m: vec![0.0; t.len()],
                v: vec![0.0; t.len()],
            })
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            states,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Restores saved moments and step counter; shapes must match the current layout.
    pub fn restore(&mut self, t: u64, states: Vec<AdamState>) -> Result<()> {
        if states.len() != self.states.len()
            || states
                .iter()
                .zip(&self.states)
                .any(|(a, b)| a.m.len() != b.m.len() || a.v.len() != b.v.len())
        {
            return config("optimizer state does not match parameter layout");
        }
        self.t = t;
        self.states = states;
        Ok(())
    }

    /// One update from the accumulated gradients, which are zeroed afterwards.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if !params.grads_populated() {
            return usage("adam step without populated gradients");
        }
        if self.states.len() != params.len() {
            return config("optimizer state does not match parameter layout");
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, state) in params.ids().collect::<Vec<_>>().into_iter().zip(&mut self.states) {
            let (values, grad) = params.get_mut(id).parts_mut();
            for i in 0..values.len() {
                let g = grad[i];
                state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
                state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.bump_generation();
        params.zero_grad();
        for (_, t) in params.iter() {
            super::kernels::check_finite(t.values(), "adam_step")?;
        }
        Ok(())
    }
}
