use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::gradnet::tensor::ParamStore;
use crate::scalar::Scalar;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Moment accumulators and hyperparameters for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed accumulators mirroring the layout of `store`.
    pub fn new(store: &ParamStore<T>, learning_rate: T) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|(_, t)| vec![T::zero(); t.len()])
            .collect();
        Self {
            learning_rate,
            beta1: T::lit(DEFAULT_BETA1),
            beta2: T::lit(DEFAULT_BETA2),
            eps: T::lit(DEFAULT_EPS),
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using the gradients held in `store`.
    ///
    /// A tensor whose gradient is missing or identically zero is left
    /// untouched, along with its moment estimates.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(dim_err!(
                "optimizer tracks {} tensors but the store has {}",
                self.first.len(),
                store.len()
            ));
        }
        for (k, t) in store.tensors_mut().iter().enumerate() {
            if t.len() != self.first[k].len() {
                return Err(dim_err!(
                    "tensor {k} has {} values but optimizer state has {}",
                    t.len(),
                    self.first[k].len()
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (k, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let Some(grad) = tensor.grad().map(<[T]>::to_vec) else {
                continue;
            };
            if grad.iter().all(|g| *g == T::zero()) {
                continue;
            }
            adam_update(
                tensor.values_mut(),
                &grad,
                &mut self.first[k],
                &mut self.second[k],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    bc1: T,
    bc2: T,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (T::one() - beta1) * g;
        v[i] = beta2 * v[i] + (T::one() - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one Adam step to `store` with the gradients it currently holds.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    state.step(store)
}
