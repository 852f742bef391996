use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};
use crate::{Error, Result};

/// Adam moments and hyperparameters for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> OptimState<T> {
    /// Zeroed moments with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.entries().iter().map(|e| vec![T::zero(); e.values.len()]).collect();
        OptimState {
            first_moment: zeros(),
            second_moment: zeros(),
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    /// Checks that the moment layout matches `store`.
    pub fn validate(&self, store: &ParamStore<T>) -> Result<()> {
        let ok = self.first_moment.len() == store.len()
            && self.second_moment.len() == store.len()
            && store.entries().iter().enumerate().all(|(i, e)| {
                self.first_moment[i].len() == e.values.len() && self.second_moment[i].len() == e.values.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::shape("optimizer moments do not match the parameter store"))
        }
    }
}

/// One bias-corrected Adam update using the gradients held in `store`.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut OptimState<T>) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let one = T::one();
    let lr = T::from_f64_lossy(state.lr);
    let eps = T::from_f64_lossy(state.eps);
    let bc1 = T::from_f64_lossy(1.0 - state.beta1.powi(t));
    let bc2 = T::from_f64_lossy(1.0 - state.beta2.powi(t));

    for (i, entry) in store.entries_mut().iter_mut().enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (((p, &g), m), v) in entry.values.iter_mut().zip(&entry.grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
