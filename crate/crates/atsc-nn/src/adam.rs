//! Adaptive-moment gradient step over a [`ParamStore`].

use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::{NnError, Result};

/// First/second moment accumulators, aligned with a store's registration
/// order, plus the shared step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let m = store
            .iter()
            .map(|(_, p)| vec![S::zero(); p.values.len()])
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    /// One bias-corrected update from the store's current gradient
    /// buffers. Gradients are left untouched; callers zero them when
    /// starting the next accumulation.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(NnError::BadParam(format!(
                "optimizer tracks {} params, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let b1 = lit::<S>(self.beta1);
        let b2 = lit::<S>(self.beta2);
        let one = S::one();
        let bc1 = lit::<S>(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = lit::<S>(1.0 - self.beta2.powi(self.step as i32));
        let lr = lit::<S>(self.lr);
        let eps = lit::<S>(self.eps);
        for i in 0..store.len() {
            let p = store.get_mut(crate::ParamId(i));
            if p.grad.len() != self.m[i].len() {
                return Err(NnError::BadParam(format!(
                    "moment shape mismatch at {}",
                    p.name
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.values.len() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.values[j] = p.values[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", 1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = AdamState::new(&store, 1e-3);
        let before = store.get(crate::ParamId(0)).values.clone();
        for _ in 0..10 {
            opt.step(&mut store).unwrap();
        }
        assert_eq!(store.get(crate::ParamId(0)).values, before);
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        // With g constant, bias-corrected m/sqrt(v) -> 1, so |delta| -> lr.
        let mut store = ParamStore::<f64>::new();
        store.add("w", 1, 1, vec![0.0]).unwrap();
        let mut opt = AdamState::new(&store, 1e-3);
        let mut prev = 0.0;
        let mut delta = 0.0;
        for _ in 0..5000 {
            store.get_mut(crate::ParamId(0)).grad[0] = 3.7;
            opt.step(&mut store).unwrap();
            let cur = store.get(crate::ParamId(0)).values[0];
            delta = (cur - prev).abs();
            prev = cur;
        }
        assert!((delta - 1e-3).abs() < 1e-5, "delta={delta}");
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", 1, 1, vec![0.0]).unwrap();
        let mut opt = AdamState::new(&store, 1e-3);
        assert_eq!(opt.step, 0);
        opt.step(&mut store).unwrap();
        assert_eq!(opt.step, 1);
        opt.step(&mut store).unwrap();
        assert_eq!(opt.step, 2);
    }
}
