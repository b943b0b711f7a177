//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

use super::params::{GradStore, ParamStore};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive, got {lr}");
        Adam {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            t: 0,
            m: store.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    /// Defaults: betas (0.9, 0.999), eps 1e-8.
    pub fn with_defaults(store: &ParamStore, lr: f64) -> Self {
        Self::new(store, lr, (0.9, 0.999), 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one in-place update. Rejects non-finite gradients, naming the
    /// offending parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) -> Result<()> {
        for idx in 0..params.len() {
            let name = params.by_index(idx).name.clone();
            for &g in grads.get(idx) {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient {g} for parameter {name}"
                    )));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for idx in 0..params.len() {
            let g = grads.get(idx);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = &mut params.by_index_mut(idx).values;
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::{GradStore, ParamStore};

    /// Hand-rolled scalar Adam, written independently of the implementation
    /// above, used as the trajectory oracle.
    struct ScalarAdamOracle {
        lr: f64,
        b1: f64,
        b2: f64,
        eps: f64,
        t: u64,
        m: f64,
        v: f64,
    }

    impl ScalarAdamOracle {
        fn new(lr: f64) -> Self {
            ScalarAdamOracle { lr, b1: 0.9, b2: 0.999, eps: 1e-8, t: 0, m: 0.0, v: 0.0 }
        }

        fn step(&mut self, w: f64, g: f64) -> f64 {
            self.t += 1;
            self.m = self.b1 * self.m + (1.0 - self.b1) * g;
            self.v = self.b2 * self.v + (1.0 - self.b2) * g * g;
            let mh = self.m / (1.0 - self.b1.powi(self.t as i32));
            let vh = self.v / (1.0 - self.b2.powi(self.t as i32));
            w - self.lr * mh / (vh.sqrt() + self.eps)
        }
    }

    #[test]
    fn zero_grad_leaves_param_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", 1, 3, vec![1.0, -2.0, 3.0]);
        let grads = GradStore::zeros_like(&store);
        let mut adam = Adam::with_defaults(&store, 0.01);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("w").values, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step with unit gradient has magnitude ~lr
        let mut store = ParamStore::new();
        store.add("w", 1, 1, vec![0.5]);
        let mut grads = GradStore::zeros_like(&store);
        grads.accumulate(0, &[1.0]);
        let lr = 0.01;
        let mut adam = Adam::with_defaults(&store, lr);
        adam.step(&mut store, &grads).unwrap();
        let moved = 0.5 - store.get("w").values[0];
        assert!((moved - lr).abs() < 1e-9, "moved {moved}, expected ~{lr}");
    }

    #[test]
    fn ten_step_trajectory_matches_scalar_oracle() {
        // minimize f(w) = w^2, gradient 2w
        let lr = 0.05;
        let mut store = ParamStore::new();
        store.add("w", 1, 1, vec![1.0]);
        let mut adam = Adam::with_defaults(&store, lr);
        let mut oracle = ScalarAdamOracle::new(lr);
        let mut w_ref = 1.0;
        for _ in 0..10 {
            let mut grads = GradStore::zeros_like(&store);
            let w = store.get("w").values[0];
            grads.accumulate(0, &[2.0 * w]);
            adam.step(&mut store, &grads).unwrap();
            w_ref = oracle.step(w_ref, 2.0 * w_ref);
            assert!(
                (store.get("w").values[0] - w_ref).abs() < 1e-10,
                "diverged from oracle: {} vs {}",
                store.get("w").values[0],
                w_ref
            );
        }
    }

    #[test]
    fn non_finite_grad_is_rejected_with_name() {
        let mut store = ParamStore::new();
        store.add("w_q", 1, 1, vec![0.0]);
        let mut grads = GradStore::zeros_like(&store);
        grads.accumulate(0, &[f64::NAN]);
        let mut adam = Adam::with_defaults(&store, 0.01);
        let err = adam.step(&mut store, &grads).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("w_q"), "error should name the parameter: {msg}");
    }
}
