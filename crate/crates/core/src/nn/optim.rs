use serde::{Deserialize, Serialize};

use super::store::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    /// Adam with bias-corrected moment estimates.
    AdamLike,
}

/// First-order optimizer with its moment buffers.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies the accumulated gradients and clears them.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64) -> Result<()> {
        if let Some(i) = store.grads().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of {} is not finite",
                store.describe(i)
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                let (_, grads) = store.split_mut();
                let grads = grads.to_vec();
                for (p, g) in store.values_mut().iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::AdamLike => {
                if self.m.len() != store.len() {
                    self.m = vec![0.0; store.len()];
                    self.v = vec![0.0; store.len()];
                    self.step = 0;
                }
                self.step += 1;
                let bc1 = 1.0 - self.beta1.powi(self.step as i32);
                let bc2 = 1.0 - self.beta2.powi(self.step as i32);
                let grads = store.grads().to_vec();
                let values = store.values_mut();
                for i in 0..values.len() {
                    let g = grads[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.alloc("w", &[1]);
        s.values_mut()[0] = w;
        s
    }

    #[test]
    fn sgd_zero_lr_is_noop() {
        let mut s = scalar(1.0);
        s.grads_mut()[0] = 3.0;
        Optimizer::new(OptimizerKind::Sgd).step(&mut s, 0.0).unwrap();
        assert_eq!(s.values()[0], 1.0);
        assert_eq!(s.grads()[0], 0.0);
    }

    #[test]
    fn sgd_on_square() {
        // f(w) = w^2, f'(1) = 2 -> 1 - 0.1 * 2
        let mut s = scalar(1.0);
        s.grads_mut()[0] = 2.0;
        Optimizer::new(OptimizerKind::Sgd).step(&mut s, 0.1).unwrap();
        assert!((s.values()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-4, 1.0, 1e4] {
            let mut s = scalar(0.0);
            s.grads_mut()[0] = scale;
            Optimizer::new(OptimizerKind::AdamLike).step(&mut s, 0.01).unwrap();
            assert!((s.values()[0] + 0.01).abs() < 1e-6, "scale {scale}: {}", s.values()[0]);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut s = scalar(0.0);
        s.grads_mut()[0] = f64::NAN;
        assert!(matches!(
            Optimizer::new(OptimizerKind::AdamLike).step(&mut s, 0.1),
            Err(Error::Numeric(_))
        ));
    }
}
