//! Adam and plain SGD over a [`ParamSet`].
//!
//! Only parameters flagged trainable are updated; buffers (for example
//! batch-norm running statistics) are left untouched.

use crate::error::{shape_err, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

fn check_shapes(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return shape_err(
            "optimizer",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        );
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return shape_err(
                "optimizer",
                format!("{}: param {:?} grad {:?}", p.name, p.value.shape(), g.shape()),
            );
        }
    }
    Ok(())
}

impl Adam {
    /// One bias-corrected Adam update at learning rate `lr`.
    pub fn step(&self, params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
        check_shapes(params, grads)?;
        if state.m.len() != params.len() {
            return shape_err("adam", "state does not match parameter set");
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            if !params.entry(i).trainable {
                continue;
            }
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            let w = params.value_mut(i).data_mut();
            for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent: `w <- w - lr * g`.
pub fn sgd_step(params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (i, g) in grads.iter().enumerate() {
        if !params.entry(i).trainable {
            continue;
        }
        for (w, &g) in params.value_mut(i).data_mut().iter_mut().zip(g.data()) {
            *w -= lr * g;
        }
    }
    Ok(())
}
