use serde::{Deserialize, Serialize};

use super::tensor::ParamRegistry;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        OptimizerState {
            lr,
            weight_decay,
            betas: (0.9, 0.999),
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_betas(mut self, b1: f64, b2: f64) -> Self {
        self.betas = (b1, b2);
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }
}

/// One AdamW update over every registered parameter. Gradients are left in place.
pub fn adamw_step(registry: &mut ParamRegistry, state: &mut OptimizerState) -> Result<()> {
    if let Some((name, _)) = registry.iter().find(|(_, t)| t.grad.is_none()) {
        return Err(Error::Contract(format!("parameter {name} has no gradient")));
    }
    if state.first.len() != registry.len() {
        state.first = registry.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let (b1, b2) = state.betas;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let (lr, wd, eps) = (state.lr, state.weight_decay, state.eps);
    for ((_, t), (m, v)) in registry
        .iter_mut()
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let g = t.grad.as_ref().unwrap();
        for i in 0..t.data.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            t.data[i] *= 1.0 - lr * wd;
            t.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Exponential decay applied once per epoch.
pub fn lr_exponential_step(lr: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(lr * gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn one_param(w: f64, g: f64) -> ParamRegistry {
        let mut r = ParamRegistry::new(0);
        let id = r.insert("w", Tensor::scalar(w)).unwrap();
        r.get_mut(id).grad = Some(vec![g]);
        r
    }

    #[test]
    fn zero_grad_no_decay_keeps_weight() {
        let mut r = one_param(1.0, 0.0);
        let mut s = OptimizerState::new(0.1, 0.0);
        adamw_step(&mut r, &mut s).unwrap();
        assert_eq!(r.by_name("w").unwrap().data[0], 1.0);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut r = one_param(1.0, 1.0);
        let mut s = OptimizerState::new(0.1, 0.0);
        adamw_step(&mut r, &mut s).unwrap();
        // m̂ = 1, v̂ = 1 at step 1
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((r.by_name("w").unwrap().data[0] - expected).abs() < 1e-15);
        assert!((r.by_name("w").unwrap().data[0] - 0.9).abs() < 1e-8);
        // grads untouched
        assert_eq!(r.by_name("w").unwrap().grad.as_deref(), Some(&[1.0][..]));
    }

    #[test]
    fn decoupled_decay() {
        let mut r = one_param(1.0, 0.0);
        let mut s = OptimizerState::new(0.1, 0.1);
        adamw_step(&mut r, &mut s).unwrap();
        assert!((r.by_name("w").unwrap().data[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_names_param() {
        let mut r = ParamRegistry::new(0);
        r.insert("theta_s", Tensor::scalar(1.0)).unwrap();
        let err = adamw_step(&mut r, &mut OptimizerState::new(0.1, 0.0)).unwrap_err();
        assert!(err.to_string().contains("theta_s"));
    }

    #[test]
    fn exponential_schedule() {
        let l1 = lr_exponential_step(1e-4, 0.95).unwrap();
        assert!((l1 - 9.5e-5).abs() < 1e-18);
        let l2 = lr_exponential_step(l1, 0.95).unwrap();
        assert!((l2 - 9.025e-5).abs() < 1e-18);
        assert_eq!(lr_exponential_step(3e-4, 1.0).unwrap(), 3e-4);
        assert!(lr_exponential_step(1e-4, 0.0).unwrap_err().is_config());
        assert!(lr_exponential_step(1e-4, -0.5).unwrap_err().is_config());
    }
}
