//! First-order optimisers.

use super::{shape_err, Tensor, TensorError};
use crate::scalar::Real;

fn check_shapes<T: Real>(params: &[Tensor<T>], grads: &[Tensor<T>], op: &'static str) -> Result<(), TensorError> {
    if params.len() != grads.len() {
        return Err(shape_err(op, format!("{} params, {} grads", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    Ok(())
}

/// Momentum buffers for [`sgd_step`].
#[derive(Debug, Clone, Default)]
pub struct SgdState<T> {
    velocity: Vec<Tensor<T>>,
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut SgdState<T>,
    lr: T,
    momentum: T,
) -> Result<(), TensorError> {
    check_shapes(params, grads, "sgd_step")?;
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Moment estimates for [`adam_step`].
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T> AdamState<T> {
    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) -> Result<(), TensorError> {
    check_shapes(params, grads, "adam_step")?;
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::one() - beta1.powi(t);
    let c2 = T::one() - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = beta1 * *mv + (T::one() - beta1) * gv;
            *vv = beta2 * *vv + (T::one() - beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam with its hyperparameters bundled.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            state: AdamState {
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<(), TensorError> {
        adam_step(params, grads, &mut self.state, self.lr, self.beta1, self.beta2, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = one(1.0);
        sgd_step(&mut p, &one(2.0), &mut SgdState::default(), 0.0, 0.9).unwrap();
        assert_eq!(p[0].item(), 1.0);
        let mut state = AdamState::default();
        adam_step(&mut p, &one(2.0), &mut state, 0.0, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p[0].item(), 1.0);
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = one(1.0);
        sgd_step(&mut p, &one(2.0), &mut SgdState::default(), 0.1, 0.0).unwrap();
        assert!((p[0].item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut p = one(0.0);
        let mut s = SgdState::default();
        sgd_step(&mut p, &one(1.0), &mut s, 1.0, 0.5).unwrap();
        sgd_step(&mut p, &one(1.0), &mut s, 1.0, 0.5).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(p[0].item(), -2.5);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        for g in [1e-3, 2.0, 250.0] {
            let mut p = one(1.0);
            let mut s = AdamState::default();
            adam_step(&mut p, &one(g), &mut s, 0.01, 0.9, 0.999, 1e-8).unwrap();
            assert!((p[0].item() - 0.99).abs() < 1e-6, "g = {}", g);
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = vec![Tensor::<f64>::zeros(&[2])];
        let g = vec![Tensor::<f64>::zeros(&[3])];
        assert!(sgd_step(&mut p, &g, &mut SgdState::default(), 0.1, 0.0).is_err());
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), 0.1, 0.9, 0.999, 1e-8).is_err());
    }
}
