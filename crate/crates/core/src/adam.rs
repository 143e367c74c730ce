//! Bias-corrected Adam with the standard defaults.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Matrix,
    second: Matrix,
}

/// Optimizer state; slots are positional, so callers must pass parameters in
/// the same order on every step.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamParams,
    step: u64,
    slots: Vec<Moments>,
}

impl AdamState {
    pub fn new(hyper: AdamParams) -> Self {
        AdamState {
            hyper,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a parameter list, in place.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[&Matrix],
    state: &mut AdamState,
    lr: f32,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::contract(format!(
            "adam_step: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    if lr <= 0.0 {
        return Err(Error::contract(format!("adam_step: lr {lr} <= 0")));
    }
    if state.slots.is_empty() {
        state.slots = params
            .iter()
            .map(|p| Moments {
                first: Matrix::zeros(p.rows(), p.cols()),
                second: Matrix::zeros(p.rows(), p.cols()),
            })
            .collect();
    }
    if state.slots.len() != params.len() {
        return Err(Error::contract(format!(
            "adam_step: state has {} slots, got {} params",
            state.slots.len(),
            params.len()
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let AdamParams {
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for ((param, grad), slot) in params.iter_mut().zip(grads.iter()).zip(state.slots.iter_mut()) {
        if param.shape() != grad.shape() || param.shape() != slot.first.shape() {
            return Err(Error::contract(format!(
                "adam_step: shapes {:?} / {:?} / {:?}",
                param.shape(),
                grad.shape(),
                slot.first.shape()
            )));
        }
        let p = param.data_mut();
        let g = grad.data();
        let m = slot.first.data_mut();
        let v = slot.second.data_mut();
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Matrix::row_vector(vec![1.0, -2.0, 0.5]);
        let g = Matrix::zeros(1, 3);
        let mut state = AdamState::new(AdamParams::default());
        let before = p.clone();
        adam_step(&mut [&mut p], &[&g], &mut state, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_is_minus_lr() {
        // Hand recurrence: m1 = 0.1, v1 = 1e-3, bias correction gives
        // m_hat = v_hat = 1, so delta = -lr / (1 + eps) ~ -lr.
        let mut p = Matrix::filled(1, 1, 0.0);
        let g = Matrix::filled(1, 1, 1.0);
        let mut state = AdamState::new(AdamParams::default());
        adam_step(&mut [&mut p], &[&g], &mut state, 0.1).unwrap();
        assert!((p.scalar() + 0.1).abs() < 1e-6, "delta {}", p.scalar());
    }

    #[test]
    fn repeated_gradient_does_not_grow_steps() {
        let mut p = Matrix::filled(1, 1, 0.0);
        let g = Matrix::filled(1, 1, 0.7);
        let mut state = AdamState::new(AdamParams::default());
        adam_step(&mut [&mut p], &[&g], &mut state, 0.01).unwrap();
        let d1 = p.scalar().abs();
        let prev = p.scalar();
        adam_step(&mut [&mut p], &[&g], &mut state, 0.01).unwrap();
        let d2 = (p.scalar() - prev).abs();
        assert!(d2 <= d1 + 1e-9, "d1={d1} d2={d2}");
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 3);
        let mut state = AdamState::new(AdamParams::default());
        let r = adam_step(&mut [&mut p], &[&g], &mut state, 0.1);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
