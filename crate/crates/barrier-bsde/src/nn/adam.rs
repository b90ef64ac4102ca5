//! Adam update rule with bias correction.

use crate::scalar::{r64, Real};

/// Optimizer state: first/second-moment accumulators shaped like the flat
/// parameter vector, plus the step counter and hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState<R: Real> {
    m: Vec<R>,
    v: Vec<R>,
    step: usize,
    pub beta1: R,
    pub beta2: R,
    pub epsilon: R,
    pub learning_rate: R,
}

impl<R: Real> AdamState<R> {
    /// Fresh state with the defaults of the optimizer everyone means by
    /// "Adam": beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(n_params: usize, learning_rate: R) -> Self {
        Self {
            m: vec![R::zero(); n_params],
            v: vec![R::zero(); n_params],
            step: 0,
            beta1: r64(0.9),
            beta2: r64(0.999),
            epsilon: r64(1e-8),
            learning_rate,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One Adam step over flat parameter/gradient slices:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<R: Real>(state: &mut AdamState<R>, params: &mut [R], grads: &[R]) {
    assert_eq!(params.len(), state.m.len(), "parameter shape mismatch");
    assert_eq!(grads.len(), state.m.len(), "gradient shape mismatch");

    state.step += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let one = R::one();
    let bc1 = one - b1.powi(state.step as i32);
    let bc2 = one - b2.powi(state.step as i32);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::<f64>::new(3, 0.01);
        let mut params = vec![1.0, -2.0, 0.5];
        adam_step(&mut state, &mut params, &[0.0, 0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // Bias correction gives m_hat = 1, v_hat = 1: the update is
        // -lr / (1 + eps).
        let mut state = AdamState::<f64>::new(1, 0.01);
        let mut params = vec![0.0];
        adam_step(&mut state, &mut params, &[1.0]);
        assert!((params[0] + 0.01).abs() < 1e-9, "got {}", params[0]);
    }

    #[test]
    fn constant_gradient_step_size_approaches_lr() {
        let mut state = AdamState::<f64>::new(1, 0.01);
        let mut params = vec![10.0];
        let mut prev = params[0];
        let mut last_step = 0.0;
        for _ in 0..500 {
            adam_step(&mut state, &mut params, &[3.5]);
            last_step = prev - params[0];
            prev = params[0];
        }
        assert!(
            (last_step - 0.01).abs() < 1e-6,
            "step magnitude {last_step} should approach lr"
        );
    }

    #[test]
    fn negative_gradient_moves_parameters_up() {
        let mut state = AdamState::<f64>::new(1, 0.1);
        let mut params = vec![0.0];
        adam_step(&mut state, &mut params, &[-2.0]);
        assert!(params[0] > 0.0);
    }
}
