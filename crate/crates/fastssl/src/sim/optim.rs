//! SGD with momentum and coupled weight decay.
//!
//! Update rule (descent form): `mu <- beta * mu - lr * (g + wd * theta)`,
//! then `theta <- theta + mu`. The momentum buffer mirrors the parameter
//! shapes and starts at zero.

use super::model::ModelParams;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    pub params: ModelParams<S>,
    pub momentum: ModelParams<S>,
    pub weight_decay: f64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: ModelParams<S>, weight_decay: f64) -> Self {
        let momentum = params.zeros_like();
        OptimizerState {
            params,
            momentum,
            weight_decay,
        }
    }
}

/// Apply one momentum-SGD step in place.
pub fn sgd_momentum_step<S: Scalar>(
    state: &mut OptimizerState<S>,
    grads: &ModelParams<S>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let wd = S::from_f64_val(state.weight_decay);
    let lr_s = S::from_f64_val(lr);
    let beta = S::from_f64_val(momentum);
    let grad_tensors = grads.named_tensors();
    let mut buffers = state.momentum.named_tensors_mut();
    let mut params = state.params.named_tensors_mut();
    if grad_tensors.len() != params.len() {
        return Err(Error::invalid("gradient container does not match parameters"));
    }
    for (((name, grad), (_, buf)), (_, theta)) in grad_tensors
        .iter()
        .zip(buffers.iter_mut())
        .zip(params.iter_mut())
    {
        if grad.shape() != theta.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("gradient for {name}"),
                expected: theta.shape().to_vec(),
                actual: grad.shape().to_vec(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::non_finite(format!("gradient for {name}")));
        }
        for ((m, &g), t) in buf
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(theta.data_mut())
        {
            *m = beta * *m - lr_s * (g + wd * *t);
            *t += *m;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::model::ModelSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_state() -> (OptimizerState<f64>, ModelParams<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModelSpec {
            in_channels: 3,
            conv_channels: [2, 2, 2],
            proj_hidden: 4,
            embed_dim: 4,
            pred_hidden: 2,
        };
        let params = ModelParams::<f64>::init(spec, &mut rng);
        let mut grads = params.zeros_like();
        for (_, t) in grads.named_tensors_mut() {
            t.fill(1.0);
        }
        (OptimizerState::new(params, 0.0), grads)
    }

    #[test]
    fn momentum_free_step_is_vanilla_sgd() {
        let (mut state, grads) = tiny_state();
        let before: Vec<f64> = state.params.named_tensors()[0].1.data().to_vec();
        sgd_momentum_step(&mut state, &grads, 0.1, 0.0).unwrap();
        let after = state.params.named_tensors()[0].1.data().to_vec();
        for (b, a) in before.iter().zip(&after) {
            assert!((a - (b - 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_steps_with_constant_gradient_match_the_unrolled_recurrence() {
        // mu1 = -lr g; theta1 = theta0 - lr g
        // mu2 = beta mu1 - lr g; theta2 = theta0 - lr g (2 + beta)
        let (mut state, grads) = tiny_state();
        let lr = 0.05;
        let beta = 0.9;
        let before: Vec<f64> = state.params.named_tensors()[0].1.data().to_vec();
        sgd_momentum_step(&mut state, &grads, lr, beta).unwrap();
        sgd_momentum_step(&mut state, &grads, lr, beta).unwrap();
        let after = state.params.named_tensors()[0].1.data().to_vec();
        for (b, a) in before.iter().zip(&after) {
            let expected = b - lr * (2.0 + beta);
            assert!((a - expected).abs() < 1e-12, "{a} vs {expected}");
        }
    }

    #[test]
    fn zero_lr_on_a_fresh_state_changes_nothing() {
        let (mut state, grads) = tiny_state();
        let before: Vec<f64> = state.params.named_tensors()[0].1.data().to_vec();
        sgd_momentum_step(&mut state, &grads, 0.0, 0.9).unwrap();
        assert_eq!(state.params.named_tensors()[0].1.data(), &before[..]);
        assert!(state.momentum.named_tensors()[0].1.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn zero_lr_decays_a_warm_momentum_buffer_by_beta() {
        let (mut state, grads) = tiny_state();
        sgd_momentum_step(&mut state, &grads, 0.1, 0.9).unwrap();
        let buf_before: Vec<f64> = state.momentum.named_tensors()[0].1.data().to_vec();
        let params_before: Vec<f64> = state.params.named_tensors()[0].1.data().to_vec();
        let zero_grads = state.params.zeros_like();
        sgd_momentum_step(&mut state, &zero_grads, 0.0, 0.9).unwrap();
        let buf_after = state.momentum.named_tensors()[0].1.data().to_vec();
        let params_after = state.params.named_tensors()[0].1.data().to_vec();
        for (b, a) in buf_before.iter().zip(&buf_after) {
            assert!((a - 0.9 * b).abs() < 1e-12);
        }
        // theta moves by the decayed momentum only (lr = 0 adds nothing new).
        for ((p0, p1), m) in params_before.iter().zip(&params_after).zip(&buf_after) {
            assert!((p1 - (p0 + m)).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_decay_pulls_parameters_toward_zero() {
        let (params_src, _) = tiny_state();
        let mut state = OptimizerState::new(params_src.params.clone(), 0.1);
        let zero_grads = state.params.zeros_like();
        let before: f64 = state.params.named_tensors()[0]
            .1
            .data()
            .iter()
            .map(|v| v * v)
            .sum();
        sgd_momentum_step(&mut state, &zero_grads, 0.1, 0.0).unwrap();
        let after: f64 = state.params.named_tensors()[0]
            .1
            .data()
            .iter()
            .map(|v| v * v)
            .sum();
        assert!(after < before);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut state, grads) = tiny_state();
        let mut bad = grads.clone();
        bad.proj[0].weight = super::super::tensor::Tensor::zeros(&[1, 1]);
        assert!(matches!(
            sgd_momentum_step(&mut state, &bad, 0.1, 0.9),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
