//! Finite-difference validation of the manual backward pass.
//!
//! The twin loss stops gradients at its target arguments, so the function
//! the analytic gradient actually differentiates is the loss with the
//! targets frozen at their current values. The checker freezes them once,
//! then compares analytic parameter gradients against central differences
//! of that frozen-target objective over a random parameter subsample.
//! Run in 64-bit mode.

use rand::Rng;

use super::loss::twin_loss_with_grads;
use super::model::{backward, forward, forward_with_trace, ModelParams};
use super::rng::{derive, Stream};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    pub loss: f64,
}

/// Sum gradients of the frozen-target twin loss for both view batches.
fn analytic_gradients(
    params: &ModelParams<f64>,
    view1: &Tensor<f64>,
    view2: &Tensor<f64>,
) -> Result<(f64, ModelParams<f64>)> {
    let (out1, trace1) = forward_with_trace(params, view1)?;
    let (out2, trace2) = forward_with_trace(params, view2)?;
    let (loss, grads) = twin_loss_with_grads(
        &out1.embedding,
        &out1.prediction,
        &out2.embedding,
        &out2.prediction,
    )?;
    let mut g1 = backward(params, &trace1, &grads.d_prediction1, &grads.d_embedding1)?;
    let g2 = backward(params, &trace2, &grads.d_prediction2, &grads.d_embedding2)?;
    g1.accumulate(&g2)?;
    Ok((loss, g1))
}

/// Frozen-target loss value at the given parameters.
fn frozen_loss(
    params: &ModelParams<f64>,
    view1: &Tensor<f64>,
    view2: &Tensor<f64>,
    target1: &Tensor<f64>,
    target2: &Tensor<f64>,
) -> Result<f64> {
    let out1 = forward(params, view1)?;
    let out2 = forward(params, view2)?;
    // Targets enter in the z slots; only the predictions vary with theta.
    let (loss, _) = twin_loss_with_grads(target1, &out1.prediction, target2, &out2.prediction)?;
    Ok(loss)
}

/// Compare analytic gradients against central finite differences on
/// `samples_per_tensor` random coordinates of every parameter tensor.
pub fn gradient_check(
    params: &ModelParams<f64>,
    view1: &Tensor<f64>,
    view2: &Tensor<f64>,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (loss, grads) = analytic_gradients(params, view1, view2)?;
    let out1 = forward(params, view1)?;
    let out2 = forward(params, view2)?;
    let target1 = out1.embedding;
    let target2 = out2.embedding;

    let mut rng = derive(seed, Stream::GradCheck);
    let mut probe = params.clone();
    let mut max_rel_error = 0.0f64;
    let mut checked = 0usize;

    let tensor_count = params.named_tensors().len();
    for tensor_idx in 0..tensor_count {
        let len = params.named_tensors()[tensor_idx].1.len();
        let picks: Vec<usize> = if len <= samples_per_tensor {
            (0..len).collect()
        } else {
            (0..samples_per_tensor)
                .map(|_| rng.random_range(0..len))
                .collect()
        };
        for coord in picks {
            let original = params.named_tensors()[tensor_idx].1.data()[coord];
            let h = 1e-5 * original.abs().max(1.0);

            probe.named_tensors_mut()[tensor_idx].1.data_mut()[coord] = original + h;
            let up = frozen_loss(&probe, view1, view2, &target1, &target2)?;
            probe.named_tensors_mut()[tensor_idx].1.data_mut()[coord] = original - h;
            let down = frozen_loss(&probe, view1, view2, &target1, &target2)?;
            probe.named_tensors_mut()[tensor_idx].1.data_mut()[coord] = original;

            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.named_tensors()[tensor_idx].1.data()[coord];
            let rel = (numeric - analytic).abs()
                / numeric.abs().max(analytic.abs()).max(1e-6);
            max_rel_error = max_rel_error.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        coordinates_checked: checked,
        loss,
    })
}
