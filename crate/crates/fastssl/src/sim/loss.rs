//! Twin-view loss: symmetrized negative cosine similarity with
//! stop-gradient on the target branch.
//!
//! `L = -1/2 * mean_n [ cos(p1_n, sg(z2_n)) + cos(p2_n, sg(z1_n)) ]`
//!
//! The stop-gradient is structural: the backward pass emits gradients only
//! for the prediction arguments, and identically-zero tensors for the
//! embedding (target) arguments. The loss value always lies in `[-1, 1]`.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Gradients of the loss w.r.t. its four arguments. `d_embedding1` and
/// `d_embedding2` are exactly zero by the stop-gradient convention; they
/// are materialized so callers can feed them straight into the network
/// backward pass (and tests can assert on them).
#[derive(Debug, Clone)]
pub struct LossGrads<S> {
    pub d_prediction1: Tensor<S>,
    pub d_prediction2: Tensor<S>,
    pub d_embedding1: Tensor<S>,
    pub d_embedding2: Tensor<S>,
}

fn check_pair<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, context: &str) -> Result<(usize, usize)> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok((a.shape()[0], a.shape()[1]))
}

fn row_norm<S: Scalar>(row: &[S], what: &str) -> Result<f64> {
    let norm = row
        .iter()
        .map(|v| {
            let x = v.to_f64_val();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::non_finite(format!("{what}: zero or non-finite norm")));
    }
    Ok(norm)
}

/// Mean loss over the batch. `z` values are treated as constants.
pub fn twin_loss<S: Scalar>(
    z1: &Tensor<S>,
    p1: &Tensor<S>,
    z2: &Tensor<S>,
    p2: &Tensor<S>,
) -> Result<f64> {
    Ok(twin_loss_with_grads(z1, p1, z2, p2)?.0)
}

/// Loss value plus gradients. Only the prediction branches receive gradient;
/// the target embeddings get exact zeros.
pub fn twin_loss_with_grads<S: Scalar>(
    z1: &Tensor<S>,
    p1: &Tensor<S>,
    z2: &Tensor<S>,
    p2: &Tensor<S>,
) -> Result<(f64, LossGrads<S>)> {
    let (n, d) = check_pair(z1, p1, "loss inputs z1/p1")?;
    check_pair(z2, p2, "loss inputs z2/p2")?;
    check_pair(p1, p2, "loss inputs p1/p2")?;

    let mut d_p1 = Tensor::zeros(&[n, d]);
    let mut d_p2 = Tensor::zeros(&[n, d]);
    let mut total = 0.0f64;
    // Each of the two symmetric terms carries weight 1/(2n).
    let weight = -1.0 / (2.0 * n as f64);

    let mut accumulate = |p: &Tensor<S>, target: &Tensor<S>, d_p: &mut Tensor<S>| -> Result<()> {
        for row in 0..n {
            let p_row = &p.data()[row * d..(row + 1) * d];
            let t_row = &target.data()[row * d..(row + 1) * d];
            let p_norm = row_norm(p_row, "prediction")?;
            let t_norm = row_norm(t_row, "target embedding")?;
            let dot: f64 = p_row
                .iter()
                .zip(t_row)
                .map(|(a, b)| a.to_f64_val() * b.to_f64_val())
                .sum();
            let cos = dot / (p_norm * t_norm);
            total += weight * cos;
            // d cos / d p = t / (|p||t|) - cos * p / |p|^2
            let grad_row = &mut d_p.data_mut()[row * d..(row + 1) * d];
            for k in 0..d {
                let g = t_row[k].to_f64_val() / (p_norm * t_norm)
                    - cos * p_row[k].to_f64_val() / (p_norm * p_norm);
                grad_row[k] = S::from_f64_val(weight * g);
            }
        }
        Ok(())
    };
    accumulate(p1, z2, &mut d_p1)?;
    accumulate(p2, z1, &mut d_p2)?;

    if !total.is_finite() {
        return Err(Error::non_finite("twin loss"));
    }
    Ok((
        total,
        LossGrads {
            d_prediction1: d_p1,
            d_prediction2: d_p2,
            d_embedding1: Tensor::zeros(&[n, d]),
            d_embedding2: Tensor::zeros(&[n, d]),
        },
    ))
}
