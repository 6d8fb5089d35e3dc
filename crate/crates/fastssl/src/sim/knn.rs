//! Cosine-similarity kNN probe over frozen embeddings.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Default neighborhood size for the online probe.
pub const DEFAULT_K: usize = 20;

fn normalized_rows<S: Scalar>(embeddings: &Tensor<S>) -> Result<Vec<Vec<f64>>> {
    let shape = embeddings.shape();
    if shape.len() != 2 {
        return Err(Error::invalid("embeddings must be a [n, dim] matrix"));
    }
    let (n, d) = (shape[0], shape[1]);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = embeddings.data()[i * d..(i + 1) * d]
            .iter()
            .map(|v| v.to_f64_val())
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::non_finite(format!("embedding row {i}")));
        }
        // Zero rows stay zero: they are equally dissimilar to everything.
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        rows.push(row.into_iter().map(|v| v * inv).collect());
    }
    Ok(rows)
}

/// Majority vote over the `k` nearest reference embeddings by cosine
/// similarity. Vote ties resolve to the smallest class index; similarity
/// ties keep the lower reference index. Returns the accuracy over the eval
/// set.
pub fn knn_eval<S: Scalar>(
    reference: &Tensor<S>,
    reference_labels: &[usize],
    eval: &Tensor<S>,
    eval_labels: &[usize],
    k: usize,
) -> Result<f64> {
    let ref_rows = normalized_rows(reference)?;
    let eval_rows = normalized_rows(eval)?;
    if ref_rows.len() != reference_labels.len() || eval_rows.len() != eval_labels.len() {
        return Err(Error::invalid("label count does not match embedding count"));
    }
    if ref_rows.is_empty() || eval_rows.is_empty() {
        return Err(Error::invalid("knn needs non-empty reference and eval sets"));
    }
    if k == 0 || k > ref_rows.len() {
        return Err(Error::invalid(format!(
            "k ({k}) must lie in 1..={}",
            ref_rows.len()
        )));
    }
    let num_classes = reference_labels.iter().max().unwrap() + 1;

    let mut correct = 0usize;
    for (query, &truth) in eval_rows.iter().zip(eval_labels) {
        // Similarities to every reference row; stable partial sort keeps
        // the lower index on exact ties.
        let mut sims: Vec<(f64, usize)> = ref_rows
            .iter()
            .enumerate()
            .map(|(idx, r)| {
                let dot: f64 = query.iter().zip(r).map(|(a, b)| a * b).sum();
                (dot, idx)
            })
            .collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; num_classes];
        for &(_, idx) in sims.iter().take(k) {
            votes[reference_labels[idx]] += 1;
        }
        let winner = votes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(class, _)| class)
            .unwrap();
        if winner == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_rows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: Vec<Vec<f32>>) -> Tensor<f32> {
        let d = rows[0].len();
        let n = rows.len();
        Tensor::from_vec(&[n, d], rows.into_iter().flatten().collect()).unwrap()
    }

    #[test]
    fn duplicated_reference_points_classify_themselves_perfectly() {
        // Each point appears twice in the reference set, so even with the
        // exact-match neighbor consumed there is another copy to vote with.
        let points = vec![
            vec![1.0f32, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.7, 0.7],
        ];
        let mut ref_rows = points.clone();
        ref_rows.extend(points.clone());
        let labels: Vec<usize> = (0..4).chain(0..4).collect();
        let acc = knn_eval(&matrix(ref_rows), &labels, &matrix(points), &[0, 1, 2, 3], 1).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn single_class_is_always_right() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rand_rows = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let reference = matrix(rand_rows(&mut rng, 30));
        let eval = matrix(rand_rows(&mut rng, 10));
        let acc = knn_eval(&reference, &vec![0; 30], &eval, &vec![0; 10], 5).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn random_labels_score_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let classes = 8usize;
        let n_ref = 400;
        let n_eval = 800;
        let rand_rows = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let reference = matrix(rand_rows(&mut rng, n_ref));
        let eval = matrix(rand_rows(&mut rng, n_eval));
        let ref_labels: Vec<usize> = (0..n_ref).map(|_| rng.random_range(0..classes)).collect();
        let eval_labels: Vec<usize> = (0..n_eval).map(|_| rng.random_range(0..classes)).collect();
        let acc = knn_eval(&reference, &ref_labels, &eval, &eval_labels, 20).unwrap();
        let chance = 1.0 / classes as f64;
        assert!((acc - chance).abs() < 0.06, "acc = {acc}, chance = {chance}");
    }

    #[test]
    fn vote_ties_go_to_the_smallest_class_index() {
        // Two references, opposite classes, equidistant from the query.
        let reference = matrix(vec![vec![1.0, 0.1], vec![1.0, -0.1]]);
        let eval = matrix(vec![vec![1.0, 0.0]]);
        let acc = knn_eval(&reference, &[1, 0], &eval, &[0], 2).unwrap();
        assert_eq!(acc, 1.0);
        let acc2 = knn_eval(&reference, &[1, 0], &eval, &[1], 2).unwrap();
        assert_eq!(acc2, 0.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let reference = matrix(vec![vec![1.0, 0.0]]);
        let eval = matrix(vec![vec![1.0, 0.0]]);
        assert!(knn_eval(&reference, &[0], &eval, &[0], 2).is_err());
        assert!(knn_eval(&reference, &[0], &eval, &[0], 0).is_err());
        assert!(knn_eval(&reference, &[0, 1], &eval, &[0], 1).is_err());
    }
}
