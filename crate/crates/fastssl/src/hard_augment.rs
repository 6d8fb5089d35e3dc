//! Hard augmentation-pair mining.
//!
//! From `m` augmented views of each sample, evaluate the SSL loss for every
//! view pair on cheap downsampled copies and keep only the pair with the
//! largest loss for the full-resolution training step. Selection is a pure
//! per-sample computation: samples never influence each other, so batches
//! can be sharded across workers and the outcomes merged in any order.

use crate::error::{Error, Result};

/// An unordered view pair, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub i: usize,
    pub j: usize,
}

impl PairIndex {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i >= j {
            return Err(Error::invalid(format!(
                "pair indices must satisfy i < j, got ({i},{j})"
            )));
        }
        Ok(PairIndex { i, j })
    }
}

impl std::fmt::Display for PairIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

/// Parameters of the selection pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    /// Number of views (positives) generated per sample; at least 2.
    pub num_positives: usize,
    /// Side length views are downsampled to for the selection pass.
    pub selection_resolution: u32,
    /// Side length of the views used for the actual training step.
    pub train_resolution: u32,
    /// Cost of a full training iteration in units of one forward pass.
    pub iteration_cost_ratio: f64,
}

impl SelectionConfig {
    pub fn new(
        num_positives: usize,
        selection_resolution: u32,
        train_resolution: u32,
        iteration_cost_ratio: f64,
    ) -> Result<Self> {
        let cfg = SelectionConfig {
            num_positives,
            selection_resolution,
            train_resolution,
            iteration_cost_ratio,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_positives < 2 {
            return Err(Error::config(format!(
                "num_positives must be at least 2, got {}",
                self.num_positives
            )));
        }
        if self.selection_resolution > self.train_resolution {
            return Err(Error::config(format!(
                "selection_resolution ({}) must not exceed train_resolution ({})",
                self.selection_resolution, self.train_resolution
            )));
        }
        if !(self.iteration_cost_ratio > 0.0) {
            return Err(Error::config(
                "iteration_cost_ratio must be positive",
            ));
        }
        Ok(())
    }

    pub fn num_pairs(&self) -> usize {
        self.num_positives * (self.num_positives - 1) / 2
    }
}

/// Fraction of total compute that goes to actual training when selection is
/// enabled, and the complementary overhead.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SelectionOverhead {
    /// `r^2 C / (r^2 C + m r_sel^2)`.
    pub useful_fraction: f64,
    /// `1 - useful_fraction`.
    pub overhead: f64,
}

/// Chosen pair and full pair-loss matrix for every sample of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Winning pair per sample.
    pub chosen: Vec<PairIndex>,
    /// Per-sample losses for all pairs, in [`enumerate_pairs`] order.
    pub pair_losses: Vec<Vec<f64>>,
}

impl SelectionOutcome {
    /// The winning pair's loss for one sample.
    pub fn chosen_loss(&self, sample: usize, m: usize) -> Option<f64> {
        let pair = self.chosen.get(sample)?;
        let pos = pair_position(*pair, m);
        self.pair_losses.get(sample)?.get(pos).copied()
    }
}

/// All `m choose 2` pairs in lexicographic order (i ascending, then j).
pub fn enumerate_pairs(m: usize) -> Result<Vec<PairIndex>> {
    if m < 2 {
        return Err(Error::config(format!(
            "need at least 2 views to form a pair, got {m}"
        )));
    }
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push(PairIndex { i, j });
        }
    }
    Ok(pairs)
}

/// Flat index of `pair` within [`enumerate_pairs`]`(m)`.
pub fn pair_position(pair: PairIndex, m: usize) -> usize {
    // Pairs with first index < i occupy sum_{a<i} (m-1-a) slots.
    pair.i * (2 * m - pair.i - 1) / 2 + (pair.j - pair.i - 1)
}

/// The pair with maximum loss; ties go to the lexicographically smallest
/// pair. `losses` must hold one entry per pair of [`enumerate_pairs`]`(m)`,
/// in that order. Any non-finite entry is an error naming the pair.
pub fn select_hardest(m: usize, losses: &[f64]) -> Result<PairIndex> {
    let pairs = enumerate_pairs(m)?;
    if losses.len() != pairs.len() {
        return Err(Error::invalid(format!(
            "expected {} pair losses for m = {m}, got {}",
            pairs.len(),
            losses.len()
        )));
    }
    let mut best = 0usize;
    for (k, &loss) in losses.iter().enumerate() {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                i: pairs[k].i,
                j: pairs[k].j,
                value: loss,
            });
        }
        // Strict comparison keeps the earliest (lexicographically smallest)
        // pair on ties.
        if loss > losses[best] {
            best = k;
        }
    }
    Ok(pairs[best])
}

/// Analytic cost model of the selection pass: with `m` views downsampled to
/// `r_sel` for selection and a training iteration costing `C` forward passes
/// at resolution `r`, the useful fraction is `r^2 C / (r^2 C + m r_sel^2)`.
pub fn selection_overhead(cfg: &SelectionConfig) -> Result<SelectionOverhead> {
    cfg.validate()?;
    let r2c = (cfg.train_resolution as f64).powi(2) * cfg.iteration_cost_ratio;
    let sel = cfg.num_positives as f64 * (cfg.selection_resolution as f64).powi(2);
    let useful_fraction = r2c / (r2c + sel);
    Ok(SelectionOverhead {
        useful_fraction,
        overhead: 1.0 - useful_fraction,
    })
}

/// Run the selection pass over a batch.
///
/// `views[sample]` holds the `m` full-resolution views of one sample. Per
/// sample, every view is downsampled, the whole group is embedded in one
/// call (so batch-level stages like standardization see exactly that
/// sample's views), all pair losses are evaluated, and the hardest pair
/// wins. Failures carry the offending sample index.
pub fn hard_select_batch<V, E>(
    views: &[Vec<V>],
    cfg: &SelectionConfig,
    mut downsample: impl FnMut(&V) -> Result<V>,
    mut embed: impl FnMut(&[V]) -> Result<Vec<E>>,
    mut pair_loss: impl FnMut(&E, &E) -> Result<f64>,
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    let m = cfg.num_positives;
    let pairs = enumerate_pairs(m)?;
    let mut chosen = Vec::with_capacity(views.len());
    let mut pair_losses = Vec::with_capacity(views.len());
    for (sample, sample_views) in views.iter().enumerate() {
        let wrap = |source: Error| Error::Selection {
            sample,
            source: Box::new(source),
        };
        if sample_views.len() != m {
            return Err(wrap(Error::invalid(format!(
                "expected {m} views, got {}",
                sample_views.len()
            ))));
        }
        let small: Vec<V> = sample_views
            .iter()
            .map(&mut downsample)
            .collect::<Result<_>>()
            .map_err(wrap)?;
        let embeddings = embed(&small).map_err(wrap)?;
        if embeddings.len() != m {
            return Err(wrap(Error::invalid(format!(
                "embedder returned {} embeddings for {m} views",
                embeddings.len()
            ))));
        }
        let losses: Vec<f64> = pairs
            .iter()
            .map(|p| pair_loss(&embeddings[p.i], &embeddings[p.j]))
            .collect::<Result<_>>()
            .map_err(wrap)?;
        chosen.push(select_hardest(m, &losses).map_err(wrap)?);
        pair_losses.push(losses);
    }
    Ok(SelectionOutcome {
        chosen,
        pair_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enumerate_pairs_counts_and_order() {
        assert_eq!(enumerate_pairs(4).unwrap().len(), 6);
        assert_eq!(enumerate_pairs(6).unwrap().len(), 15);
        assert_eq!(
            enumerate_pairs(2).unwrap(),
            vec![PairIndex { i: 0, j: 1 }]
        );
        let pairs = enumerate_pairs(4).unwrap();
        let expected = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for (pair, (i, j)) in pairs.iter().zip(expected) {
            assert_eq!((pair.i, pair.j), (i, j));
        }
        assert!(enumerate_pairs(1).is_err());
    }

    #[test]
    fn pair_position_inverts_enumeration() {
        for m in 2..10 {
            for (k, pair) in enumerate_pairs(m).unwrap().into_iter().enumerate() {
                assert_eq!(pair_position(pair, m), k);
            }
        }
    }

    #[test]
    fn select_hardest_argmax_and_tiebreak() {
        let losses = [0.1, 0.9, 0.3, 0.2, 0.4, 0.5];
        let best = select_hardest(4, &losses).unwrap();
        assert_eq!((best.i, best.j), (0, 2));
        // All equal: first pair wins.
        let flat = [0.7; 6];
        let tied = select_hardest(4, &flat).unwrap();
        assert_eq!((tied.i, tied.j), (0, 1));
    }

    #[test]
    fn select_hardest_names_the_non_finite_pair() {
        let losses = [0.1, f64::NAN, 0.3, 0.2, 0.4, 0.5];
        match select_hardest(4, &losses) {
            Err(Error::NonFiniteLoss { i: 0, j: 2, .. }) => {}
            other => panic!("expected NonFiniteLoss for (0,2), got {other:?}"),
        }
    }

    #[test]
    fn select_hardest_matches_exhaustive_scan_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in 2..=8 {
            let pairs = enumerate_pairs(m).unwrap();
            for _ in 0..200 {
                let losses: Vec<f64> =
                    (0..pairs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                // Oracle: full scan comparing (loss, pair) tuples.
                let mut best = pairs[0];
                let mut best_loss = losses[0];
                for (k, &l) in losses.iter().enumerate() {
                    if l > best_loss {
                        best = pairs[k];
                        best_loss = l;
                    }
                }
                let got = select_hardest(m, &losses).unwrap();
                assert_eq!(got, best);
                // Maximality: the winner dominates every entry.
                let winner = losses[pair_position(got, m)];
                assert!(losses.iter().all(|&l| winner >= l));
            }
        }
    }

    #[test]
    fn overhead_reproduces_the_reference_operating_point() {
        let cfg = SelectionConfig::new(4, 64, 224, 6.0).unwrap();
        let o = selection_overhead(&cfg).unwrap();
        assert!((o.overhead - 0.0516).abs() < 5e-4, "overhead = {}", o.overhead);
        let six = SelectionConfig::new(6, 64, 224, 6.0).unwrap();
        let o6 = selection_overhead(&six).unwrap();
        assert!((o6.overhead - 0.0755).abs() < 5e-4, "overhead = {}", o6.overhead);
    }

    #[test]
    fn overhead_limits_and_monotonicity() {
        let free = SelectionConfig::new(4, 0, 224, 6.0).unwrap();
        assert_eq!(selection_overhead(&free).unwrap().overhead, 0.0);
        let base = SelectionConfig::new(4, 64, 224, 6.0).unwrap();
        let o = selection_overhead(&base).unwrap().overhead;
        let more_views = SelectionConfig::new(6, 64, 224, 6.0).unwrap();
        assert!(selection_overhead(&more_views).unwrap().overhead > o);
        let bigger_sel = SelectionConfig::new(4, 96, 224, 6.0).unwrap();
        assert!(selection_overhead(&bigger_sel).unwrap().overhead > o);
        let bigger_train = SelectionConfig::new(4, 64, 320, 6.0).unwrap();
        assert!(selection_overhead(&bigger_train).unwrap().overhead < o);
        let costlier_iter = SelectionConfig::new(4, 64, 224, 8.0).unwrap();
        assert!(selection_overhead(&costlier_iter).unwrap().overhead < o);
    }

    /// Scalar "views" with an additive oracle: pair (i,j) loss = v_i + v_j.
    fn run_scalar_selection(views: &[Vec<f64>], m: usize) -> SelectionOutcome {
        let cfg = SelectionConfig::new(m, 8, 32, 6.0).unwrap();
        hard_select_batch(
            views,
            &cfg,
            |v| Ok(*v),
            |vs| Ok(vs.to_vec()),
            |a, b| Ok(a + b),
        )
        .unwrap()
    }

    #[test]
    fn batch_selection_with_monotone_oracle_picks_the_last_pair() {
        // Views valued by their slot index: loss i + j peaks at (m-2, m-1).
        for m in 2..6 {
            let views = vec![(0..m).map(|v| v as f64).collect::<Vec<f64>>(); 3];
            let outcome = run_scalar_selection(&views, m);
            for pair in &outcome.chosen {
                assert_eq!((pair.i, pair.j), (m - 2, m - 1));
            }
        }
    }

    #[test]
    fn batch_selection_with_two_views_always_picks_the_only_pair() {
        let views = vec![vec![0.3, 0.1], vec![5.0, -2.0]];
        let outcome = run_scalar_selection(&views, 2);
        assert!(outcome
            .chosen
            .iter()
            .all(|p| (p.i, p.j) == (0, 1)));
    }

    #[test]
    fn batch_outcomes_commute_with_sample_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let views: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let forward = run_scalar_selection(&views, 4);
        let mut reversed = views.clone();
        reversed.reverse();
        let backward = run_scalar_selection(&reversed, 4);
        for s in 0..views.len() {
            assert_eq!(forward.chosen[s], backward.chosen[views.len() - 1 - s]);
        }
    }

    #[test]
    fn relabeling_views_permutes_the_chosen_pair_but_not_its_loss() {
        let views = vec![vec![0.9, 0.1, 0.4, 0.2]];
        let outcome = run_scalar_selection(&views, 4);
        let loss = outcome.chosen_loss(0, 4).unwrap();
        // Swap slots 0 and 3.
        let swapped = vec![vec![0.2, 0.1, 0.4, 0.9]];
        let outcome_swapped = run_scalar_selection(&swapped, 4);
        assert_eq!(outcome_swapped.chosen_loss(0, 4).unwrap(), loss);
        let a = outcome.chosen[0];
        let b = outcome_swapped.chosen[0];
        let remap = |v: usize| match v {
            0 => 3,
            3 => 0,
            other => other,
        };
        let mut expected = [remap(a.i), remap(a.j)];
        expected.sort_unstable();
        assert_eq!((b.i, b.j), (expected[0], expected[1]));
    }

    #[test]
    fn oracle_failure_carries_the_sample_index() {
        let views = vec![vec![0.1, 0.2], vec![0.3, f64::NAN]];
        let cfg = SelectionConfig::new(2, 8, 32, 6.0).unwrap();
        let err = hard_select_batch(
            &views,
            &cfg,
            |v| Ok(*v),
            |vs| Ok(vs.to_vec()),
            |a, b| {
                let l = a + b;
                if l.is_finite() {
                    Ok(l)
                } else {
                    Err(Error::non_finite("pair loss"))
                }
            },
        )
        .unwrap_err();
        match err {
            Error::Selection { sample: 1, .. } => {}
            other => panic!("expected selection error for sample 1, got {other:?}"),
        }
    }

    #[test]
    fn chosen_loss_is_the_matrix_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let views: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let outcome = run_scalar_selection(&views, 5);
        for (s, losses) in outcome.pair_losses.iter().enumerate() {
            let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(outcome.chosen_loss(s, 5).unwrap(), max);
        }
    }
}
