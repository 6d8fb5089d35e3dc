//! End-to-end training loop over the synthetic dataset.
//!
//! Per iteration the loop queries the learning-rate schedule and the
//! curriculum, generates augmented views at the scheduled resolution and
//! magnitude, optionally mines the hardest view pair on downsampled copies,
//! forwards the chosen pair, backpropagates the twin loss and applies one
//! momentum-SGD step. Per epoch it reports the mean training loss, a kNN
//! probe over frozen encoder features, the pre-standardization embedding
//! spread (collapse indicator), and the exact cumulative training FLOPs.
//!
//! The loop is single-threaded and fully deterministic under
//! `(seed, config)`: every random decision draws from a stream derived from
//! the seed, a purpose tag and indices. The FLOPs counter covers the
//! optimization loop only (selection pass, the two training forwards, and a
//! backward counted as twice the forwards); evaluation passes are free.

use rand::seq::SliceRandom;

use super::augment::{augment, downsample_for_selection, AugmentationPolicy};
use super::dataset::{generate_dataset, LabeledImage, SynthDatasetConfig};
use super::knn::knn_eval;
use super::loss::twin_loss_with_grads;
use super::model::{
    backward, forward, forward_flops, forward_with_trace, ModelParams, ModelSpec, MIN_INPUT_SIDE,
};
use super::optim::{sgd_momentum_step, OptimizerState};
use super::rng::{derive, Stream};
use super::tensor::Tensor;
use crate::cost::{FlopsProfile, TrainingPlan, DEFAULT_ITERATION_COST_RATIO};
use crate::curriculum::ProgressivePlan;
use crate::error::{Error, Result};
use crate::hard_augment::{hard_select_batch, SelectionConfig};
use crate::schedule::ScheduleConfig;

/// Everything one training run needs. Schedule and curriculum lengths are
/// in steps and must both equal `epochs * steps_per_epoch` (full batches
/// only; the remainder of each epoch is dropped).
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub schedule: ScheduleConfig,
    pub curriculum: ProgressivePlan,
    /// Hard augmentation mining. `num_positives == 2` is equivalent to
    /// disabled: the selection pass is skipped entirely and the trajectory
    /// is bit-identical to a two-view run.
    pub selection: Option<SelectionConfig>,
    pub policy: AugmentationPolicy,
    pub dataset: SynthDatasetConfig,
    pub model: ModelSpec,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub knn_k: usize,
    pub epochs: u64,
    pub seed: u64,
}

/// One line of the per-epoch metrics log. Schedule/curriculum columns carry
/// the values of the epoch's last iteration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub momentum: f64,
    pub resolution: u32,
    pub magnitude: f64,
    pub train_loss: f64,
    pub knn_accuracy: f64,
    pub cumulative_flops: u64,
    pub embedding_std: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub metrics: Vec<EpochRecord>,
    pub params: ModelParams<f32>,
    pub cumulative_flops: u64,
    /// The plan the loop actually executed, priceable by the cost model.
    pub realized_plan: TrainingPlan,
    /// Measured forward costs (per view batch) for every resolution the run
    /// touched, with the iteration cost ratio the loop realizes.
    pub profile: FlopsProfile,
    pub final_accuracy: f64,
}

/// Iterations per epoch under the drop-last batching rule.
pub fn steps_per_epoch(train_size: usize, batch_size: usize) -> u64 {
    (train_size / batch_size) as u64
}

/// Measured FLOPs profile for a model/batch at the given resolutions.
pub fn measure_profile(
    spec: &ModelSpec,
    batch: usize,
    resolutions: impl IntoIterator<Item = u32>,
) -> Result<FlopsProfile> {
    let entries: Vec<(u32, f64)> = resolutions
        .into_iter()
        .map(|r| (r, forward_flops(spec, batch, r as usize) as f64))
        .collect();
    FlopsProfile::measured(entries, DEFAULT_ITERATION_COST_RATIO, false)
}

/// Build a range-test trainer from a run plan: each call applies one
/// training step at the probed learning rate (momentum fixed at 0.9,
/// full-resolution views at standard magnitude) and reports the twin loss
/// on that batch plus on a fixed held-out validation pair built once from
/// the eval split. Any internal failure surfaces as NaN losses, which ends
/// the sweep.
pub fn build_range_trainer(
    plan: &RunPlan,
    val_batch: usize,
) -> Result<impl FnMut(f64) -> (f64, f64)> {
    const PROBE_MOMENTUM: f64 = 0.9;
    let dataset = generate_dataset(&plan.dataset)?;
    if steps_per_epoch(dataset.train.len(), plan.batch_size) == 0 {
        return Err(Error::config("batch_size exceeds the training split"));
    }
    let mut init_rng = derive(plan.seed, Stream::ModelInit);
    let params = ModelParams::<f32>::init(plan.model, &mut init_rng);
    let mut state = OptimizerState::new(params, plan.weight_decay);
    let resolution = plan.dataset.image_size as u32;
    let policy = plan.policy.with_magnitude(crate::sim::augment::STANDARD_MAGNITUDE);

    // Fixed validation pair, generated once.
    let n_val = val_batch.clamp(2, dataset.eval.len());
    let make_val = |offset: u64| -> Result<Tensor<f32>> {
        let views: Vec<Tensor<f32>> = (0..n_val)
            .map(|i| {
                let mut rng = derive(
                    plan.seed,
                    Stream::Augment {
                        step: u64::MAX - offset,
                        slot: i as u64,
                    },
                );
                augment(&dataset.eval[i].image, &policy, resolution, &mut rng)
            })
            .collect::<Result<_>>()?;
        Tensor::stack(&views)
    };
    let val1 = make_val(1)?;
    let val2 = make_val(2)?;

    let seed = plan.seed;
    let batch_size = plan.batch_size;
    let mut counter: u64 = 0;
    let trainer = move |lr: f64| -> (f64, f64) {
        let mut step = || -> Result<(f64, f64)> {
            let epoch = counter / steps_per_epoch(dataset.train.len(), batch_size);
            let batch_in_epoch = counter % steps_per_epoch(dataset.train.len(), batch_size);
            let mut order: Vec<usize> = (0..dataset.train.len()).collect();
            order.shuffle(&mut derive(seed, Stream::Shuffle { epoch }));
            let ids =
                &order[(batch_in_epoch as usize * batch_size)..((batch_in_epoch as usize + 1) * batch_size)];

            let mut left = Vec::with_capacity(batch_size);
            let mut right = Vec::with_capacity(batch_size);
            for (slot, &id) in ids.iter().enumerate() {
                let mut rng = derive(
                    seed,
                    Stream::Augment {
                        step: counter,
                        slot: slot as u64,
                    },
                );
                left.push(augment(&dataset.train[id].image, &policy, resolution, &mut rng)?);
                right.push(augment(&dataset.train[id].image, &policy, resolution, &mut rng)?);
            }
            let batch1 = Tensor::stack(&left)?;
            let batch2 = Tensor::stack(&right)?;
            let (out1, trace1) = forward_with_trace(&state.params, &batch1)?;
            let (out2, trace2) = forward_with_trace(&state.params, &batch2)?;
            let (train_loss, lgrads) = twin_loss_with_grads(
                &out1.embedding,
                &out1.prediction,
                &out2.embedding,
                &out2.prediction,
            )?;
            let mut grads = backward(
                &state.params,
                &trace1,
                &lgrads.d_prediction1,
                &lgrads.d_embedding1,
            )?;
            grads.accumulate(&backward(
                &state.params,
                &trace2,
                &lgrads.d_prediction2,
                &lgrads.d_embedding2,
            )?)?;
            sgd_momentum_step(&mut state, &grads, lr, PROBE_MOMENTUM)?;
            counter += 1;

            let v1 = forward(&state.params, &val1)?;
            let v2 = forward(&state.params, &val2)?;
            let (val_loss, _) = twin_loss_with_grads(
                &v1.embedding,
                &v1.prediction,
                &v2.embedding,
                &v2.prediction,
            )?;
            Ok((train_loss, val_loss))
        };
        step().unwrap_or((f64::NAN, f64::NAN))
    };
    Ok(trainer)
}

/// Embed a slice of images with the encoder, in fixed-size chunks. Returns
/// pooled features, labels, and pre-standardization embeddings.
fn embed_dataset(
    params: &ModelParams<f32>,
    items: &[LabeledImage],
) -> Result<(Tensor<f32>, Vec<usize>, Tensor<f32>)> {
    const CHUNK: usize = 128;
    let mut features: Vec<f32> = Vec::new();
    let mut pre: Vec<f32> = Vec::new();
    let mut labels = Vec::with_capacity(items.len());
    let mut feat_dim = 0usize;
    let mut embed_dim = 0usize;
    for chunk in items.chunks(CHUNK) {
        let images: Vec<Tensor<f32>> = chunk.iter().map(|s| s.image.clone()).collect();
        let batch = Tensor::stack(&images)?;
        let out = forward(params, &batch)?;
        feat_dim = out.features.shape()[1];
        embed_dim = out.embedding_pre.shape()[1];
        features.extend_from_slice(out.features.data());
        pre.extend_from_slice(out.embedding_pre.data());
        labels.extend(chunk.iter().map(|s| s.label));
    }
    let count = labels.len();
    Ok((
        Tensor::from_vec(&[count, feat_dim], features)?,
        labels,
        Tensor::from_vec(&[count, embed_dim], pre)?,
    ))
}

/// Mean per-dimension standard deviation of a `[n, d]` matrix.
fn mean_dimension_std(matrix: &Tensor<f32>) -> f64 {
    let (n, d) = (matrix.shape()[0], matrix.shape()[1]);
    let mut total = 0.0f64;
    for k in 0..d {
        let mut mean = 0.0f64;
        for i in 0..n {
            mean += matrix.data()[i * d + k] as f64;
        }
        mean /= n as f64;
        let mut var = 0.0f64;
        for i in 0..n {
            let c = matrix.data()[i * d + k] as f64 - mean;
            var += c * c;
        }
        total += (var / n as f64).sqrt();
    }
    total / d as f64
}

fn validate_plan(plan: &RunPlan, spe: u64) -> Result<()> {
    plan.schedule.validate()?;
    plan.curriculum.validate()?;
    plan.policy.validate()?;
    plan.dataset.validate()?;
    if plan.batch_size < 2 {
        return Err(Error::config("batch_size must be at least 2"));
    }
    if spe == 0 {
        return Err(Error::config(format!(
            "batch_size ({}) exceeds the training split",
            plan.batch_size
        )));
    }
    let total = plan.epochs * spe;
    if plan.schedule.total_steps != total || plan.curriculum.total_steps != total {
        return Err(Error::config(format!(
            "schedule ({}) and curriculum ({}) must cover epochs * steps_per_epoch = {total} steps",
            plan.schedule.total_steps, plan.curriculum.total_steps
        )));
    }
    if plan.curriculum.res_max as usize > plan.dataset.image_size {
        return Err(Error::config(format!(
            "curriculum res_max ({}) exceeds the dataset image size ({})",
            plan.curriculum.res_max, plan.dataset.image_size
        )));
    }
    if (plan.curriculum.res_min as usize) < MIN_INPUT_SIDE {
        return Err(Error::config(format!(
            "curriculum res_min ({}) is below the encoder minimum ({MIN_INPUT_SIDE})",
            plan.curriculum.res_min
        )));
    }
    if let Some(sel) = &plan.selection {
        sel.validate()?;
        if sel.num_positives > 2 {
            if (sel.selection_resolution as usize) < MIN_INPUT_SIDE {
                return Err(Error::config(format!(
                    "selection_resolution ({}) is below the encoder minimum ({MIN_INPUT_SIDE})",
                    sel.selection_resolution
                )));
            }
            if sel.selection_resolution > plan.curriculum.res_min {
                return Err(Error::config(format!(
                    "selection_resolution ({}) exceeds the smallest view resolution ({})",
                    sel.selection_resolution, plan.curriculum.res_min
                )));
            }
        }
    }
    Ok(())
}

/// Run the full training loop, invoking `on_epoch` after every epoch so
/// callers can persist metrics as they appear. Any failure inside the loop
/// aborts with the iteration index; records already handed to the sink
/// remain valid.
pub fn train(
    plan: &RunPlan,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutput> {
    let dataset = generate_dataset(&plan.dataset)?;
    let spe = steps_per_epoch(dataset.train.len(), plan.batch_size);
    validate_plan(plan, spe)?;

    let mut init_rng = derive(plan.seed, Stream::ModelInit);
    let params = ModelParams::<f32>::init(plan.model, &mut init_rng);
    let mut state = OptimizerState::new(params, plan.weight_decay);

    let mining = plan
        .selection
        .as_ref()
        .filter(|sel| sel.num_positives > 2)
        .cloned();
    let views_per_sample = mining.as_ref().map_or(2, |sel| sel.num_positives);

    let mut cumulative_flops = 0u64;
    let mut resolutions: Vec<u32> = Vec::with_capacity((plan.epochs * spe) as usize);
    let mut metrics = Vec::with_capacity(plan.epochs as usize);
    let mut step: u64 = 0;

    for epoch in 0..plan.epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut derive(plan.seed, Stream::Shuffle { epoch }));

        let mut loss_sum = 0.0f64;
        let mut last_point = plan.schedule.point(0)?;
        let mut last_curriculum = plan.curriculum.point(0)?;

        for batch_ids in order.chunks_exact(plan.batch_size) {
            let iteration = step;
            let mut run_iteration = || -> Result<()> {
                let point = plan.schedule.point(step)?;
                let cpoint = plan.curriculum.point(step)?;
                let policy = plan.policy.with_magnitude(cpoint.magnitude);

                // Per-sample view generation from dedicated RNG streams.
                let mut views: Vec<Vec<Tensor<f32>>> = Vec::with_capacity(batch_ids.len());
                for (slot, &id) in batch_ids.iter().enumerate() {
                    let mut rng = derive(
                        plan.seed,
                        Stream::Augment {
                            step,
                            slot: slot as u64,
                        },
                    );
                    let sample_views: Vec<Tensor<f32>> = (0..views_per_sample)
                        .map(|_| {
                            augment(
                                &dataset.train[id].image,
                                &policy,
                                cpoint.resolution,
                                &mut rng,
                            )
                        })
                        .collect::<Result<_>>()?;
                    views.push(sample_views);
                }

                // Pick the training pair: hardest by loss, or simply the
                // first two views when mining is off.
                let (left, right): (Vec<&Tensor<f32>>, Vec<&Tensor<f32>>) = match &mining {
                    Some(sel) => {
                        let sel_cfg = SelectionConfig {
                            train_resolution: cpoint.resolution,
                            ..*sel
                        };
                        let mut selection_flops = 0u64;
                        let outcome = hard_select_batch(
                            &views,
                            &sel_cfg,
                            |v| downsample_for_selection(v, sel.selection_resolution as usize),
                            |small| {
                                let batch = Tensor::stack(small)?;
                                let out = forward(&state.params, &batch)?;
                                selection_flops += out.flops;
                                let m = small.len();
                                let d = out.embedding.shape()[1];
                                (0..m)
                                    .map(|i| {
                                        let z = Tensor::from_vec(
                                            &[1, d],
                                            out.embedding.data()[i * d..(i + 1) * d].to_vec(),
                                        )?;
                                        let p = Tensor::from_vec(
                                            &[1, d],
                                            out.prediction.data()[i * d..(i + 1) * d].to_vec(),
                                        )?;
                                        Ok((z, p))
                                    })
                                    .collect()
                            },
                            |a, b| {
                                let (loss, _) = twin_loss_with_grads(&a.0, &a.1, &b.0, &b.1)?;
                                Ok(loss)
                            },
                        )?;
                        cumulative_flops += selection_flops;
                        outcome
                            .chosen
                            .iter()
                            .enumerate()
                            .map(|(s, pair)| (&views[s][pair.i], &views[s][pair.j]))
                            .unzip()
                    }
                    None => views.iter().map(|v| (&v[0], &v[1])).unzip(),
                };

                let batch1 = Tensor::stack(&left.into_iter().cloned().collect::<Vec<_>>())?;
                let batch2 = Tensor::stack(&right.into_iter().cloned().collect::<Vec<_>>())?;

                let (out1, trace1) = forward_with_trace(&state.params, &batch1)?;
                let (out2, trace2) = forward_with_trace(&state.params, &batch2)?;
                let forward_cost = out1.flops + out2.flops;
                let (loss, lgrads) = twin_loss_with_grads(
                    &out1.embedding,
                    &out1.prediction,
                    &out2.embedding,
                    &out2.prediction,
                )?;
                let mut grads = backward(
                    &state.params,
                    &trace1,
                    &lgrads.d_prediction1,
                    &lgrads.d_embedding1,
                )?;
                let g2 = backward(
                    &state.params,
                    &trace2,
                    &lgrads.d_prediction2,
                    &lgrads.d_embedding2,
                )?;
                grads.accumulate(&g2)?;
                // Backward priced at twice the forwards it mirrors.
                cumulative_flops += forward_cost + 2 * forward_cost;

                sgd_momentum_step(&mut state, &grads, point.lr, point.momentum)?;

                loss_sum += loss;
                resolutions.push(cpoint.resolution);
                last_point = point;
                last_curriculum = cpoint;
                Ok(())
            };
            run_iteration().map_err(|source| Error::Training {
                iteration,
                source: Box::new(source),
            })?;
            step += 1;
        }

        // Per-epoch probe on frozen features; not counted against the
        // training FLOPs budget.
        let (train_feats, train_labels, _) = embed_dataset(&state.params, &dataset.train)?;
        let (eval_feats, eval_labels, eval_pre) = embed_dataset(&state.params, &dataset.eval)?;
        let k = plan.knn_k.min(train_labels.len());
        let knn_accuracy = knn_eval(&train_feats, &train_labels, &eval_feats, &eval_labels, k)?;
        let record = EpochRecord {
            epoch,
            step,
            lr: last_point.lr,
            momentum: last_point.momentum,
            resolution: last_curriculum.resolution,
            magnitude: last_curriculum.magnitude,
            train_loss: loss_sum / spe as f64,
            knn_accuracy,
            cumulative_flops,
            embedding_std: mean_dimension_std(&eval_pre),
        };
        on_epoch(&record)?;
        metrics.push(record);
    }

    let mut plan_resolutions: Vec<u32> = resolutions.clone();
    plan_resolutions.dedup();
    let mut profile_resolutions: Vec<u32> = resolutions.clone();
    if let Some(sel) = &mining {
        profile_resolutions.push(sel.selection_resolution);
    }
    profile_resolutions.sort_unstable();
    profile_resolutions.dedup();

    let realized_plan = match &mining {
        Some(sel) => TrainingPlan::new(resolutions, Some(sel.clone()))?,
        None => TrainingPlan::new(resolutions, None)?,
    };
    let profile = measure_profile(&plan.model, plan.batch_size, profile_resolutions)?;
    let final_accuracy = metrics.last().map_or(0.0, |m| m.knn_accuracy);

    Ok(TrainOutput {
        metrics,
        params: state.params,
        cumulative_flops,
        realized_plan,
        profile,
        final_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::plan_flops;

    fn tiny_plan(seed: u64) -> RunPlan {
        // 2 epochs x 4 steps on a 64-image training split.
        let dataset = SynthDatasetConfig {
            num_classes: 4,
            samples_per_class: 20,
            canvas_size: 24,
            image_size: 16,
            noise_std: 0.05,
            seed,
        };
        let total = 2 * 4;
        RunPlan {
            schedule: ScheduleConfig::fixed_one_cycle(total, 2, 0.05, 0.85, 0.95),
            curriculum: ProgressivePlan::new(total, 2, 8, 16, 4, 4.0, 6.0).unwrap(),
            selection: None,
            policy: AugmentationPolicy::default(),
            dataset,
            model: ModelSpec {
                conv_channels: [4, 8, 8],
                proj_hidden: 16,
                embed_dim: 16,
                pred_hidden: 8,
                ..ModelSpec::default()
            },
            batch_size: 16,
            weight_decay: 5e-4,
            knn_k: 5,
            epochs: 2,
            seed,
        }
    }

    fn run(plan: &RunPlan) -> TrainOutput {
        train(plan, &mut |_| Ok(())).unwrap()
    }

    #[test]
    fn identical_seeds_give_bit_identical_metrics() {
        let a = run(&tiny_plan(3));
        let b = run(&tiny_plan(3));
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        let c = run(&tiny_plan(4));
        assert_ne!(a.metrics, c.metrics);
    }

    #[test]
    fn two_positives_mining_is_bit_identical_to_disabled() {
        let mut with_sel = tiny_plan(5);
        with_sel.selection = Some(SelectionConfig::new(2, 8, 16, 6.0).unwrap());
        let baseline = run(&tiny_plan(5));
        let mined = run(&with_sel);
        assert_eq!(baseline.metrics, mined.metrics);
        assert_eq!(baseline.params, mined.params);
        assert_eq!(baseline.cumulative_flops, mined.cumulative_flops);
    }

    #[test]
    fn flops_counter_matches_the_cost_model_exactly() {
        // Without mining.
        let plain = run(&tiny_plan(6));
        let cost = plan_flops(&plain.realized_plan, &plain.profile).unwrap();
        assert_eq!(cost, plain.cumulative_flops as f64);
        // With mining at four positives.
        let mut mined_plan = tiny_plan(6);
        mined_plan.selection = Some(SelectionConfig::new(4, 8, 16, 6.0).unwrap());
        let mined = run(&mined_plan);
        let mined_cost = plan_flops(&mined.realized_plan, &mined.profile).unwrap();
        assert_eq!(mined_cost, mined.cumulative_flops as f64);
        assert!(mined.cumulative_flops > plain.cumulative_flops);
    }

    #[test]
    fn epoch_records_follow_the_schedules() {
        let out = run(&tiny_plan(7));
        assert_eq!(out.metrics.len(), 2);
        let first = &out.metrics[0];
        let last = &out.metrics[1];
        assert_eq!(first.step, 4);
        assert_eq!(last.step, 8);
        assert!(last.cumulative_flops > first.cumulative_flops);
        assert!(last.magnitude > first.magnitude);
        assert_eq!(last.resolution, 16);
        // Twin loss stays in its analytic range.
        for m in &out.metrics {
            assert!((-1.0..=1.0).contains(&m.train_loss));
            assert!(m.embedding_std.is_finite());
        }
    }

    #[test]
    fn mining_errors_carry_the_iteration_index() {
        let mut plan = tiny_plan(8);
        // Selection resolution below the encoder minimum trips validation.
        plan.selection = Some(SelectionConfig::new(4, 4, 16, 6.0).unwrap());
        let err = train(&plan, &mut |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }
}
