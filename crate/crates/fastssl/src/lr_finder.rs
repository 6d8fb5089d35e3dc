//! Learning-rate range test.
//!
//! Sweeps the learning rate exponentially from `lr_lo` to `lr_hi`, tracking
//! training and validation loss per step, and locates a usable learning-rate
//! window: `min_lr` where the validation loss first shows a sustained drop,
//! `max_lr` just before the training loss diverges (or the plateau end when
//! the sweep never diverges). Both losses are smoothed with an exponential
//! moving average before thresholding; the raw values land in the trace.
//!
//! Thresholds scale with the *magnitude* of their reference value, so
//! objectives that go negative (the twin loss lives in [-1, 1]) are handled
//! the same way as positive ones: divergence means the smoothed training
//! loss rose `(divergence_factor - 1) * |running_min|` above its running
//! minimum, and the plateau is everything within `decrease_delta *
//! |running_min|` of it.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RangeTestConfig {
    pub lr_lo: f64,
    pub lr_hi: f64,
    pub sweep_steps: u32,
    /// Size of the fixed held-out batch trainers should evaluate on.
    /// Consumed by the trainer adapter, not by the sweep itself.
    pub val_batch_size: u32,
    /// EMA coefficient applied to both losses, in (0, 1).
    pub smoothing_coefficient: f64,
    /// Divergence threshold: the smoothed training loss exceeding
    /// `divergence_factor * running_min` ends the sweep.
    pub divergence_factor: f64,
    /// Relative drop (and plateau width) threshold.
    pub decrease_delta: f64,
}

impl Default for RangeTestConfig {
    fn default() -> Self {
        RangeTestConfig {
            lr_lo: 1e-3,
            lr_hi: 1.0,
            sweep_steps: 200,
            val_batch_size: 256,
            smoothing_coefficient: 0.05,
            divergence_factor: 2.0,
            decrease_delta: 0.01,
        }
    }
}

/// Consecutive below-threshold steps required before `min_lr` is declared.
const MIN_LR_PERSISTENCE: u32 = 5;

impl RangeTestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_lo > 0.0 && self.lr_hi > self.lr_lo) {
            return Err(Error::config(format!(
                "need 0 < lr_lo < lr_hi, got {}..{}",
                self.lr_lo, self.lr_hi
            )));
        }
        if self.sweep_steps < 10 {
            return Err(Error::config(format!(
                "sweep_steps must be at least 10, got {}",
                self.sweep_steps
            )));
        }
        if !(self.smoothing_coefficient > 0.0 && self.smoothing_coefficient < 1.0) {
            return Err(Error::config(
                "smoothing_coefficient must lie in (0, 1)",
            ));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::config("divergence_factor must exceed 1"));
        }
        if !(self.decrease_delta > 0.0 && self.decrease_delta < 1.0) {
            return Err(Error::config("decrease_delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One sweep step: raw losses at the learning rate probed there.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepSample {
    pub step: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeTestResult {
    pub min_lr: f64,
    pub max_lr: f64,
    /// False when the validation loss never showed the sustained drop; the
    /// reported `min_lr` then falls back to `lr_lo`.
    pub min_lr_detected: bool,
    /// True when the sweep ended on divergence or a non-finite loss.
    pub diverged: bool,
    pub trace: Vec<SweepSample>,
}

/// Geometric interpolation between `lr_lo` and `lr_hi`:
/// `lr_lo * (lr_hi / lr_lo)^(t / (sweep_steps - 1))`.
pub fn lr_sweep(t: u32, cfg: &RangeTestConfig) -> Result<f64> {
    cfg.validate()?;
    if t >= cfg.sweep_steps {
        return Err(Error::StepOutOfRange {
            step: t as u64,
            last: (cfg.sweep_steps - 1) as u64,
        });
    }
    let frac = t as f64 / (cfg.sweep_steps - 1) as f64;
    Ok(cfg.lr_lo * (cfg.lr_hi / cfg.lr_lo).powf(frac))
}

/// Run the sweep against a trainer step-function.
///
/// The trainer must start from a fresh initialization; each call applies one
/// probe at the given learning rate and returns `(train_loss, val_loss)`,
/// with the validation loss computed on a fixed held-out batch. The sweep
/// stops early on divergence or the first non-finite loss (`max_lr` is then
/// the previous step's learning rate and the offending step is dropped from
/// the trace).
pub fn run_range_test(
    mut trainer: impl FnMut(f64) -> (f64, f64),
    cfg: &RangeTestConfig,
) -> Result<RangeTestResult> {
    cfg.validate()?;
    let mut trace: Vec<SweepSample> = Vec::with_capacity(cfg.sweep_steps as usize);
    let mut smoothed_train = Vec::with_capacity(cfg.sweep_steps as usize);

    let alpha = cfg.smoothing_coefficient;
    let mut ema_train = f64::NAN;
    let mut ema_val = f64::NAN;
    let mut initial_val = f64::NAN;
    let mut running_min = f64::INFINITY;

    let mut min_lr = cfg.lr_lo;
    let mut min_lr_detected = false;
    let mut below_streak: u32 = 0;
    let mut max_lr = cfg.lr_lo;
    let mut diverged = false;

    for t in 0..cfg.sweep_steps {
        let lr = lr_sweep(t, cfg)?;
        let (train_loss, val_loss) = trainer(lr);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            max_lr = if t == 0 { cfg.lr_lo } else { trace[t as usize - 1].lr };
            diverged = true;
            break;
        }
        trace.push(SweepSample {
            step: t,
            lr,
            train_loss,
            val_loss,
        });

        if t == 0 {
            ema_train = train_loss;
            ema_val = val_loss;
            initial_val = val_loss;
        } else {
            ema_train = alpha * train_loss + (1.0 - alpha) * ema_train;
            ema_val = alpha * val_loss + (1.0 - alpha) * ema_val;
        }
        smoothed_train.push(ema_train);

        // Sustained validation improvement marks the usable minimum.
        if !min_lr_detected {
            if ema_val < initial_val - cfg.decrease_delta * initial_val.abs() {
                below_streak += 1;
                if below_streak >= MIN_LR_PERSISTENCE {
                    min_lr = trace[(t + 1 - MIN_LR_PERSISTENCE) as usize].lr;
                    min_lr_detected = true;
                }
            } else {
                below_streak = 0;
            }
        }

        // Divergence: smoothed training loss blowing up past its best value.
        if ema_train > running_min + (cfg.divergence_factor - 1.0) * running_min.abs() {
            max_lr = if t == 0 { cfg.lr_lo } else { trace[t as usize - 1].lr };
            diverged = true;
            break;
        }
        running_min = running_min.min(ema_train);
    }

    if !diverged {
        // Plateau end: the last step whose smoothed loss sits within
        // decrease_delta of the best value seen.
        let threshold = running_min + cfg.decrease_delta * running_min.abs();
        let last_good = smoothed_train
            .iter()
            .rposition(|&l| l <= threshold)
            .unwrap_or(0);
        max_lr = trace
            .get(last_good)
            .map(|s| s.lr)
            .unwrap_or(cfg.lr_lo);
    }

    // Degenerate sweeps can detect a divergence before any improvement;
    // keep the reported window ordered.
    if min_lr > max_lr {
        min_lr = max_lr;
    }

    Ok(RangeTestResult {
        min_lr,
        max_lr,
        min_lr_detected,
        diverged,
        trace,
    })
}
