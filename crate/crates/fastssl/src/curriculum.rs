//! Progressive resolution staircase and augmentation-magnitude ramp.
//!
//! Training runs at full resolution during the warm-up phase, drops to the
//! minimum resolution, then climbs back up in equal-length stages while the
//! augmentation magnitude ramps linearly over the whole run. Resolutions are
//! snapped to a quantum (32 px at full scale, where most backbones have five
//! pooling stages; 4 px in the desk-scale simulator).

use crate::error::{Error, Result};

/// Staircase / ramp parameters. `num_stages` defaults to
/// `(res_max - res_min) / quantum + 1` so each stage lands exactly on a
/// quantum multiple; the full-resolution warm-up segment is counted
/// separately from the staircase.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressivePlan {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub res_min: u32,
    pub res_max: u32,
    pub quantum: u32,
    pub num_stages: u32,
    pub mag_min: f64,
    pub mag_max: f64,
}

/// Curriculum values at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumPoint {
    pub step: u64,
    pub resolution: u32,
    pub magnitude: f64,
}

impl ProgressivePlan {
    /// Plan with the default stage count derived from the quantum.
    pub fn new(
        total_steps: u64,
        warmup_steps: u64,
        res_min: u32,
        res_max: u32,
        quantum: u32,
        mag_min: f64,
        mag_max: f64,
    ) -> Result<Self> {
        if quantum == 0 {
            return Err(Error::config("resolution quantum must be positive"));
        }
        if res_max < res_min {
            return Err(Error::config(format!(
                "res_min ({res_min}) must not exceed res_max ({res_max})"
            )));
        }
        let num_stages = (res_max - res_min) / quantum + 1;
        let plan = ProgressivePlan {
            total_steps,
            warmup_steps,
            res_min,
            res_max,
            quantum,
            num_stages,
            mag_min,
            mag_max,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Degenerate plan: constant resolution and constant magnitude.
    pub fn constant(total_steps: u64, resolution: u32, magnitude: f64) -> Result<Self> {
        ProgressivePlan::new(
            total_steps,
            0,
            resolution,
            resolution,
            resolution,
            magnitude,
            magnitude,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be positive"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::config(format!(
                "warmup_steps ({}) must be smaller than total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.quantum == 0 {
            return Err(Error::config("resolution quantum must be positive"));
        }
        if self.res_min == 0 || self.res_max < self.res_min {
            return Err(Error::config(format!(
                "need 0 < res_min <= res_max, got {}..{}",
                self.res_min, self.res_max
            )));
        }
        for (name, r) in [("res_min", self.res_min), ("res_max", self.res_max)] {
            if r % self.quantum != 0 {
                return Err(Error::config(format!(
                    "{name} ({r}) must be a multiple of the quantum ({})",
                    self.quantum
                )));
            }
        }
        if self.num_stages == 0 {
            return Err(Error::config("num_stages must be at least 1"));
        }
        // Each stage needs at least one step so the staircase actually ends
        // at res_max.
        if self.num_stages > 1
            && self.total_steps - self.warmup_steps < self.num_stages as u64
        {
            return Err(Error::config(format!(
                "progressive phase ({} steps) is shorter than num_stages ({})",
                self.total_steps - self.warmup_steps,
                self.num_stages
            )));
        }
        if self.mag_min > self.mag_max {
            return Err(Error::config(format!(
                "mag_min ({}) must not exceed mag_max ({})",
                self.mag_min, self.mag_max
            )));
        }
        Ok(())
    }

    /// Resolution and magnitude at step `t`.
    pub fn point(&self, t: u64) -> Result<CurriculumPoint> {
        Ok(CurriculumPoint {
            step: t,
            resolution: resolution_at(t, self)?,
            magnitude: magnitude_at(t, self)?,
        })
    }

    /// The distinct stage resolutions in schedule order.
    pub fn stage_resolutions(&self) -> Vec<u32> {
        (0..self.num_stages)
            .map(|s| self.stage_resolution(s))
            .collect()
    }

    fn stage_resolution(&self, stage: u32) -> u32 {
        if self.num_stages <= 1 {
            return self.res_max;
        }
        let span = (self.res_max - self.res_min) as f64;
        let raw = self.res_min as f64 + stage as f64 * span / (self.num_stages - 1) as f64;
        round_to_quantum(raw, self.quantum).clamp(self.res_min, self.res_max)
    }
}

/// Nearest multiple of `quantum`, ties rounding up.
fn round_to_quantum(value: f64, quantum: u32) -> u32 {
    let units = (value / quantum as f64 + 0.5).floor();
    (units.max(0.0) as u32) * quantum
}

fn check_step(t: u64, plan: &ProgressivePlan) -> Result<()> {
    if t > plan.total_steps {
        return Err(Error::StepOutOfRange {
            step: t,
            last: plan.total_steps,
        });
    }
    Ok(())
}

/// Resolution at step `t`: `res_max` during warm-up, then the staircase from
/// `res_min` back up to `res_max` in `num_stages` equal-length stages.
pub fn resolution_at(t: u64, plan: &ProgressivePlan) -> Result<u32> {
    check_step(t, plan)?;
    plan.validate()?;
    if t < plan.warmup_steps || plan.num_stages <= 1 {
        return Ok(plan.res_max);
    }
    let span = plan.total_steps - plan.warmup_steps;
    let stage = (((t - plan.warmup_steps) as u128 * plan.num_stages as u128) / span as u128)
        .min((plan.num_stages - 1) as u128) as u32;
    Ok(plan.stage_resolution(stage))
}

/// Augmentation magnitude at step `t`: a linear ramp from `mag_min` at the
/// start of the run to `mag_max` at the end (warm-up included).
pub fn magnitude_at(t: u64, plan: &ProgressivePlan) -> Result<f64> {
    check_step(t, plan)?;
    plan.validate()?;
    if plan.mag_min == plan.mag_max {
        return Ok(plan.mag_min);
    }
    let u = t as f64 / plan.total_steps as f64;
    Ok(plan.mag_min * (1.0 - u) + plan.mag_max * u)
}

/// The realized per-step resolution sequence, one entry per step in
/// `0..total_steps`.
pub fn step_resolutions(plan: &ProgressivePlan) -> Result<Vec<u32>> {
    (0..plan.total_steps)
        .map(|t| resolution_at(t, plan))
        .collect()
}

/// Mean per-step speedup factor of an arbitrary resolution sequence under a
/// quadratic cost model: `(1/L) * sum_t (res_max / r_t)^2`.
pub fn mean_speedup_over(resolutions: &[u32], res_max: u32) -> f64 {
    let sum: f64 = resolutions
        .iter()
        .map(|&r| {
            let ratio = res_max as f64 / r as f64;
            ratio * ratio
        })
        .sum();
    sum / resolutions.len() as f64
}

/// Quadratic-cost ratio of a constant full-resolution run to the sequence:
/// `L * res_max^2 / sum_t r_t^2`.
pub fn cost_ratio_over(resolutions: &[u32], res_max: u32) -> f64 {
    let sum: f64 = resolutions
        .iter()
        .map(|&r| r as f64 * r as f64)
        .sum();
    resolutions.len() as f64 * (res_max as f64 * res_max as f64) / sum
}

/// Mean per-step speedup of the plan's realized step sequence.
pub fn mean_speedup(plan: &ProgressivePlan) -> Result<f64> {
    Ok(mean_speedup_over(&step_resolutions(plan)?, plan.res_max))
}

/// FLOPs-weighted effective speedup of the plan's realized step sequence.
/// Never larger than [`mean_speedup`]: a mean of per-step ratios dominates
/// the corresponding ratio of sums.
pub fn cost_ratio(plan: &ProgressivePlan) -> Result<f64> {
    Ok(cost_ratio_over(&step_resolutions(plan)?, plan.res_max))
}
