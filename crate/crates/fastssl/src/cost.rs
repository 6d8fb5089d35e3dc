//! FLOPs accounting for training plans.
//!
//! A [`FlopsProfile`] maps resolution to the cost of one forward pass,
//! either analytically (pure quadratic scaling) or from measurements taken
//! by the simulator's per-layer counter. [`plan_flops`] prices a whole plan,
//! including the selection-pass overhead when hard augmentation mining is
//! enabled, and [`compare`] folds two plans into a speedup report.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hard_augment::SelectionConfig;

/// FLOPs-counting convention used throughout the crate, printed in reports
/// so the numbers are interpretable.
pub const FLOPS_CONVENTION: &str =
    "forward = 2 x multiply-accumulates over conv/dense layers; backward = 2 x forward; \
     iteration_cost_ratio = full iteration cost in forward passes";

#[derive(Debug, Clone, PartialEq)]
enum ProfileSource {
    /// `forward(r) = unit_flops * r^2`.
    Quadratic { unit_flops: f64 },
    /// Explicit measurements per resolution. With `quadratic_fill`, missing
    /// resolutions are scaled quadratically from the nearest entry.
    Measured {
        entries: BTreeMap<u32, f64>,
        quadratic_fill: bool,
    },
}

/// Cost of one forward pass as a function of input resolution, plus the
/// iteration-to-forward cost ratio `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsProfile {
    source: ProfileSource,
    pub iteration_cost_ratio: f64,
}

/// Default iteration cost in forward passes: two views per iteration, each
/// costing one forward plus a backward at twice the forward.
pub const DEFAULT_ITERATION_COST_RATIO: f64 = 6.0;

impl FlopsProfile {
    /// Analytic profile with `forward(r) = unit_flops * r^2`.
    pub fn quadratic(unit_flops: f64, iteration_cost_ratio: f64) -> Result<Self> {
        if !(unit_flops > 0.0) {
            return Err(Error::config("unit_flops must be positive"));
        }
        check_ratio(iteration_cost_ratio)?;
        Ok(FlopsProfile {
            source: ProfileSource::Quadratic { unit_flops },
            iteration_cost_ratio,
        })
    }

    /// Profile from measured (resolution, forward FLOPs) pairs. Counts must
    /// be positive and strictly increasing in resolution.
    pub fn measured(
        entries: impl IntoIterator<Item = (u32, f64)>,
        iteration_cost_ratio: f64,
        quadratic_fill: bool,
    ) -> Result<Self> {
        check_ratio(iteration_cost_ratio)?;
        let entries: BTreeMap<u32, f64> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(Error::config("measured profile needs at least one entry"));
        }
        let mut prev: Option<f64> = None;
        for (&r, &flops) in &entries {
            if !(flops > 0.0) || !flops.is_finite() {
                return Err(Error::config(format!(
                    "flops for resolution {r} must be positive and finite, got {flops}"
                )));
            }
            if let Some(p) = prev {
                if flops <= p {
                    return Err(Error::config(
                        "forward FLOPs must be strictly increasing in resolution",
                    ));
                }
            }
            prev = Some(flops);
        }
        Ok(FlopsProfile {
            source: ProfileSource::Measured {
                entries,
                quadratic_fill,
            },
            iteration_cost_ratio,
        })
    }

    /// Forward-pass cost at the given resolution.
    pub fn forward_flops(&self, resolution: u32) -> Result<f64> {
        match &self.source {
            ProfileSource::Quadratic { unit_flops } => {
                Ok(unit_flops * resolution as f64 * resolution as f64)
            }
            ProfileSource::Measured {
                entries,
                quadratic_fill,
            } => {
                if let Some(&flops) = entries.get(&resolution) {
                    return Ok(flops);
                }
                if !quadratic_fill {
                    return Err(Error::MissingResolution { resolution });
                }
                // Scale quadratically from the nearest measured resolution.
                let (&near, &flops) = entries
                    .iter()
                    .min_by_key(|(&r, _)| r.abs_diff(resolution))
                    .expect("profile is non-empty");
                let ratio = resolution as f64 / near as f64;
                Ok(flops * ratio * ratio)
            }
        }
    }
}

fn check_ratio(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::config(format!(
            "iteration_cost_ratio must be positive and finite, got {c}"
        )));
    }
    Ok(())
}

/// A training plan priced by the cost model: one resolution per step, plus
/// the optional selection pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    resolutions: Vec<u32>,
    selection: Option<SelectionConfig>,
}

impl TrainingPlan {
    pub fn new(resolutions: Vec<u32>, selection: Option<SelectionConfig>) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(Error::config("a training plan needs at least one step"));
        }
        if let Some(sel) = &selection {
            sel.validate()?;
        }
        Ok(TrainingPlan {
            resolutions,
            selection,
        })
    }

    pub fn constant(total_steps: u64, resolution: u32) -> Result<Self> {
        TrainingPlan::new(vec![resolution; total_steps as usize], None)
    }

    /// Realize a progressive curriculum into a per-step plan.
    pub fn from_curriculum(plan: &crate::curriculum::ProgressivePlan) -> Result<Self> {
        TrainingPlan::new(crate::curriculum::step_resolutions(plan)?, None)
    }

    pub fn with_selection(mut self, selection: SelectionConfig) -> Result<Self> {
        selection.validate()?;
        self.selection = Some(selection);
        Ok(self)
    }

    pub fn total_steps(&self) -> u64 {
        self.resolutions.len() as u64
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn selection(&self) -> Option<&SelectionConfig> {
        self.selection.as_ref()
    }
}

/// Baseline-vs-efficient totals and speedup factors.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CostReport {
    pub baseline_flops: f64,
    pub efficient_flops: f64,
    /// Baseline steps / efficient steps.
    pub steps_ratio: f64,
    /// Baseline per-step cost / efficient per-step cost.
    pub per_step_ratio: f64,
    /// Baseline total / efficient total; equals the product of the two
    /// ratios up to rounding.
    pub combined_speedup: f64,
    pub convention: &'static str,
}

/// Total cost of a plan: per step, `C * forward(r_t)`, plus
/// `m * forward(r_sel)` when the selection pass is enabled.
pub fn plan_flops(plan: &TrainingPlan, profile: &FlopsProfile) -> Result<f64> {
    let c = profile.iteration_cost_ratio;
    let selection_cost = match &plan.selection {
        Some(sel) => {
            sel.num_positives as f64 * profile.forward_flops(sel.selection_resolution)?
        }
        None => 0.0,
    };
    let mut total = 0.0;
    for &r in &plan.resolutions {
        total += c * profile.forward_flops(r)? + selection_cost;
    }
    Ok(total)
}

/// Price both plans and report the speedup decomposition.
pub fn compare(
    baseline: &TrainingPlan,
    efficient: &TrainingPlan,
    profile: &FlopsProfile,
) -> Result<CostReport> {
    let baseline_flops = plan_flops(baseline, profile)?;
    let efficient_flops = plan_flops(efficient, profile)?;
    let steps_ratio = baseline.total_steps() as f64 / efficient.total_steps() as f64;
    let per_step_ratio = (baseline_flops / baseline.total_steps() as f64)
        / (efficient_flops / efficient.total_steps() as f64);
    Ok(CostReport {
        baseline_flops,
        efficient_flops,
        steps_ratio,
        per_step_ratio,
        combined_speedup: baseline_flops / efficient_flops,
        convention: FLOPS_CONVENTION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::ProgressivePlan;
    use approx::assert_relative_eq;

    #[test]
    fn constant_plan_costs_steps_times_iteration_cost() {
        let profile = FlopsProfile::measured([(32, 1000.0)], 6.0, false).unwrap();
        let plan = TrainingPlan::constant(50, 32).unwrap();
        assert_eq!(plan_flops(&plan, &profile).unwrap(), 50.0 * 6.0 * 1000.0);
    }

    #[test]
    fn missing_resolution_errors_without_fill_and_scales_with_it() {
        let strict = FlopsProfile::measured([(32, 1000.0)], 6.0, false).unwrap();
        assert!(matches!(
            strict.forward_flops(16),
            Err(Error::MissingResolution { resolution: 16 })
        ));
        let filled = FlopsProfile::measured([(32, 1000.0)], 6.0, true).unwrap();
        assert_relative_eq!(filled.forward_flops(16).unwrap(), 250.0, max_relative = 1e-12);
    }

    #[test]
    fn plan_without_selection_equals_plan_with_selection_disabled() {
        let profile = FlopsProfile::quadratic(2.0, 6.0).unwrap();
        let bare = TrainingPlan::constant(20, 32).unwrap();
        // "Disabled" is the absence of a selection config.
        let same = TrainingPlan::new(vec![32; 20], None).unwrap();
        assert_eq!(
            plan_flops(&bare, &profile).unwrap(),
            plan_flops(&same, &profile).unwrap()
        );
    }

    #[test]
    fn selection_adds_m_forwards_at_selection_resolution() {
        let profile = FlopsProfile::quadratic(1.0, 6.0).unwrap();
        let plan = TrainingPlan::constant(10, 32).unwrap();
        let sel = SelectionConfig::new(4, 8, 32, 6.0).unwrap();
        let with_sel = plan.clone().with_selection(sel).unwrap();
        let bare = plan_flops(&plan, &profile).unwrap();
        let mined = plan_flops(&with_sel, &profile).unwrap();
        assert_eq!(mined - bare, 10.0 * 4.0 * 64.0);
    }

    #[test]
    fn identical_plans_compare_to_exactly_one() {
        let profile = FlopsProfile::quadratic(3.0, 6.0).unwrap();
        let plan = TrainingPlan::constant(40, 32).unwrap();
        let report = compare(&plan, &plan, &profile).unwrap();
        assert_eq!(report.combined_speedup, 1.0);
        assert_eq!(report.steps_ratio, 1.0);
        assert_eq!(report.per_step_ratio, 1.0);
    }

    #[test]
    fn reference_ratio_product_reproduces_the_headline_speedup() {
        // Steps ratio 1.7 and per-step ratio 1.4 combine to 2.38.
        let profile = FlopsProfile::measured([(160, 1000.0), (224, 1400.0)], 6.0, false).unwrap();
        let baseline = TrainingPlan::constant(170, 224).unwrap();
        let efficient = TrainingPlan::constant(100, 160).unwrap();
        let report = compare(&baseline, &efficient, &profile).unwrap();
        assert_relative_eq!(report.steps_ratio, 1.7, max_relative = 1e-12);
        assert_relative_eq!(report.per_step_ratio, 1.4, max_relative = 1e-12);
        assert_relative_eq!(
            report.combined_speedup,
            report.steps_ratio * report.per_step_ratio,
            max_relative = 1e-12
        );
        assert_relative_eq!(report.combined_speedup, 2.38, max_relative = 1e-12);
    }

    #[test]
    fn profile_scaling_leaves_all_ratios_unchanged() {
        let base = FlopsProfile::quadratic(1.0, 6.0).unwrap();
        let scaled = FlopsProfile::quadratic(7.5, 6.0).unwrap();
        let baseline = TrainingPlan::constant(200, 224).unwrap();
        let curriculum = ProgressivePlan::new(120, 10, 96, 224, 32, 4.0, 6.0).unwrap();
        let efficient = TrainingPlan::from_curriculum(&curriculum).unwrap();
        let a = compare(&baseline, &efficient, &base).unwrap();
        let b = compare(&baseline, &efficient, &scaled).unwrap();
        assert_relative_eq!(a.combined_speedup, b.combined_speedup, max_relative = 1e-12);
        assert_relative_eq!(a.per_step_ratio, b.per_step_ratio, max_relative = 1e-12);
        assert_eq!(a.steps_ratio, b.steps_ratio);
    }

    #[test]
    fn adding_selection_overhead_strictly_decreases_speedup() {
        let profile = FlopsProfile::quadratic(1.0, 6.0).unwrap();
        let baseline = TrainingPlan::constant(200, 32).unwrap();
        let curriculum = ProgressivePlan::new(120, 10, 16, 32, 4, 4.0, 6.0).unwrap();
        let plain = TrainingPlan::from_curriculum(&curriculum).unwrap();
        let sel = SelectionConfig::new(4, 8, 32, 6.0).unwrap();
        let mined = plain.clone().with_selection(sel).unwrap();
        let without = compare(&baseline, &plain, &profile).unwrap();
        let with = compare(&baseline, &mined, &profile).unwrap();
        assert!(with.combined_speedup < without.combined_speedup);
    }

    #[test]
    fn quadratic_per_step_ratio_equals_curriculum_cost_ratio() {
        let profile = FlopsProfile::quadratic(4.2, 6.0).unwrap();
        let curriculum = ProgressivePlan::new(120, 10, 96, 224, 32, 4.0, 6.0).unwrap();
        let efficient = TrainingPlan::from_curriculum(&curriculum).unwrap();
        let baseline = TrainingPlan::constant(200, 224).unwrap();
        let report = compare(&baseline, &efficient, &profile).unwrap();
        let expected = crate::curriculum::cost_ratio(&curriculum).unwrap();
        assert_relative_eq!(report.per_step_ratio, expected, max_relative = 1e-12);
    }

    #[test]
    fn baseline_vs_staircase_speedup_matches_direct_summation() {
        let profile = FlopsProfile::quadratic(1.0, 6.0).unwrap();
        let curriculum = ProgressivePlan::new(120, 10, 96, 224, 32, 4.0, 6.0).unwrap();
        let efficient = TrainingPlan::from_curriculum(&curriculum).unwrap();
        let baseline = TrainingPlan::constant(200, 224).unwrap();
        let report = compare(&baseline, &efficient, &profile).unwrap();
        // Oracle: direct summation over both step sequences.
        let sum_eff: f64 = efficient
            .resolutions()
            .iter()
            .map(|&r| 6.0 * (r as f64 * r as f64))
            .sum();
        let sum_base = 200.0 * 6.0 * (224.0 * 224.0);
        assert_relative_eq!(
            report.combined_speedup,
            sum_base / sum_eff,
            max_relative = 1e-12
        );
    }

    #[test]
    fn measured_profile_rejects_non_increasing_counts() {
        assert!(FlopsProfile::measured([(16, 100.0), (32, 100.0)], 6.0, false).is_err());
        assert!(FlopsProfile::measured([(16, 100.0), (32, 50.0)], 6.0, false).is_err());
    }
}
