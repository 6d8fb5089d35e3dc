//! Closed-form learning-rate and momentum schedules.
//!
//! Four schedules share one config type: plain cosine annealing, cosine
//! annealing with a linear warm-up, the one-cycle schedule with anti-phased
//! momentum, and a fixed-warm-up one-cycle variant whose ramp keeps the same
//! length when the total run is extended (only the decay phase stretches).
//!
//! All evaluation is a pure function of `(step, config)`, so values can be
//! queried from any thread in any order. The step domain is the discrete
//! iteration index; callers working in epochs convert with
//! `epochs * iterations_per_epoch`. Evaluation at `t = total_steps` is
//! defined (it returns the limit values) so exporters can emit `L + 1` rows.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Which of the four schedule shapes to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Half-cosine decay from `lr_max` to zero, constant momentum.
    CosineAnnealing,
    /// Linear ramp to `lr_max` over `warmup_steps`, then cosine decay.
    CosineWarmup,
    /// Cosine ramp up then down, with the first phase a fixed *fraction*
    /// of the run; momentum moves in anti-phase.
    OneCycle,
    /// Like [`ScheduleKind::OneCycle`] but the first phase spans exactly
    /// `warmup_steps` regardless of the total length.
    FixedOneCycle,
}

/// Parameters for all schedule kinds. Unused fields are ignored by kinds
/// that do not need them (`phase_fraction` only matters for `OneCycle`,
/// `warmup_steps` for `CosineWarmup` and `FixedOneCycle`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Total number of optimizer steps `L`.
    pub total_steps: u64,
    /// Warm-up length in steps.
    pub warmup_steps: u64,
    /// Fraction of the run spent in the first phase (`OneCycle` only).
    pub phase_fraction: f64,
    /// Peak learning rate.
    pub lr_max: f64,
    /// Lower momentum bound, reached at the end of the ramp phase.
    pub beta_low: f64,
    /// Upper momentum bound, held at both ends of the run. Non-cyclic
    /// kinds report this value as their constant momentum.
    pub beta_high: f64,
}

/// Default constant momentum for the non-cyclic schedules.
pub const DEFAULT_MOMENTUM: f64 = 0.9;
/// Default momentum bounds for the cyclic schedules.
pub const DEFAULT_BETA_LOW: f64 = 0.85;
pub const DEFAULT_BETA_HIGH: f64 = 0.95;
/// Default first-phase fraction for the proportional one-cycle schedule.
pub const DEFAULT_PHASE_FRACTION: f64 = 0.3;

impl ScheduleConfig {
    pub fn cosine_annealing(total_steps: u64, lr_max: f64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::CosineAnnealing,
            total_steps,
            warmup_steps: 0,
            phase_fraction: DEFAULT_PHASE_FRACTION,
            lr_max,
            beta_low: DEFAULT_MOMENTUM,
            beta_high: DEFAULT_MOMENTUM,
        }
    }

    pub fn cosine_warmup(total_steps: u64, warmup_steps: u64, lr_max: f64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::CosineWarmup,
            warmup_steps,
            ..Self::cosine_annealing(total_steps, lr_max)
        }
    }

    pub fn one_cycle(
        total_steps: u64,
        phase_fraction: f64,
        lr_max: f64,
        beta_low: f64,
        beta_high: f64,
    ) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::OneCycle,
            total_steps,
            warmup_steps: 0,
            phase_fraction,
            lr_max,
            beta_low,
            beta_high,
        }
    }

    pub fn fixed_one_cycle(
        total_steps: u64,
        warmup_steps: u64,
        lr_max: f64,
        beta_low: f64,
        beta_high: f64,
    ) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::FixedOneCycle,
            total_steps,
            warmup_steps,
            phase_fraction: DEFAULT_PHASE_FRACTION,
            lr_max,
            beta_low,
            beta_high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be positive"));
        }
        if !(self.lr_max > 0.0) || !self.lr_max.is_finite() {
            return Err(Error::config(format!(
                "lr_max must be a positive finite value, got {}",
                self.lr_max
            )));
        }
        for (name, beta) in [("beta_low", self.beta_low), ("beta_high", self.beta_high)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if self.beta_low > self.beta_high {
            return Err(Error::config(format!(
                "beta_low ({}) must not exceed beta_high ({})",
                self.beta_low, self.beta_high
            )));
        }
        match self.kind {
            ScheduleKind::CosineAnnealing => {}
            ScheduleKind::CosineWarmup | ScheduleKind::FixedOneCycle => {
                if self.warmup_steps == 0 {
                    return Err(Error::config("warmup_steps must be at least 1"));
                }
                if self.warmup_steps >= self.total_steps {
                    return Err(Error::config(format!(
                        "warmup_steps ({}) must be smaller than total_steps ({})",
                        self.warmup_steps, self.total_steps
                    )));
                }
            }
            ScheduleKind::OneCycle => {
                if !(self.phase_fraction > 0.0 && self.phase_fraction < 1.0) {
                    return Err(Error::config(format!(
                        "phase_fraction must lie in (0, 1), got {}",
                        self.phase_fraction
                    )));
                }
                if self.phase_fraction * (self.total_steps as f64) < 1.0 {
                    return Err(Error::config(
                        "phase_fraction * total_steps must be at least 1 step",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluate the configured schedule at step `t`.
    pub fn point(&self, t: u64) -> Result<SchedulePoint> {
        self.validate()?;
        match self.kind {
            ScheduleKind::CosineAnnealing => Ok(SchedulePoint {
                step: t,
                lr: cosine_annealing(t, self)?,
                momentum: self.beta_high,
            }),
            ScheduleKind::CosineWarmup => Ok(SchedulePoint {
                step: t,
                lr: cosine_warmup(t, self)?,
                momentum: self.beta_high,
            }),
            ScheduleKind::OneCycle => one_cycle(t, self),
            ScheduleKind::FixedOneCycle => fixed_one_cycle(t, self),
        }
    }
}

/// Learning rate and momentum at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePoint {
    pub step: u64,
    pub lr: f64,
    pub momentum: f64,
}

/// Gradient-noise-scale diagnostic; see [`noise_scale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScaleReport {
    pub noise_scale: f64,
    pub lr: f64,
    pub dataset_size: u64,
    pub batch_size: u64,
    pub momentum: f64,
}

fn check_step(t: u64, cfg: &ScheduleConfig) -> Result<()> {
    if t > cfg.total_steps {
        return Err(Error::StepOutOfRange {
            step: t,
            last: cfg.total_steps,
        });
    }
    Ok(())
}

/// Cosine window `(cos(frac * pi) + 1) / 2`, mapping 0 -> 1 and 1 -> 0
/// exactly. All schedule branches are built from this plus convex blends so
/// endpoint identities hold without rounding slack.
fn half_cos(frac: f64) -> f64 {
    ((frac * PI).cos() + 1.0) / 2.0
}

fn blend(a: f64, b: f64, weight_b: f64) -> f64 {
    a * (1.0 - weight_b) + b * weight_b
}

/// lr(t) = lr_max * (cos(t/L * pi) + 1) / 2.
pub fn cosine_annealing(t: u64, cfg: &ScheduleConfig) -> Result<f64> {
    check_step(t, cfg)?;
    Ok(cfg.lr_max * half_cos(t as f64 / cfg.total_steps as f64))
}

/// Linear ramp `t / warmup * lr_max` for `t < warmup`, then cosine decay
/// over the remaining `L - warmup` steps.
pub fn cosine_warmup(t: u64, cfg: &ScheduleConfig) -> Result<f64> {
    check_step(t, cfg)?;
    if cfg.warmup_steps == 0 || cfg.warmup_steps >= cfg.total_steps {
        return Err(Error::config(format!(
            "cosine warm-up needs 1 <= warmup_steps < total_steps, got {}/{}",
            cfg.warmup_steps, cfg.total_steps
        )));
    }
    if t < cfg.warmup_steps {
        Ok(t as f64 / cfg.warmup_steps as f64 * cfg.lr_max)
    } else {
        let frac = (t - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
        Ok(cfg.lr_max * half_cos(frac))
    }
}

/// Shared two-phase evaluation for the cyclic schedules: the learning rate
/// rises 0 -> lr_max over `ramp` steps then decays to 0 over the rest, while
/// momentum runs beta_high -> beta_low -> beta_high in anti-phase.
fn cyclic_point(t: u64, ramp: f64, cfg: &ScheduleConfig) -> SchedulePoint {
    let total = cfg.total_steps as f64;
    if (t as f64) < ramp {
        // c goes 1 -> 0 over the ramp.
        let c = half_cos(t as f64 / ramp);
        SchedulePoint {
            step: t,
            lr: cfg.lr_max * (1.0 - c),
            momentum: blend(cfg.beta_low, cfg.beta_high, c),
        }
    } else {
        let c = half_cos((t as f64 - ramp) / (total - ramp));
        SchedulePoint {
            step: t,
            lr: cfg.lr_max * c,
            momentum: blend(cfg.beta_high, cfg.beta_low, c),
        }
    }
}

/// One-cycle schedule whose first phase spans `phase_fraction * total_steps`.
pub fn one_cycle(t: u64, cfg: &ScheduleConfig) -> Result<SchedulePoint> {
    check_step(t, cfg)?;
    if !(cfg.phase_fraction > 0.0 && cfg.phase_fraction < 1.0) {
        return Err(Error::config(format!(
            "phase_fraction must lie in (0, 1), got {}",
            cfg.phase_fraction
        )));
    }
    Ok(cyclic_point(
        t,
        cfg.phase_fraction * cfg.total_steps as f64,
        cfg,
    ))
}

/// One-cycle variant with a fixed-length ramp: the first phase spans exactly
/// `warmup_steps` no matter how long the run is, so extending `total_steps`
/// stretches only the decay phase. The warm-up trace is therefore a function
/// of `(t, warmup_steps, lr_max, beta_low, beta_high)` alone.
pub fn fixed_one_cycle(t: u64, cfg: &ScheduleConfig) -> Result<SchedulePoint> {
    check_step(t, cfg)?;
    if cfg.warmup_steps == 0 || cfg.warmup_steps >= cfg.total_steps {
        return Err(Error::config(format!(
            "fixed one-cycle needs 1 <= warmup_steps < total_steps, got {}/{}",
            cfg.warmup_steps, cfg.total_steps
        )));
    }
    Ok(cyclic_point(t, cfg.warmup_steps as f64, cfg))
}

/// Gradient noise scale `g = lr * |D| / (b * (1 - momentum))`.
///
/// This is the quantity the cyclic schedules hold in check: `g` grows with
/// the learning rate and shrinks with batch size, and raising momentum
/// amplifies it through the `1/(1 - momentum)` factor. Momentum exactly 1 is
/// a singularity and is rejected.
pub fn noise_scale(
    lr: f64,
    dataset_size: u64,
    batch_size: u64,
    momentum: f64,
) -> Result<NoiseScaleReport> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    if dataset_size == 0 {
        return Err(Error::config("dataset_size must be at least 1"));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::config(format!(
            "lr must be a positive finite value, got {lr}"
        )));
    }
    if momentum >= 1.0 {
        return Err(Error::invalid(format!(
            "noise scale is singular at momentum >= 1 (got {momentum})"
        )));
    }
    Ok(NoiseScaleReport {
        noise_scale: lr * dataset_size as f64 / (batch_size as f64 * (1.0 - momentum)),
        lr,
        dataset_size,
        batch_size,
        momentum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn f1clr(total: u64, warmup: u64) -> ScheduleConfig {
        ScheduleConfig::fixed_one_cycle(total, warmup, 0.2, 0.85, 0.95)
    }

    #[test]
    fn cosine_annealing_endpoints_and_midpoint() {
        let cfg = ScheduleConfig::cosine_annealing(200, 0.1);
        assert_eq!(cosine_annealing(0, &cfg).unwrap(), 0.1);
        assert_relative_eq!(cosine_annealing(100, &cfg).unwrap(), 0.05, max_relative = 1e-12);
        assert_eq!(cosine_annealing(200, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn cosine_annealing_rejects_out_of_range_step() {
        let cfg = ScheduleConfig::cosine_annealing(200, 0.1);
        assert!(matches!(
            cosine_annealing(201, &cfg),
            Err(Error::StepOutOfRange { step: 201, last: 200 })
        ));
    }

    #[test]
    fn cosine_warmup_is_continuous_at_the_boundary() {
        let cfg = ScheduleConfig::cosine_warmup(500, 50, 0.16);
        // Both branch formulas evaluated at t = warmup give lr_max.
        let linear = 50.0 / 50.0 * cfg.lr_max;
        assert_eq!(cosine_warmup(50, &cfg).unwrap(), cfg.lr_max);
        assert_relative_eq!(linear, cosine_warmup(50, &cfg).unwrap(), max_relative = 1e-12);
        // Linear midpoint.
        assert_relative_eq!(cosine_warmup(25, &cfg).unwrap(), 0.08, max_relative = 1e-12);
    }

    #[test]
    fn cosine_warmup_rejects_warmup_not_shorter_than_total() {
        let mut cfg = ScheduleConfig::cosine_warmup(100, 100, 0.1);
        assert!(cosine_warmup(0, &cfg).is_err());
        cfg.warmup_steps = 0;
        assert!(cosine_warmup(0, &cfg).is_err());
    }

    #[test]
    fn one_cycle_hits_the_three_anchor_points() {
        let cfg = ScheduleConfig::one_cycle(1000, 0.3, 0.4, 0.85, 0.95);
        let start = one_cycle(0, &cfg).unwrap();
        assert_eq!(start.lr, 0.0);
        assert_eq!(start.momentum, 0.95);
        let peak = one_cycle(300, &cfg).unwrap();
        assert_relative_eq!(peak.lr, 0.4, max_relative = 1e-12);
        assert_relative_eq!(peak.momentum, 0.85, max_relative = 1e-12);
        let end = one_cycle(1000, &cfg).unwrap();
        assert_eq!(end.lr, 0.0);
        assert_eq!(end.momentum, 0.95);
    }

    #[test]
    fn one_cycle_rejects_bad_phase_fraction() {
        for rho in [0.0, 1.0, -0.2, 1.5] {
            let cfg = ScheduleConfig::one_cycle(100, rho, 0.1, 0.85, 0.95);
            assert!(one_cycle(0, &cfg).is_err(), "rho = {rho}");
        }
    }

    #[test]
    fn fixed_one_cycle_midpoint_and_peak() {
        let cfg = f1clr(400, 80);
        // Halfway up the ramp the cosine window sits at 1/2.
        assert_relative_eq!(fixed_one_cycle(40, &cfg).unwrap().lr, 0.1, max_relative = 1e-12);
        let peak = fixed_one_cycle(80, &cfg).unwrap();
        assert_eq!(peak.lr, 0.2);
        assert_eq!(peak.momentum, 0.85);
        let end = fixed_one_cycle(400, &cfg).unwrap();
        assert_eq!(end.lr, 0.0);
        assert_eq!(end.momentum, 0.95);
    }

    #[test]
    fn fixed_one_cycle_warmup_trace_is_independent_of_total_length() {
        let short = f1clr(160, 80);
        let long = f1clr(400, 80);
        for t in 0..=80 {
            let a = fixed_one_cycle(t, &short).unwrap();
            let b = fixed_one_cycle(t, &long).unwrap();
            if t < 80 {
                assert_eq!(a.lr, b.lr, "t = {t}");
                assert_eq!(a.momentum, b.momentum, "t = {t}");
            }
        }
    }

    #[test]
    fn fixed_one_cycle_monotone_and_anti_phased() {
        let cfg = f1clr(240, 60);
        let mut prev = cfg.point(0).unwrap();
        for t in 1..=240u64 {
            let cur = cfg.point(t).unwrap();
            if t <= 60 {
                assert!(cur.lr >= prev.lr, "lr dipped during the ramp at t = {t}");
                assert!(cur.momentum <= prev.momentum, "momentum rose during the ramp at t = {t}");
            } else {
                assert!(cur.lr <= prev.lr, "lr rose during the decay at t = {t}");
                assert!(cur.momentum >= prev.momentum, "momentum dipped during the decay at t = {t}");
            }
            assert!(cur.lr >= 0.0 && cur.lr <= cfg.lr_max);
            assert!(cur.momentum >= cfg.beta_low && cur.momentum <= cfg.beta_high);
            prev = cur;
        }
    }

    #[test]
    fn non_cyclic_kinds_hold_momentum_constant() {
        let cfg = ScheduleConfig::cosine_annealing(100, 0.1);
        for t in [0, 37, 100] {
            assert_eq!(cfg.point(t).unwrap().momentum, DEFAULT_MOMENTUM);
        }
    }

    #[test]
    fn noise_scale_formula_and_proportionality() {
        let report = noise_scale(0.1, 10_000, 128, 0.9).unwrap();
        assert_relative_eq!(report.noise_scale, 78.125, max_relative = 1e-12);
        // Momentum-free case collapses to lr * |D| / b.
        let plain = noise_scale(0.1, 10_000, 128, 0.0).unwrap();
        assert_relative_eq!(plain.noise_scale, 0.1 * 10_000.0 / 128.0, max_relative = 1e-12);
        // Doubling the batch size halves g.
        let doubled = noise_scale(0.1, 10_000, 256, 0.9).unwrap();
        assert_relative_eq!(doubled.noise_scale, report.noise_scale / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn noise_scale_rejects_momentum_one() {
        assert!(noise_scale(0.1, 1000, 32, 1.0).is_err());
    }

    #[test]
    fn validate_rejects_inverted_momentum_bounds() {
        let cfg = ScheduleConfig::fixed_one_cycle(100, 10, 0.1, 0.97, 0.85);
        assert!(cfg.validate().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_cyclic() -> impl Strategy<Value = ScheduleConfig> {
            (2u64..2000, 0.01f64..2.0, 0.5f64..0.9).prop_flat_map(|(total, lr, beta_low)| {
                (1..total, Just(total), Just(lr), Just(beta_low), (beta_low..0.99))
                    .prop_map(|(warmup, total, lr, lo, hi)| {
                        ScheduleConfig::fixed_one_cycle(total, warmup, lr, lo, hi)
                    })
            })
        }

        proptest! {
            #[test]
            fn cyclic_bounds_hold_everywhere(cfg in arb_cyclic(), frac in 0.0f64..=1.0) {
                let t = (frac * cfg.total_steps as f64).round() as u64;
                let p = fixed_one_cycle(t, &cfg).unwrap();
                prop_assert!(p.lr >= 0.0 && p.lr <= cfg.lr_max);
                prop_assert!(p.momentum >= cfg.beta_low && p.momentum <= cfg.beta_high);
            }

            #[test]
            fn cyclic_endpoints_exact(cfg in arb_cyclic()) {
                let start = fixed_one_cycle(0, &cfg).unwrap();
                let end = fixed_one_cycle(cfg.total_steps, &cfg).unwrap();
                prop_assert_eq!(start.lr, 0.0);
                prop_assert_eq!(end.lr, 0.0);
                prop_assert_eq!(start.momentum, cfg.beta_high);
                prop_assert_eq!(end.momentum, cfg.beta_high);
            }

            #[test]
            fn noise_scale_is_linear_in_lr(lr in 1e-4f64..1.0, d in 1u64..1_000_000, b in 1u64..4096, beta in 0.0f64..0.99) {
                let one = noise_scale(lr, d, b, beta).unwrap().noise_scale;
                let two = noise_scale(2.0 * lr, d, b, beta).unwrap().noise_scale;
                prop_assert!((two / one - 2.0).abs() < 1e-9);
            }
        }
    }
}
