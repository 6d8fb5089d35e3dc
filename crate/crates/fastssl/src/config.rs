//! Flat `key = value` experiment configuration.
//!
//! One file (or override list) fixes every hyperparameter of a run: the
//! schedule, the curriculum, hard augmentation mining, the synthetic
//! dataset, and bookkeeping like the kNN probe size and the seed. Unknown
//! keys are rejected, every parse error carries its line number, and
//! `parse_config(render_config(c)) == c` holds for any valid config.
//!
//! Defaults are the efficient desk-scale preset: fixed-warm-up one-cycle
//! schedule, progressive resolution 16 -> 32 with a 4 -> 6 magnitude ramp,
//! and four-view hardest-pair mining at selection resolution 8.

use std::collections::HashMap;

use crate::curriculum::ProgressivePlan;
use crate::error::{Error, Result};
use crate::hard_augment::SelectionConfig;
use crate::schedule::{ScheduleConfig, ScheduleKind};
use crate::sim::dataset::SynthDatasetConfig;
use crate::sim::model::ModelSpec;
use crate::sim::train::{steps_per_epoch, RunPlan};
use crate::sim::AugmentationPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub schedule: ScheduleKind,
    pub epochs: u64,
    pub warmup_epochs: u64,
    pub phase_fraction: f64,
    pub lr_max: f64,
    /// Constant momentum for the non-cyclic schedules.
    pub momentum: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    pub weight_decay: f64,
    pub batch_size: u64,
    /// Progressive resolution staircase plus magnitude ramp. When false the
    /// run trains at `min_resolution` with constant `min_magnitude`.
    pub progressive: bool,
    pub min_resolution: u32,
    pub resolution_quantum: u32,
    pub min_magnitude: f64,
    pub max_magnitude: f64,
    /// Views generated per sample; 2 disables hardest-pair mining.
    pub num_positives: u64,
    pub selection_resolution: u32,
    pub num_classes: u64,
    pub samples_per_class: u64,
    pub canvas_size: u64,
    pub image_size: u64,
    pub noise_std: f64,
    pub knn_k: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schedule: ScheduleKind::FixedOneCycle,
            epochs: 120,
            warmup_epochs: 20,
            phase_fraction: 0.3,
            lr_max: 0.05,
            momentum: 0.9,
            beta_low: 0.85,
            beta_high: 0.95,
            weight_decay: 5e-4,
            batch_size: 64,
            progressive: true,
            min_resolution: 16,
            resolution_quantum: 4,
            min_magnitude: 4.0,
            max_magnitude: 6.0,
            num_positives: 4,
            selection_resolution: 8,
            num_classes: 8,
            samples_per_class: 250,
            canvas_size: 48,
            image_size: 32,
            noise_std: 0.05,
            knn_k: 20,
            seed: 1,
        }
    }
}

/// Keys in canonical render order.
const KEYS: &[&str] = &[
    "schedule",
    "epochs",
    "warmup_epochs",
    "phase_fraction",
    "lr_max",
    "momentum",
    "beta_low",
    "beta_high",
    "weight_decay",
    "batch_size",
    "progressive",
    "min_resolution",
    "resolution_quantum",
    "min_magnitude",
    "max_magnitude",
    "num_positives",
    "selection_resolution",
    "num_classes",
    "samples_per_class",
    "canvas_size",
    "image_size",
    "noise_std",
    "knn_k",
    "seed",
];

fn kind_name(kind: ScheduleKind) -> &'static str {
    match kind {
        ScheduleKind::CosineAnnealing => "cosine_annealing",
        ScheduleKind::CosineWarmup => "cosine_warmup",
        ScheduleKind::OneCycle => "one_cycle",
        ScheduleKind::FixedOneCycle => "fixed_one_cycle",
    }
}

fn parse_kind(value: &str) -> Result<ScheduleKind> {
    match value {
        "cosine_annealing" => Ok(ScheduleKind::CosineAnnealing),
        "cosine_warmup" => Ok(ScheduleKind::CosineWarmup),
        "one_cycle" => Ok(ScheduleKind::OneCycle),
        "fixed_one_cycle" => Ok(ScheduleKind::FixedOneCycle),
        other => Err(Error::config(format!(
            "unknown schedule `{other}` (expected cosine_annealing, cosine_warmup, one_cycle or fixed_one_cycle)"
        ))),
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::config(format!("invalid value `{value}` for key `{key}`")))
}

impl ExperimentConfig {
    /// Set a single key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "schedule" => self.schedule = parse_kind(value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, value)?,
            "phase_fraction" => self.phase_fraction = parse_value(key, value)?,
            "lr_max" => self.lr_max = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "beta_low" => self.beta_low = parse_value(key, value)?,
            "beta_high" => self.beta_high = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "progressive" => self.progressive = parse_value(key, value)?,
            "min_resolution" => self.min_resolution = parse_value(key, value)?,
            "resolution_quantum" => self.resolution_quantum = parse_value(key, value)?,
            "min_magnitude" => self.min_magnitude = parse_value(key, value)?,
            "max_magnitude" => self.max_magnitude = parse_value(key, value)?,
            "num_positives" => self.num_positives = parse_value(key, value)?,
            "selection_resolution" => self.selection_resolution = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "samples_per_class" => self.samples_per_class = parse_value(key, value)?,
            "canvas_size" => self.canvas_size = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "knn_k" => self.knn_k = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "schedule" => kind_name(self.schedule).to_string(),
            "epochs" => self.epochs.to_string(),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "phase_fraction" => self.phase_fraction.to_string(),
            "lr_max" => self.lr_max.to_string(),
            "momentum" => self.momentum.to_string(),
            "beta_low" => self.beta_low.to_string(),
            "beta_high" => self.beta_high.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "progressive" => self.progressive.to_string(),
            "min_resolution" => self.min_resolution.to_string(),
            "resolution_quantum" => self.resolution_quantum.to_string(),
            "min_magnitude" => self.min_magnitude.to_string(),
            "max_magnitude" => self.max_magnitude.to_string(),
            "num_positives" => self.num_positives.to_string(),
            "selection_resolution" => self.selection_resolution.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "samples_per_class" => self.samples_per_class.to_string(),
            "canvas_size" => self.canvas_size.to_string(),
            "image_size" => self.image_size.to_string(),
            "noise_std" => self.noise_std.to_string(),
            "knn_k" => self.knn_k.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!("get() called with unknown key"),
        }
    }

    /// Apply `(key, value)` override pairs (the CLI's `--key value` form).
    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (key, value) in pairs {
            self.set(key, value)
                .map_err(|e| Error::config(format!("override {e}")))?;
        }
        self.validate()
    }

    /// Cross-field checks. Field-level range checks live with the module
    /// configs this one expands into; this catches what only the combined
    /// view can see.
    pub fn validate(&self) -> Result<()> {
        if self.beta_low > self.beta_high {
            return Err(Error::config(format!(
                "beta_low ({}) must not exceed beta_high ({})",
                self.beta_low, self.beta_high
            )));
        }
        if self.min_magnitude > self.max_magnitude {
            return Err(Error::config(format!(
                "min_magnitude ({}) must not exceed max_magnitude ({})",
                self.min_magnitude, self.max_magnitude
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.num_positives < 2 {
            return Err(Error::config("num_positives must be at least 2"));
        }
        if self.min_resolution as u64 > self.image_size {
            return Err(Error::config(format!(
                "min_resolution ({}) must not exceed image_size ({})",
                self.min_resolution, self.image_size
            )));
        }
        if self.selection_resolution > self.min_resolution {
            return Err(Error::config(format!(
                "selection_resolution ({}) must not exceed min_resolution ({})",
                self.selection_resolution, self.min_resolution
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        // Let the module configs run their own invariants too.
        self.dataset_config().validate()?;
        self.schedule_config()?.validate()?;
        self.curriculum_plan()?.validate()?;
        if let Some(sel) = self.selection_config() {
            sel.validate()?;
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> SynthDatasetConfig {
        SynthDatasetConfig {
            num_classes: self.num_classes as usize,
            samples_per_class: self.samples_per_class as usize,
            canvas_size: self.canvas_size as usize,
            image_size: self.image_size as usize,
            noise_std: self.noise_std,
            seed: self.seed,
        }
    }

    /// Iterations per epoch under drop-last batching.
    pub fn steps_per_epoch(&self) -> u64 {
        let train_size = self.num_classes * (self.samples_per_class * 8 / 10);
        steps_per_epoch(train_size as usize, self.batch_size as usize)
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs * self.steps_per_epoch()
    }

    pub fn schedule_config(&self) -> Result<ScheduleConfig> {
        let total = self.total_steps();
        let warmup = self.warmup_epochs * self.steps_per_epoch();
        let cfg = match self.schedule {
            ScheduleKind::CosineAnnealing => ScheduleConfig {
                kind: ScheduleKind::CosineAnnealing,
                total_steps: total,
                warmup_steps: 0,
                phase_fraction: self.phase_fraction,
                lr_max: self.lr_max,
                beta_low: self.momentum,
                beta_high: self.momentum,
            },
            ScheduleKind::CosineWarmup => ScheduleConfig {
                kind: ScheduleKind::CosineWarmup,
                total_steps: total,
                warmup_steps: warmup,
                phase_fraction: self.phase_fraction,
                lr_max: self.lr_max,
                beta_low: self.momentum,
                beta_high: self.momentum,
            },
            ScheduleKind::OneCycle => ScheduleConfig::one_cycle(
                total,
                self.phase_fraction,
                self.lr_max,
                self.beta_low,
                self.beta_high,
            ),
            ScheduleKind::FixedOneCycle => ScheduleConfig::fixed_one_cycle(
                total,
                warmup,
                self.lr_max,
                self.beta_low,
                self.beta_high,
            ),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn curriculum_plan(&self) -> Result<ProgressivePlan> {
        let total = self.total_steps();
        if !self.progressive {
            return ProgressivePlan::constant(total, self.min_resolution, self.min_magnitude);
        }
        ProgressivePlan::new(
            total,
            self.warmup_epochs * self.steps_per_epoch(),
            self.min_resolution,
            self.image_size as u32,
            self.resolution_quantum,
            self.min_magnitude,
            self.max_magnitude,
        )
    }

    /// Mining config, or `None` when two views make mining a no-op.
    pub fn selection_config(&self) -> Option<SelectionConfig> {
        if self.num_positives <= 2 {
            return None;
        }
        Some(SelectionConfig {
            num_positives: self.num_positives as usize,
            selection_resolution: self.selection_resolution,
            train_resolution: self.image_size as u32,
            iteration_cost_ratio: crate::cost::DEFAULT_ITERATION_COST_RATIO,
        })
    }

    pub fn run_plan(&self) -> Result<RunPlan> {
        self.validate()?;
        Ok(RunPlan {
            schedule: self.schedule_config()?,
            curriculum: self.curriculum_plan()?,
            selection: self.selection_config(),
            policy: AugmentationPolicy::default(),
            dataset: self.dataset_config(),
            model: ModelSpec::default(),
            batch_size: self.batch_size as usize,
            weight_decay: self.weight_decay,
            knn_k: self.knn_k as usize,
            epochs: self.epochs,
            seed: self.seed,
        })
    }
}

/// Parse a flat `key = value` config. `#` starts a comment; blank lines are
/// skipped; an empty document yields the defaults. Later assignments win.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut key_lines: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config_at(lineno, format!("expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(Error::config_at(lineno, format!("empty value for `{key}`")));
        }
        cfg.set(key, value).map_err(|e| match e {
            Error::Config(msg) => Error::config_at(lineno, msg),
            other => other,
        })?;
        key_lines.insert(key.to_string(), lineno);
    }
    cfg.validate().map_err(|e| match e {
        Error::Config(msg) => {
            // Attach the most plausible offending line: the latest line that
            // assigned any key mentioned in the message.
            let line = KEYS
                .iter()
                .filter(|k| msg.contains(**k))
                .filter_map(|k| key_lines.get(*k))
                .max();
            match line {
                Some(l) => Error::config_at(*l, msg),
                None => Error::Config(msg),
            }
        }
        other => other,
    })?;
    Ok(cfg)
}

/// Render a config as a parseable document with keys in canonical order.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    for key in KEYS {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&cfg.get(key));
        out.push('\n');
    }
    out
}

/// Split a raw `--key value --key value ...` argument list into pairs.
pub fn parse_override_args(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut iter = args.iter();
    while let Some(key) = iter.next() {
        let key = key
            .strip_prefix("--")
            .ok_or_else(|| Error::config(format!("expected `--key`, got `{key}`")))?;
        let value = iter
            .next()
            .ok_or_else(|| Error::config(format!("missing value for `--{key}`")))?;
        pairs.push((key.to_string(), value.clone()));
    }
    Ok(pairs)
}
