//! Canned experiment presets.
//!
//! Each preset expands into one or more named runs; every run writes its
//! rendered config, the full schedule CSV, per-epoch metrics (JSONL, one
//! record per line, flushed as they appear), a checkpoint, and a cost
//! report comparing the run's realized plan against the canonical baseline
//! plan. Runs execute sequentially so a preset is reproducible end to end
//! from its seed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{render_config, ExperimentConfig};
use crate::cost::{compare, CostReport, TrainingPlan};
use crate::error::{Error, Result};
use crate::export::write_schedule_csv;
use crate::schedule::ScheduleKind;
use crate::sim::checkpoint::save_checkpoint;
use crate::sim::train::{measure_profile, train};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// Cosine annealing, constant resolution and magnitude, two views.
    Baseline,
    /// Fixed-warm-up one-cycle + progressive curriculum + hardest-pair
    /// mining with four views (the default config).
    Efficient,
    /// Toggle matrix over the three strategies, six runs.
    AblationComponents,
    /// Fixed magnitude x fixed resolution grid, short runs.
    AugResGrid,
    /// Magnitude ramp bound candidates under the progressive curriculum.
    CurriculumBounds,
    /// Fixed-warm-up one-cycle at several total lengths.
    F1clrLengths,
}

impl PresetKind {
    pub fn name(&self) -> &'static str {
        match self {
            PresetKind::Baseline => "baseline",
            PresetKind::Efficient => "efficient",
            PresetKind::AblationComponents => "ablation-components",
            PresetKind::AugResGrid => "aug-res-grid",
            PresetKind::CurriculumBounds => "curriculum-bounds",
            PresetKind::F1clrLengths => "f1clr-lengths",
        }
    }

    pub fn all() -> &'static [PresetKind] {
        &[
            PresetKind::Baseline,
            PresetKind::Efficient,
            PresetKind::AblationComponents,
            PresetKind::AugResGrid,
            PresetKind::CurriculumBounds,
            PresetKind::F1clrLengths,
        ]
    }
}

impl std::str::FromStr for PresetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PresetKind::all()
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown preset `{s}` (expected one of: {})",
                    PresetKind::all()
                        .iter()
                        .map(|k| k.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }
}

/// The standard training setup: cosine annealing over 200 epochs at full
/// resolution, constant standard-strength augmentations, two views.
pub fn baseline_config() -> ExperimentConfig {
    ExperimentConfig {
        schedule: ScheduleKind::CosineAnnealing,
        epochs: 200,
        warmup_epochs: 0,
        progressive: false,
        min_resolution: 32,
        min_magnitude: 5.0,
        max_magnitude: 5.0,
        num_positives: 2,
        ..ExperimentConfig::default()
    }
}

/// All three acceleration strategies enabled (the crate default).
pub fn efficient_config() -> ExperimentConfig {
    ExperimentConfig::default()
}

/// The named runs a preset expands into.
pub fn preset_runs(kind: PresetKind) -> Vec<(String, ExperimentConfig)> {
    match kind {
        PresetKind::Baseline => vec![("baseline".into(), baseline_config())],
        PresetKind::Efficient => vec![("efficient".into(), efficient_config())],
        PresetKind::AblationComponents => {
            let base = baseline_config();
            let f1clr = ExperimentConfig {
                schedule: ScheduleKind::FixedOneCycle,
                epochs: 120,
                warmup_epochs: 20,
                ..base.clone()
            };
            vec![
                ("ca".into(), base.clone()),
                ("f1clr".into(), f1clr.clone()),
                (
                    "ca-hardaug".into(),
                    ExperimentConfig {
                        num_positives: 4,
                        ..base
                    },
                ),
                (
                    "f1clr-progressive".into(),
                    ExperimentConfig {
                        num_positives: 2,
                        ..efficient_config()
                    },
                ),
                (
                    "f1clr-hardaug".into(),
                    ExperimentConfig {
                        num_positives: 4,
                        ..f1clr
                    },
                ),
                ("f1clr-progressive-hardaug".into(), efficient_config()),
            ]
        }
        PresetKind::AugResGrid => {
            let mut runs = Vec::new();
            for &magnitude in &[3.0f64, 5.0, 7.0, 10.0] {
                for &resolution in &[16u32, 24, 32] {
                    runs.push((
                        format!("mag{magnitude}-res{resolution}"),
                        ExperimentConfig {
                            epochs: 40,
                            progressive: false,
                            min_resolution: resolution,
                            min_magnitude: magnitude,
                            max_magnitude: magnitude,
                            num_positives: 2,
                            ..baseline_config()
                        },
                    ));
                }
            }
            runs
        }
        PresetKind::CurriculumBounds => [(5.0, 5.0), (2.5, 4.0), (3.0, 4.0), (4.0, 5.0), (5.0, 6.0), (4.0, 6.0)]
            .iter()
            .map(|&(lo, hi)| {
                (
                    format!("mag{lo}-{hi}"),
                    ExperimentConfig {
                        epochs: 60,
                        warmup_epochs: 10,
                        min_magnitude: lo,
                        max_magnitude: hi,
                        num_positives: 2,
                        ..efficient_config()
                    },
                )
            })
            .collect(),
        PresetKind::F1clrLengths => [40u64, 60, 80, 100, 120]
            .iter()
            .map(|&epochs| {
                (
                    format!("len{epochs}"),
                    ExperimentConfig {
                        schedule: ScheduleKind::FixedOneCycle,
                        epochs,
                        warmup_epochs: 20,
                        ..baseline_config()
                    },
                )
            })
            .collect(),
    }
}

/// Everything a finished run left behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub name: String,
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub final_accuracy: f64,
    pub cumulative_flops: u64,
    pub report: CostReport,
}

/// Execute one configured run into `dir`, writing `config.cfg`,
/// `schedule.csv`, `metrics.jsonl`, `model.{manifest,bin}` and
/// `cost_report.json`. Metrics lines are flushed per epoch, so partial
/// results survive an aborted run.
pub fn execute_run(name: &str, cfg: &ExperimentConfig, dir: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.cfg"), render_config(cfg))?;
    write_schedule_csv(
        &dir.join("schedule.csv"),
        &cfg.schedule_config()?,
        &cfg.curriculum_plan()?,
    )?;

    let metrics_path = dir.join("metrics.jsonl");
    let mut metrics_file = fs::File::create(&metrics_path)?;
    let plan = cfg.run_plan()?;
    let train_result = train(&plan, &mut |record| {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::invalid(format!("metrics serialization: {e}")))?;
        metrics_file.write_all(line.as_bytes())?;
        metrics_file.write_all(b"\n")?;
        metrics_file.flush()?;
        Ok(())
    });
    let output = train_result?;

    save_checkpoint(&output.params, &dir.join("model"))?;

    // Cost report against the canonical baseline plan, dataset sizing held
    // equal so the step-count ratio is meaningful.
    let comparator = ExperimentConfig {
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        num_classes: cfg.num_classes,
        samples_per_class: cfg.samples_per_class,
        canvas_size: cfg.canvas_size,
        image_size: cfg.image_size,
        noise_std: cfg.noise_std,
        ..baseline_config()
    };
    let baseline_plan = TrainingPlan::from_curriculum(&comparator.curriculum_plan()?)?;
    let mut needed: Vec<u32> = output.realized_plan.resolutions().to_vec();
    needed.extend_from_slice(baseline_plan.resolutions());
    if let Some(sel) = output.realized_plan.selection() {
        needed.push(sel.selection_resolution);
    }
    needed.sort_unstable();
    needed.dedup();
    let profile = measure_profile(&plan.model, plan.batch_size, needed)?;
    let report = compare(&baseline_plan, &output.realized_plan, &profile)?;
    fs::write(
        dir.join("cost_report.json"),
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::invalid(format!("report serialization: {e}")))?,
    )?;

    Ok(RunArtifacts {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        config: cfg.clone(),
        final_accuracy: output.final_accuracy,
        cumulative_flops: output.cumulative_flops,
        report,
    })
}

/// Run a whole preset sequentially under `out_root/<preset>/<run>-seed<s>`,
/// applying the seed and any `--key value` overrides to every run.
/// `on_run` fires after each run completes.
pub fn run_preset(
    kind: PresetKind,
    out_root: &Path,
    seed: Option<u64>,
    overrides: &[(String, String)],
    on_run: &mut dyn FnMut(&RunArtifacts),
) -> Result<Vec<RunArtifacts>> {
    let mut artifacts = Vec::new();
    for (name, mut cfg) in preset_runs(kind) {
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.apply_overrides(overrides)?;
        let dir = out_root
            .join(kind.name())
            .join(format!("{name}-seed{}", cfg.seed));
        let run = execute_run(&name, &cfg, &dir)?;
        on_run(&run);
        artifacts.push(run);
    }
    Ok(artifacts)
}
