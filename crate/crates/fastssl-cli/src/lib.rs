//! Command dispatch for the `fastssl` binary.
//!
//! Subcommands map one-to-one onto the library: `emit-schedule`,
//! `estimate-cost`, `overhead`, `pairs`, `lr-find`, `train`, `eval` and
//! `experiment`. Config-driven commands read an optional `--config` file
//! and accept trailing `--key value` pairs that override file values (the
//! keys mirror the config file keys exactly). Output lands under `--out-dir`
//! when given, else `$FASTSSL_OUT`, else `./runs`.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use fastssl::config::{parse_config, parse_override_args, ExperimentConfig};
use fastssl::cost::{compare, FlopsProfile, TrainingPlan};
use fastssl::curriculum::{cost_ratio, mean_speedup};
use fastssl::error::{Error, Result};
use fastssl::export::{write_lr_trace_csv, write_schedule_csv};
use fastssl::hard_augment::{enumerate_pairs, selection_overhead, SelectionConfig};
use fastssl::lr_finder::{run_range_test, RangeTestConfig};
use fastssl::presets::{baseline_config, run_preset, PresetKind, RunArtifacts};
use fastssl::sim::checkpoint::load_checkpoint;
use fastssl::sim::train::{build_range_trainer, measure_profile};
use fastssl::sim::{generate_dataset, knn_eval, ModelSpec};

/// Environment variable naming the output directory root.
pub const OUT_DIR_ENV: &str = "FASTSSL_OUT";

#[derive(Parser)]
#[command(
    name = "fastssl",
    version,
    about = "Training-efficiency toolkit: schedules, curricula, hard augmentation mining, cost accounting and a desk-scale trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared config-file + override arguments.
#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trailing `--key value` pairs overriding config values.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(&fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&parse_override_args(&self.overrides)?)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the full schedule (lr, momentum, resolution, magnitude) as CSV.
    EmitSchedule {
        /// Output path; defaults to `<out-root>/schedule.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Price the configured run against the canonical baseline.
    EstimateCost {
        /// Cost profile: `measured` (per-layer counter) or `quadratic`.
        #[arg(long, default_value = "measured")]
        profile: String,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Analytic overhead of the hardest-pair selection pass.
    Overhead {
        #[arg(long)]
        res: u32,
        #[arg(long = "sel-res")]
        sel_res: u32,
        #[arg(long = "num-positives")]
        num_positives: usize,
        #[arg(long = "cost-ratio", default_value_t = 6.0)]
        cost_ratio: f64,
    },
    /// List all view pairs for a number of positives.
    Pairs {
        #[arg(long = "num-positives")]
        num_positives: usize,
    },
    /// Exponential learning-rate range test on the desk-scale trainer.
    LrFind {
        #[arg(long, default_value_t = 1e-3)]
        lr_lo: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_hi: f64,
        #[arg(long, default_value_t = 200)]
        steps: u32,
        /// Trace CSV path; defaults to `<out-root>/lr_trace.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one configured run, writing metrics, schedule and checkpoint.
    Train {
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// kNN-probe a checkpoint on the configured dataset.
    Eval {
        /// Checkpoint stem (the path without `.manifest` / `.bin`).
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run a named preset (baseline, efficient, ablation-components,
    /// aug-res-grid, curriculum-bounds, f1clr-lengths).
    Experiment {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
    })
}

fn print_run(run: &RunArtifacts) {
    println!(
        "{:<28} acc {:.3}  flops {:.3e}  speedup vs baseline {:.2}x  -> {}",
        run.name,
        run.final_accuracy,
        run.cumulative_flops as f64,
        run.report.combined_speedup,
        run.dir.display()
    );
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::EmitSchedule { out, out_dir, config } => {
            let cfg = config.load()?;
            let path = match out {
                Some(p) => p,
                None => {
                    let root = out_root(out_dir);
                    fs::create_dir_all(&root)?;
                    root.join("schedule.csv")
                }
            };
            write_schedule_csv(&path, &cfg.schedule_config()?, &cfg.curriculum_plan()?)?;
            println!("wrote {} ({} rows)", path.display(), cfg.total_steps() + 1);
        }
        Command::EstimateCost { profile, out, config } => {
            let cfg = config.load()?;
            let efficient_curriculum = cfg.curriculum_plan()?;
            let mut efficient = TrainingPlan::from_curriculum(&efficient_curriculum)?;
            if let Some(sel) = cfg.selection_config() {
                efficient = efficient.with_selection(sel)?;
            }
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
            let baseline = TrainingPlan::from_curriculum(&comparator.curriculum_plan()?)?;
            let flops_profile = match profile.as_str() {
                "quadratic" => FlopsProfile::quadratic(1.0, 6.0)?,
                "measured" => {
                    let mut needed: Vec<u32> = efficient.resolutions().to_vec();
                    needed.extend_from_slice(baseline.resolutions());
                    if let Some(sel) = efficient.selection() {
                        needed.push(sel.selection_resolution);
                    }
                    needed.sort_unstable();
                    needed.dedup();
                    measure_profile(&ModelSpec::default(), cfg.batch_size as usize, needed)?
                }
                other => {
                    return Err(Error::invalid(format!(
                        "unknown profile `{other}` (expected measured or quadratic)"
                    )))
                }
            };
            let report = compare(&baseline, &efficient, &flops_profile)?;
            println!("profile              {profile}");
            println!("baseline steps       {}", baseline.total_steps());
            println!("efficient steps      {}", efficient.total_steps());
            println!("baseline flops       {:.6e}", report.baseline_flops);
            println!("efficient flops      {:.6e}", report.efficient_flops);
            println!("steps ratio          {:.4}", report.steps_ratio);
            println!("per-step ratio       {:.4}", report.per_step_ratio);
            println!("combined speedup     {:.4}x", report.combined_speedup);
            if cfg.progressive {
                println!(
                    "curriculum mean per-step speedup {:.4} (quadratic model)",
                    mean_speedup(&efficient_curriculum)?
                );
                println!(
                    "curriculum cost ratio            {:.4} (quadratic model)",
                    cost_ratio(&efficient_curriculum)?
                );
            }
            println!("convention: {}", report.convention);
            if let Some(path) = out {
                fs::write(
                    &path,
                    serde_json::to_string_pretty(&report)
                        .map_err(|e| Error::invalid(format!("report serialization: {e}")))?,
                )?;
                println!("wrote {}", path.display());
            }
        }
        Command::Overhead {
            res,
            sel_res,
            num_positives,
            cost_ratio,
        } => {
            let cfg = SelectionConfig::new(num_positives, sel_res, res, cost_ratio)?;
            let o = selection_overhead(&cfg)?;
            println!("train resolution      {res}");
            println!("selection resolution  {sel_res}");
            println!(
                "positives             {num_positives}  ({} pairs)",
                cfg.num_pairs()
            );
            println!("iteration cost ratio  {cost_ratio} forward passes");
            println!("useful fraction       {:.2}%", o.useful_fraction * 100.0);
            println!("overhead              {:.2}%", o.overhead * 100.0);
        }
        Command::Pairs { num_positives } => {
            let pairs = enumerate_pairs(num_positives)?;
            println!("{} positives -> {} pairs", num_positives, pairs.len());
            for pair in pairs {
                println!("{pair}");
            }
        }
        Command::LrFind {
            lr_lo,
            lr_hi,
            steps,
            out,
            out_dir,
            config,
        } => {
            let cfg = config.load()?;
            let rt_cfg = RangeTestConfig {
                lr_lo,
                lr_hi,
                sweep_steps: steps,
                ..RangeTestConfig::default()
            };
            let trainer = build_range_trainer(&cfg.run_plan()?, rt_cfg.val_batch_size as usize)?;
            let result = run_range_test(trainer, &rt_cfg)?;
            let path = match out {
                Some(p) => p,
                None => {
                    let root = out_root(out_dir);
                    fs::create_dir_all(&root)?;
                    root.join("lr_trace.csv")
                }
            };
            write_lr_trace_csv(&path, &result)?;
            println!(
                "min_lr {:.6e}{}  max_lr {:.6e}{}",
                result.min_lr,
                if result.min_lr_detected { "" } else { " (no sustained drop; lower bound)" },
                result.max_lr,
                if result.diverged { " (divergence)" } else { " (plateau end)" },
            );
            println!("trace: {} ({} steps)", path.display(), result.trace.len());
        }
        Command::Train { out_dir, config } => {
            let cfg = config.load()?;
            let root = out_root(out_dir);
            let dir = root.join("train").join(format!("run-seed{}", cfg.seed));
            let run = fastssl::presets::execute_run("train", &cfg, &dir)?;
            print_run(&run);
        }
        Command::Eval { checkpoint, config } => {
            let cfg = config.load()?;
            let params = load_checkpoint(ModelSpec::default(), &checkpoint)?;
            let dataset = generate_dataset(&cfg.dataset_config())?;
            let embed = |items: &[fastssl::sim::LabeledImage]| -> Result<(fastssl::sim::Tensor<f32>, Vec<usize>)> {
                let mut features: Vec<f32> = Vec::new();
                let mut labels = Vec::new();
                let mut dim = 0;
                for chunk in items.chunks(128) {
                    let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
                    let out = fastssl::sim::forward(&params, &fastssl::sim::Tensor::stack(&images)?)?;
                    dim = out.features.shape()[1];
                    features.extend_from_slice(out.features.data());
                    labels.extend(chunk.iter().map(|s| s.label));
                }
                Ok((fastssl::sim::Tensor::from_vec(&[labels.len(), dim], features)?, labels))
            };
            let (train_feats, train_labels) = embed(&dataset.train)?;
            let (eval_feats, eval_labels) = embed(&dataset.eval)?;
            let k = (cfg.knn_k as usize).min(train_labels.len());
            let acc = knn_eval(&train_feats, &train_labels, &eval_feats, &eval_labels, k)?;
            println!("knn accuracy {:.4} (k = {k}, {} eval samples)", acc, eval_labels.len());
        }
        Command::Experiment {
            name,
            seed,
            out_dir,
            config,
        } => {
            let kind: PresetKind = name.parse()?;
            if config.config.is_some() {
                return Err(Error::invalid(
                    "presets define their own configs; use overrides instead of --config",
                ));
            }
            let overrides = parse_override_args(&config.overrides)?;
            let root = out_root(out_dir);
            run_preset(kind, &root, seed, &overrides, &mut print_run)?;
        }
    }
    Ok(())
}

/// Parse and run an argv-style command line; returns the process exit code.
pub fn run_command<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Clap handles --help/--version as "errors" with exit code 0.
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}
