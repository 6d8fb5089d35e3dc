//! Schedule CSV export.
//!
//! One row per step `t = 0..=L` with header
//! `step,lr,momentum,resolution,aug_magnitude`. Floats are written with 9
//! significant digits in scientific notation, which Rust formats
//! identically on every platform, so re-emitting the same config gives a
//! byte-identical file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::curriculum::ProgressivePlan;
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;

/// One exported schedule row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub step: u64,
    pub lr: f64,
    pub momentum: f64,
    pub resolution: u32,
    pub aug_magnitude: f64,
}

/// 9 significant digits, scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Evaluate schedule and curriculum at every step including the endpoint.
pub fn schedule_rows(
    schedule: &ScheduleConfig,
    plan: &ProgressivePlan,
) -> Result<Vec<ScheduleRow>> {
    if schedule.total_steps != plan.total_steps {
        return Err(Error::config(format!(
            "schedule covers {} steps but the curriculum covers {}",
            schedule.total_steps, plan.total_steps
        )));
    }
    let mut rows = Vec::with_capacity(schedule.total_steps as usize + 1);
    for t in 0..=schedule.total_steps {
        let point = schedule.point(t)?;
        let cpoint = plan.point(t)?;
        rows.push(ScheduleRow {
            step: t,
            lr: point.lr,
            momentum: point.momentum,
            resolution: cpoint.resolution,
            aug_magnitude: cpoint.magnitude,
        });
    }
    Ok(rows)
}

pub const SCHEDULE_HEADER: &str = "step,lr,momentum,resolution,aug_magnitude";

/// Render rows to CSV text.
pub fn render_schedule_csv(rows: &[ScheduleRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(SCHEDULE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step,
            format_float(row.lr),
            format_float(row.momentum),
            row.resolution,
            format_float(row.aug_magnitude)
        ));
    }
    out
}

/// Evaluate and write the schedule CSV in one go.
pub fn write_schedule_csv(
    path: &Path,
    schedule: &ScheduleConfig,
    plan: &ProgressivePlan,
) -> Result<()> {
    let rows = schedule_rows(schedule, plan)?;
    let mut file = fs::File::create(path)?;
    file.write_all(render_schedule_csv(&rows).as_bytes())?;
    Ok(())
}

/// Write a learning-rate range-test trace as
/// `step,lr,train_loss,val_loss` CSV.
pub fn write_lr_trace_csv(path: &Path, result: &crate::lr_finder::RangeTestResult) -> Result<()> {
    let mut out = String::from("step,lr,train_loss,val_loss\n");
    for s in &result.trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.step,
            format_float(s.lr),
            format_float(s.train_loss),
            format_float(s.val_loss)
        ));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Parse a CSV produced by [`render_schedule_csv`].
pub fn parse_schedule_csv(text: &str) -> Result<Vec<ScheduleRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == SCHEDULE_HEADER => {}
        other => {
            return Err(Error::invalid(format!(
                "bad schedule CSV header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::invalid(format!(
                "schedule CSV row {}: expected 5 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse = |what: &str, v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::invalid(format!("schedule CSV row {}: bad {what} `{v}`", idx + 2)))
        };
        rows.push(ScheduleRow {
            step: fields[0]
                .parse()
                .map_err(|_| Error::invalid(format!("schedule CSV row {}: bad step", idx + 2)))?,
            lr: parse("lr", fields[1])?,
            momentum: parse("momentum", fields[2])?,
            resolution: fields[3]
                .parse()
                .map_err(|_| Error::invalid(format!("schedule CSV row {}: bad resolution", idx + 2)))?,
            aug_magnitude: parse("aug_magnitude", fields[4])?,
        });
    }
    Ok(rows)
}
