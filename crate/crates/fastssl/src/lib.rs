//! fastssl — a training-efficiency toolkit for self-supervised learning.
//!
//! The crate packages three acceleration strategies behind small, pure
//! modules, plus the accounting and tooling around them:
//!
//! - [`schedule`] — closed-form learning-rate/momentum schedules, including
//!   a fixed-warm-up one-cycle variant that extends gracefully to long runs,
//!   and the gradient-noise-scale diagnostic that motivates them.
//! - [`curriculum`] — the progressive resolution staircase (full resolution
//!   during warm-up, then minimum back up to maximum in quantized stages)
//!   with a linearly ramping augmentation magnitude.
//! - [`hard_augment`] — hardest augmentation-pair mining over downsampled
//!   views, with its analytic overhead model.
//! - [`cost`] — FLOPs profiles and plan pricing, combining step-count and
//!   per-step savings into a speedup report.
//! - [`lr_finder`] — an exponential learning-rate range test.
//! - [`sim`] — a desk-scale, dependency-free training simulator (synthetic
//!   dataset, augmentation pipeline, tiny convnet with manual backprop,
//!   negative-cosine twin loss with stop-gradient, SGD with momentum, kNN
//!   probe, exact FLOPs counter) that exercises the whole training loop.
//! - [`config`] / [`export`] / [`presets`] — flat key = value experiment
//!   configs, schedule CSV export, and the canned experiment presets used
//!   by the CLI.

pub mod config;
pub mod cost;
pub mod curriculum;
pub mod error;
pub mod export;
pub mod hard_augment;
pub mod lr_finder;
pub mod presets;
pub mod schedule;
pub mod sim;

pub use error::{Error, Result};
