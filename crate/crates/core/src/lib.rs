//! Intermediate forecasts between disagreeing weather-model outputs.
//!
//! A per-variable U-Net is trained on one model's forecasts at lead times
//! `t - dt` and `t + dt` with the forecast at `t` as target. At inference the
//! same network takes two different models' forecasts valid at one time and
//! returns a field whose features (cyclone centers, fronts) sit between the
//! inputs instead of being smeared or split as an arithmetic mean would.
//! Applying the network pairwise in a balanced tree combines 2^k models.

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod format;
pub mod grid;
pub mod infer;
pub mod manifest;
pub mod synth;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use grid::{bilinear_sample, Field2D, GridSpec, NormClass, Station, VariableKind};
