//! Training triplets built from the time-shift scheme: inputs at `t - dt`
//! and `t + dt`, target at `t`, all from one run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field2D, NormClass, VariableKind};
use crate::synth::ForecastRun;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    pub t_list: Vec<u32>,
    pub dt_list: Vec<u32>,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            t_list: vec![9, 10, 11, 12, 13, 14],
            dt_list: vec![3, 6],
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_list.is_empty() || self.dt_list.is_empty() {
            return Err(Error::Empty("pairing t_list/dt_list"));
        }
        for &t in &self.t_list {
            for &dt in &self.dt_list {
                if dt == 0 || dt > t {
                    return Err(Error::InvalidParams(format!(
                        "pairing t={t}, dt={dt}: need 0 < dt <= t"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every lead hour a run must provide.
    pub fn required_leads(&self) -> Vec<u32> {
        let mut leads: Vec<u32> = self
            .t_list
            .iter()
            .flat_map(|&t| {
                self.dt_list
                    .iter()
                    .flat_map(move |&dt| [t.saturating_sub(dt), t, t + dt])
            })
            .collect();
        leads.sort_unstable();
        leads.dedup();
        leads
    }
}

/// Value range used by the [0, 1] scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub x_min: f64,
    pub x_max: f64,
    pub class: NormClass,
}

impl NormParams {
    /// Range from raw extremes, applying the symmetric rule where needed.
    pub fn from_extremes(raw_min: f64, raw_max: f64, class: NormClass) -> Result<Self> {
        let (x_min, x_max) = match class {
            NormClass::MinMax => (raw_min, raw_max),
            NormClass::Symmetric => {
                let m = raw_max.abs().max(raw_min.abs());
                (-m, m)
            }
        };
        if !(x_max > x_min) {
            return Err(Error::DegenerateRange(x_max));
        }
        Ok(NormParams { x_min, x_max, class })
    }

    #[inline]
    pub fn normalize_value(&self, x: f64) -> f64 {
        (x - self.x_min) / (self.x_max - self.x_min)
    }

    #[inline]
    pub fn denormalize_value(&self, y: f64) -> f64 {
        self.x_min + y * (self.x_max - self.x_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// Field at `t - dt` (or `t + dt` once swapped).
    pub input_a: Field2D,
    pub input_b: Field2D,
    pub target: Field2D,
    pub norm: NormParams,
    pub variable: VariableKind,
}

impl TrainingSample {
    pub fn dt(&self) -> u32 {
        self.target.lead_hours.abs_diff(self.input_a.lead_hours)
    }
}

pub fn compute_norm(fields: &[&Field2D], class: NormClass) -> Result<NormParams> {
    let first = fields.first().ok_or(Error::Empty("fields for normalization"))?;
    if fields.iter().any(|f| f.variable != first.variable) {
        return Err(Error::Shape("normalization fields mix variables".into()));
    }
    let (lo, hi) = fields
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
            (lo.min(f.min()), hi.max(f.max()))
        });
    NormParams::from_extremes(lo, hi, class)
}

/// Scaled values `(x - x_min) / (x_max - x_min)`.
pub fn normalize(field: &Field2D, norm: &NormParams) -> Vec<f64> {
    field.values.iter().map(|&x| norm.normalize_value(x)).collect()
}

/// Inverse of [`normalize`], returning a field with `template`'s metadata.
pub fn denormalize(values: &[f64], norm: &NormParams, template: &Field2D) -> Result<Field2D> {
    template.with_values(values.iter().map(|&y| norm.denormalize_value(y)).collect())
}

/// One sample per `(t, dt)` combination.
pub fn build_pairs(
    run: &ForecastRun,
    cfg: &PairingConfig,
    variable: VariableKind,
) -> Result<Vec<TrainingSample>> {
    cfg.validate()?;
    let class = variable.norm_class();
    let mut out = Vec::with_capacity(cfg.t_list.len() * cfg.dt_list.len());
    for &t in &cfg.t_list {
        for &dt in &cfg.dt_list {
            let fetch = |lead: u32| {
                run.get(lead, variable).ok_or_else(|| Error::MissingLead {
                    model_id: run.model_id.clone(),
                    t,
                    dt,
                    lead,
                })
            };
            let a = fetch(t - dt)?;
            let b = fetch(t + dt)?;
            let target = fetch(t)?;
            let norm = compute_norm(&[a, b, target], class)?;
            out.push(TrainingSample {
                input_a: a.clone(),
                input_b: b.clone(),
                target: target.clone(),
                norm,
                variable,
            });
        }
    }
    Ok(out)
}

/// Exchanges the two inputs; target and normalization are unchanged.
pub fn augment_swap(sample: &TrainingSample) -> TrainingSample {
    TrainingSample {
        input_a: sample.input_b.clone(),
        input_b: sample.input_a.clone(),
        ..sample.clone()
    }
}

/// Smallest multiple of `2^depth` that is at least `n`.
pub fn padded_dim(n: usize, depth: usize) -> usize {
    let m = 1usize << depth;
    n.div_ceil(m) * m
}

/// Row-major `n_y x n_x` array grown to `target_ny x target_nx` by repeating
/// the last column and the last row.
pub fn pad_replicate(
    values: &[f64],
    n_x: usize,
    n_y: usize,
    target_nx: usize,
    target_ny: usize,
) -> Result<Vec<f64>> {
    if values.len() != n_x * n_y {
        return Err(Error::Shape(format!("{} values for {n_y}x{n_x}", values.len())));
    }
    if target_nx < n_x || target_ny < n_y || n_x == 0 || n_y == 0 {
        return Err(Error::Shape(format!(
            "cannot pad {n_y}x{n_x} to {target_ny}x{target_nx}"
        )));
    }
    let mut out = Vec::with_capacity(target_nx * target_ny);
    for i in 0..target_ny {
        let row = &values[i.min(n_y - 1) * n_x..][..n_x];
        out.extend_from_slice(row);
        out.extend(std::iter::repeat(row[n_x - 1]).take(target_nx - n_x));
    }
    Ok(out)
}

/// Top-left `n_y x n_x` block of a padded array.
pub fn trim_padding(
    values: &[f64],
    padded_nx: usize,
    padded_ny: usize,
    n_x: usize,
    n_y: usize,
) -> Result<Vec<f64>> {
    if values.len() != padded_nx * padded_ny || padded_nx < n_x || padded_ny < n_y {
        return Err(Error::Shape(format!(
            "cannot trim {} values laid out {padded_ny}x{padded_nx} to {n_y}x{n_x}",
            values.len()
        )));
    }
    Ok((0..n_y)
        .flat_map(|i| values[i * padded_nx..i * padded_nx + n_x].iter().copied())
        .collect())
}
