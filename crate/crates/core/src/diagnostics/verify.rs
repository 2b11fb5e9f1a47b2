use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bilinear_sample, GridSpec, Station, VariableKind};
use crate::synth::{derive_seed, ForecastRun};

/// Observed winds below this speed carry no direction verification.
pub const CALM_THRESHOLD: f64 = 0.5;

/// Speed (m/s) and meteorological direction (degrees the wind blows from,
/// in [0, 360)) of a wind vector.
pub fn wind_speed_dir(u: f64, v: f64) -> (f64, f64) {
    let speed = u.hypot(v);
    let mut dir = (-u).atan2(-v).to_degrees();
    if dir < 0.0 {
        dir += 360.0;
    }
    if dir >= 360.0 {
        dir -= 360.0;
    }
    (speed, dir)
}

/// Speed and direction fields from gridded components.
pub fn wind_fields(u: &crate::Field2D, v: &crate::Field2D) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.grid != v.grid {
        return Err(Error::Shape("wind components on different grids".into()));
    }
    Ok(u.values
        .iter()
        .zip(&v.values)
        .map(|(&a, &b)| wind_speed_dir(a, b))
        .unzip())
}

/// Signed angular difference wrapped into (-180, 180].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    WindSpeed,
    WindDirection,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::WindSpeed => "wind_speed",
            Quantity::WindDirection => "wind_direction",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Root mean square error averaged first over stations, then over times:
/// `sqrt( (1/T) sum_t (1/N_t) sum_n (F_nt - O_nt)^2 )`.
///
/// `forecast[t][n]` pairs with `obs[t][n]`. Directions use the wrapped
/// angular difference.
pub fn rmse(forecast: &[Vec<f64>], obs: &[Vec<f64>], quantity: Quantity) -> Result<f64> {
    if forecast.is_empty() {
        return Err(Error::Empty("verification matrix"));
    }
    if forecast.len() != obs.len() {
        return Err(Error::Shape(format!(
            "{} forecast times vs {} observation times",
            forecast.len(),
            obs.len()
        )));
    }
    let mut total = 0.0;
    for (f_row, o_row) in forecast.iter().zip(obs) {
        if f_row.is_empty() {
            return Err(Error::Empty("stations at a verification time"));
        }
        if f_row.len() != o_row.len() {
            return Err(Error::Shape("forecast/observation rows differ in length".into()));
        }
        let sq: f64 = f_row
            .iter()
            .zip(o_row)
            .map(|(&f, &o)| {
                let d = match quantity {
                    Quantity::WindSpeed => f - o,
                    Quantity::WindDirection => angle_diff(f, o),
                };
                d * d
            })
            .sum();
        total += sq / f_row.len() as f64;
    }
    Ok((total / forecast.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindObs {
    pub station: String,
    pub lead_hours: u32,
    pub speed: f64,
    pub direction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObsSet {
    pub records: Vec<WindObs>,
}

impl ObsSet {
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if !(r.speed >= 0.0) || !(0.0..360.0).contains(&r.direction) {
                return Err(Error::InvalidParams(format!(
                    "observation at {} FT={} has speed {} / direction {}",
                    r.station, r.lead_hours, r.speed, r.direction
                )));
            }
        }
        Ok(())
    }

    pub fn find(&self, station: &str, lead_hours: u32) -> Option<&WindObs> {
        self.records
            .iter()
            .find(|r| r.station == station && r.lead_hours == lead_hours)
    }
}

/// Station observations sampled from a truth run plus Gaussian noise of
/// standard deviation `sigma` (m/s) on each wind component.
pub fn synthesize_obs(
    truth: &ForecastRun,
    stations: &[Station],
    leads: &[u32],
    sigma: f64,
    seed: u64,
) -> Result<ObsSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["observations", &truth.model_id]));
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut records = Vec::new();
    for &lead in leads {
        let (u, v) = wind_pair(truth, lead)?;
        for st in stations {
            st.check_inside(&truth.grid)?;
            let mut su = bilinear_sample(u, st.lat, st.lon)?;
            let mut sv = bilinear_sample(v, st.lat, st.lon)?;
            if sigma > 0.0 {
                su += noise.sample(&mut rng);
                sv += noise.sample(&mut rng);
            }
            let (speed, direction) = wind_speed_dir(su, sv);
            records.push(WindObs {
                station: st.id.clone(),
                lead_hours: lead,
                speed,
                direction,
            });
        }
    }
    Ok(ObsSet { records })
}

fn wind_pair(run: &ForecastRun, lead: u32) -> Result<(&crate::Field2D, &crate::Field2D)> {
    let missing = |var: VariableKind| {
        Error::InvalidParams(format!("run '{}' has no {var} field at FT={lead}", run.model_id))
    };
    Ok((
        run.get(lead, VariableKind::U10)
            .ok_or_else(|| missing(VariableKind::U10))?,
        run.get(lead, VariableKind::V10)
            .ok_or_else(|| missing(VariableKind::V10))?,
    ))
}

/// `n` stations uniformly placed at least `margin` cells inside the grid.
pub fn random_stations(grid: &GridSpec, n: usize, margin: f64, seed: u64) -> Vec<Station> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["stations"]));
    let span_i = (grid.n_y - 1) as f64 - 2.0 * margin;
    let span_j = (grid.n_x - 1) as f64 - 2.0 * margin;
    (0..n)
        .map(|k| {
            let fi = margin + rng.gen_range(0.0..1.0) * span_i;
            let fj = margin + rng.gen_range(0.0..1.0) * span_j;
            Station {
                id: format!("S{k:03}"),
                lat: grid.lat0 + fi * grid.d_lat,
                lon: grid.lon0 + fj * grid.d_lon,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub system: String,
    pub lead_hours: u32,
    pub variable: Quantity,
    pub rmse: f64,
    pub n_stations: usize,
    pub n_times: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationResult {
    pub rows: Vec<VerificationRow>,
}

impl VerificationResult {
    pub fn get(&self, system: &str, lead_hours: u32, variable: Quantity) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.lead_hours == lead_hours && r.variable == variable)
            .map(|r| r.rmse)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("system,lead_hours,variable,rmse,n_stations,n_times\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.6},{},{}\n",
                r.system, r.lead_hours, r.variable, r.rmse, r.n_stations, r.n_times
            ));
        }
        s
    }
}

/// Wind speed and direction RMSE of each system per lead hour against
/// station observations.
pub fn verify_against_stations(
    systems: &[&ForecastRun],
    obs: &ObsSet,
    stations: &[Station],
    leads: &[u32],
) -> Result<VerificationResult> {
    obs.validate()?;
    if stations.is_empty() {
        return Err(Error::Empty("stations"));
    }
    let mut rows = Vec::new();
    for sys in systems {
        for st in stations {
            st.check_inside(&sys.grid)?;
        }
        for &lead in leads {
            let (u, v) = wind_pair(sys, lead)?;
            let (mut fs, mut os) = (Vec::new(), Vec::new());
            let (mut fd, mut od) = (Vec::new(), Vec::new());
            for st in stations {
                let o = obs.find(&st.id, lead).ok_or_else(|| {
                    Error::InvalidParams(format!("no observation for station {} at FT={lead}", st.id))
                })?;
                let (speed, dir) = wind_speed_dir(
                    bilinear_sample(u, st.lat, st.lon)?,
                    bilinear_sample(v, st.lat, st.lon)?,
                );
                fs.push(speed);
                os.push(o.speed);
                if o.speed >= CALM_THRESHOLD {
                    fd.push(dir);
                    od.push(o.direction);
                }
            }
            rows.push(VerificationRow {
                system: sys.model_id.clone(),
                lead_hours: lead,
                variable: Quantity::WindSpeed,
                rmse: rmse(&[fs.clone()], &[os], Quantity::WindSpeed)?,
                n_stations: fs.len(),
                n_times: 1,
            });
            if !fd.is_empty() {
                rows.push(VerificationRow {
                    system: sys.model_id.clone(),
                    lead_hours: lead,
                    variable: Quantity::WindDirection,
                    rmse: rmse(&[fd.clone()], &[od], Quantity::WindDirection)?,
                    n_stations: fd.len(),
                    n_times: 1,
                });
            }
        }
    }
    Ok(VerificationResult { rows })
}
