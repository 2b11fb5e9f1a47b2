//! Synthetic NWP-like forecast runs.
//!
//! Parametric cyclones (exponential pressure dip, Rankine winds) and fronts
//! (tanh transition) move along a track; each "model" shifts them by a
//! displacement that grows linearly with lead time and adds its own smooth
//! noise.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Field2D, GridSpec, VariableKind, KM_PER_DEG};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexParams {
    /// (lat, lon) in degrees.
    pub center: (f64, f64),
    /// Environmental pressure, hPa.
    pub p_env: f64,
    /// Pressure depth, hPa.
    pub dp: f64,
    /// Radius of maximum wind, km.
    pub r_max: f64,
    /// Maximum tangential wind, m/s.
    pub v_max: f64,
}

impl VortexParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dp > 0.0 && self.dp <= 120.0) {
            return Err(Error::InvalidParams(format!(
                "vortex dp {} not in (0, 120]",
                self.dp
            )));
        }
        if !(20.0..=500.0).contains(&self.r_max) {
            return Err(Error::InvalidParams(format!(
                "vortex r_max {} not in [20, 500] km",
                self.r_max
            )));
        }
        if !(self.v_max > 0.0 && self.v_max <= 90.0) {
            return Err(Error::InvalidParams(format!(
                "vortex v_max {} not in (0, 90] m/s",
                self.v_max
            )));
        }
        if !self.p_env.is_finite() {
            return Err(Error::InvalidParams("vortex p_env must be finite".into()));
        }
        Ok(())
    }

    pub fn pressure_at(&self, r_km: f64) -> f64 {
        self.p_env - self.dp * (-r_km / self.r_max).exp()
    }

    /// Rankine tangential wind speed.
    pub fn tangential_wind_at(&self, r_km: f64) -> f64 {
        if r_km <= self.r_max {
            self.v_max * r_km / self.r_max
        } else {
            self.v_max * self.r_max / r_km
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontParams {
    /// A point on the front line, (lat, lon).
    pub anchor: (f64, f64),
    /// Direction the front line runs, degrees counterclockwise from east.
    /// The warm side lies to the right of this direction.
    pub orientation: f64,
    /// Temperature at the front line, degC.
    pub t_mid: f64,
    /// Warm-side minus cold-side temperature, degC.
    pub contrast: f64,
    /// Half-width of the tanh transition, km.
    pub width_km: f64,
    /// Front-relative wind (u, v) far on the warm side, m/s.
    pub warm_wind: (f64, f64),
    /// Front-relative wind (u, v) far on the cold side, m/s.
    pub cold_wind: (f64, f64),
}

impl FrontParams {
    pub fn validate(&self) -> Result<()> {
        if !(30.0..=300.0).contains(&self.width_km) {
            return Err(Error::InvalidParams(format!(
                "front width {} not in [30, 300] km",
                self.width_km
            )));
        }
        let (wu, wv) = self.warm_wind;
        let (cu, cv) = self.cold_wind;
        let dot = wu * cu + wv * cv;
        if dot > 0.0 {
            return Err(Error::InvalidParams(
                "front winds must differ in direction by at least 90 degrees".into(),
            ));
        }
        Ok(())
    }

    /// Signed distance (km) of a point from the front line, positive on the warm side.
    pub fn signed_distance_km(&self, lat: f64, lon: f64) -> f64 {
        let (dx, dy) = GridSpec::offset_km(self.anchor, (lat, lon));
        let theta = self.orientation.to_radians();
        // Right-hand normal of the line direction (cos, sin) is (sin, -cos).
        dx * theta.sin() - dy * theta.cos()
    }

    /// Transition weight in [-1, 1]: -1 cold side, +1 warm side.
    pub fn blend(&self, signed_km: f64) -> f64 {
        (signed_km / self.width_km).tanh()
    }

    pub fn temperature_at(&self, signed_km: f64) -> f64 {
        self.t_mid + 0.5 * self.contrast * self.blend(signed_km)
    }

    pub fn wind_at(&self, signed_km: f64) -> (f64, f64) {
        let s = 0.5 * (1.0 + self.blend(signed_km));
        (
            self.cold_wind.0 + s * (self.warm_wind.0 - self.cold_wind.0),
            self.cold_wind.1 + s * (self.warm_wind.1 - self.cold_wind.1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Feature {
    Vortex {
        #[serde(flatten)]
        params: VortexParams,
        /// Deepening rate, hPa per hour (negative fills the vortex).
        #[serde(default)]
        dp_rate: f64,
    },
    Front {
        #[serde(flatten)]
        params: FrontParams,
    },
}

impl Feature {
    fn label(&self) -> &'static str {
        match self {
            Feature::Vortex { .. } => "vortex",
            Feature::Front { .. } => "front",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub features: Vec<Feature>,
    /// Uniform background wind (u, v), m/s.
    #[serde(default)]
    pub background: (f64, f64),
    /// Motion of every feature, (east, north) km per hour.
    #[serde(default)]
    pub track_km_per_hour: (f64, f64),
    /// Smooth noise amplitude as a fraction of each variable's feature amplitude.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_p_env")]
    pub p_env: f64,
    #[serde(default = "default_t2m")]
    pub t2m_base: f64,
    /// Northward temperature decrease, degC per degree latitude.
    #[serde(default)]
    pub t2m_lapse_per_deg: f64,
    #[serde(default = "default_rh")]
    pub rh_base: f64,
}

fn default_p_env() -> f64 {
    1010.0
}

fn default_t2m() -> f64 {
    26.0
}

fn default_rh() -> f64 {
    60.0
}

impl Scenario {
    pub fn single_vortex(vortex: VortexParams, track_km_per_hour: (f64, f64), seed: u64) -> Self {
        Scenario {
            features: vec![Feature::Vortex {
                params: vortex,
                dp_rate: 0.0,
            }],
            background: (0.0, 0.0),
            track_km_per_hour,
            noise: 0.0,
            seed,
            p_env: vortex.p_env,
            t2m_base: default_t2m(),
            t2m_lapse_per_deg: 0.0,
            rh_base: default_rh(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.features {
            match f {
                Feature::Vortex { params, .. } => params.validate()?,
                Feature::Front { params } => params.validate()?,
            }
        }
        if !(0.0..=0.05).contains(&self.noise) {
            return Err(Error::InvalidParams(format!(
                "noise fraction {} not in [0, 0.05]",
                self.noise
            )));
        }
        Ok(())
    }
}

/// How one synthetic "model" departs from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPerturbation {
    pub model_id: String,
    /// Extra feature motion, (east, north) km per hour of lead time.
    #[serde(default)]
    pub drift_km_per_hour: (f64, f64),
    #[serde(default = "one")]
    pub intensity_scale: f64,
    #[serde(default)]
    pub timing_offset_hours: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelPerturbation {
    pub fn identity(model_id: impl Into<String>) -> Self {
        ModelPerturbation {
            model_id: model_id.into(),
            drift_km_per_hour: (0.0, 0.0),
            intensity_scale: 1.0,
            timing_offset_hours: 0.0,
        }
    }

    /// Perturbation reaching a displacement of (east, north) km at `lead_hours`.
    pub fn displaced(model_id: impl Into<String>, east_km: f64, north_km: f64, lead_hours: u32) -> Self {
        let h = lead_hours.max(1) as f64;
        ModelPerturbation {
            drift_km_per_hour: (east_km / h, north_km / h),
            ..Self::identity(model_id)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.5).contains(&self.intensity_scale) {
            return Err(Error::InvalidParams(format!(
                "intensity scale {} not in [0.5, 1.5]",
                self.intensity_scale
            )));
        }
        Ok(())
    }
}

/// One model's multi-variable, multi-lead forecast from one initial time.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub model_id: String,
    pub init_time: NaiveDateTime,
    pub grid: GridSpec,
    pub fields: BTreeMap<u32, BTreeMap<VariableKind, Field2D>>,
}

impl ForecastRun {
    pub fn new(model_id: impl Into<String>, init_time: NaiveDateTime, grid: GridSpec) -> Self {
        ForecastRun {
            model_id: model_id.into(),
            init_time,
            grid,
            fields: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, field: Field2D) -> Result<()> {
        if field.grid != self.grid {
            return Err(Error::Shape(format!(
                "field {} at FT={} is on a different grid than run '{}'",
                field.variable, field.lead_hours, self.model_id
            )));
        }
        self.fields
            .entry(field.lead_hours)
            .or_default()
            .insert(field.variable, field);
        Ok(())
    }

    pub fn get(&self, lead_hours: u32, variable: VariableKind) -> Option<&Field2D> {
        self.fields.get(&lead_hours)?.get(&variable)
    }

    pub fn lead_hours(&self) -> Vec<u32> {
        self.fields.keys().copied().collect()
    }
}

/// Fields rendered for one vortex: (PSEA, U10, V10) values.
pub struct VortexFields {
    pub psea: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn render_vortex(params: &VortexParams, grid: &GridSpec) -> Result<VortexFields> {
    params.validate()?;
    if !grid.contains(params.center.0, params.center.1) {
        return Err(Error::OutOfDomain {
            lat: params.center.0,
            lon: params.center.1,
        });
    }
    let n = grid.len();
    let mut out = VortexFields {
        psea: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for i in 0..grid.n_y {
        for j in 0..grid.n_x {
            let (lat, lon) = grid.latlon_of(i, j)?;
            let (dx, dy) = GridSpec::offset_km(params.center, (lat, lon));
            let r = dx.hypot(dy);
            out.psea.push(params.pressure_at(r));
            let (u, v) = if r > 0.0 {
                let vt = params.tangential_wind_at(r);
                // Counterclockwise rotation.
                (-vt * dy / r, vt * dx / r)
            } else {
                (0.0, 0.0)
            };
            out.u.push(u);
            out.v.push(v);
        }
    }
    Ok(out)
}

/// Fields rendered for one front: (T2M, U10, V10) values.
pub struct FrontFields {
    pub t2m: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn render_front(params: &FrontParams, grid: &GridSpec) -> Result<FrontFields> {
    params.validate()?;
    if !grid.contains(params.anchor.0, params.anchor.1) {
        return Err(Error::OutOfDomain {
            lat: params.anchor.0,
            lon: params.anchor.1,
        });
    }
    let n = grid.len();
    let mut out = FrontFields {
        t2m: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for i in 0..grid.n_y {
        for j in 0..grid.n_x {
            let (lat, lon) = grid.latlon_of(i, j)?;
            let s = params.signed_distance_km(lat, lon);
            out.t2m.push(params.temperature_at(s));
            let (u, v) = params.wind_at(s);
            out.u.push(u);
            out.v.push(v);
        }
    }
    Ok(out)
}

/// Moves a (lat, lon) point by (east, north) km.
pub fn shift_km(point: (f64, f64), east_km: f64, north_km: f64) -> (f64, f64) {
    let coslat = point.0.to_radians().cos();
    (
        point.0 + north_km / KM_PER_DEG,
        point.1 + east_km / (KM_PER_DEG * coslat),
    )
}

/// Derives a stream seed from the scenario seed and a set of labels.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Large-scale random cosine mixture, bounded by `amplitude` everywhere.
struct SmoothNoise {
    modes: Vec<NoiseMode>,
    norm: f64,
}

struct NoiseMode {
    weight: f64,
    kx: f64,
    ky: f64,
    phase: f64,
    omega: f64,
}

impl SmoothNoise {
    const MODES: usize = 8;

    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<NoiseMode> = (0..Self::MODES)
            .map(|_| {
                let wavelength = rng.gen_range(600.0..2000.0);
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                NoiseMode {
                    weight: rng.gen_range(-1.0..1.0),
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    omega: rng.gen_range(-1.0..1.0) * std::f64::consts::TAU / 96.0,
                }
            })
            .collect();
        let norm = modes.iter().map(|m| m.weight.abs()).sum::<f64>().max(1e-12);
        SmoothNoise { modes, norm }
    }

    fn eval(&self, x_km: f64, y_km: f64, hours: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| m.weight * (m.kx * x_km + m.ky * y_km + m.phase + m.omega * hours).cos())
            .sum::<f64>()
            / self.norm
    }
}

/// Renders one model's run of the scenario at the requested lead hours.
pub fn generate_run(
    scenario: &Scenario,
    pert: &ModelPerturbation,
    grid: &GridSpec,
    init_time: NaiveDateTime,
    lead_hours: &[u32],
) -> Result<ForecastRun> {
    grid.validate()?;
    scenario.validate()?;
    pert.validate()?;
    if lead_hours.is_empty() {
        return Err(Error::Empty("lead hours"));
    }
    if lead_hours.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams(
            "lead hours must be strictly increasing".into(),
        ));
    }

    let scale = pert.intensity_scale;
    let mut p_amp: f64 = 0.0;
    let mut wind_amp: f64 = 0.0;
    let mut t_amp: f64 = 0.0;
    for f in &scenario.features {
        match f {
            Feature::Vortex { params, .. } => {
                p_amp = p_amp.max(params.dp * scale);
                wind_amp = wind_amp.max(params.v_max * scale);
            }
            Feature::Front { params } => {
                t_amp = t_amp.max(params.contrast.abs() * scale);
                let (wu, wv) = params.warm_wind;
                let (cu, cv) = params.cold_wind;
                wind_amp = wind_amp.max(wu.hypot(wv) * scale).max(cu.hypot(cv) * scale);
            }
        }
    }
    let has_vortex = p_amp > 0.0;
    let rh_amp = if has_vortex { 35.0 } else { 0.0 };

    let noise_for =
        |var: VariableKind| SmoothNoise::new(derive_seed(scenario.seed, &[&pert.model_id, var.as_str()]));
    let noises: BTreeMap<VariableKind, SmoothNoise> =
        VariableKind::ALL.iter().map(|&v| (v, noise_for(v))).collect();

    // Grid point positions in km from the grid origin.
    let origin = (grid.lat0, grid.lon0);
    let mut pos_km = Vec::with_capacity(grid.len());
    let mut lats = Vec::with_capacity(grid.len());
    for i in 0..grid.n_y {
        for j in 0..grid.n_x {
            let p = grid.latlon_of(i, j)?;
            let (x, y) = GridSpec::offset_km(origin, p);
            pos_km.push((x, y));
            lats.push(p.0);
        }
    }

    let mut run = ForecastRun::new(pert.model_id.clone(), init_time, *grid);
    let n = grid.len();
    for &lead in lead_hours {
        let te = lead as f64 + pert.timing_offset_hours;
        let east = scenario.track_km_per_hour.0 * te + pert.drift_km_per_hour.0 * lead as f64;
        let north = scenario.track_km_per_hour.1 * te + pert.drift_km_per_hour.1 * lead as f64;

        let mut psea = vec![scenario.p_env; n];
        let mut u = vec![scenario.background.0; n];
        let mut v = vec![scenario.background.1; n];
        let mut t2m: Vec<f64> = lats
            .iter()
            .map(|lat| scenario.t2m_base - scenario.t2m_lapse_per_deg * (lat - grid.lat0))
            .collect();
        let mut rh = vec![scenario.rh_base; n];

        for feature in &scenario.features {
            let outside = || Error::FeatureOutsideGrid {
                feature: feature.label().to_string(),
                lead_hours: lead,
            };
            match feature {
                Feature::Vortex { params, dp_rate } => {
                    let center = shift_km(params.center, east, north);
                    if !grid.contains(center.0, center.1) {
                        return Err(outside());
                    }
                    let moved = VortexParams {
                        center,
                        dp: ((params.dp + dp_rate * te) * scale).clamp(1.0, 120.0),
                        v_max: (params.v_max * scale).min(90.0),
                        ..*params
                    };
                    let vf = render_vortex(&moved, grid)?;
                    for k in 0..n {
                        psea[k] += vf.psea[k] - moved.p_env;
                        u[k] += vf.u[k];
                        v[k] += vf.v[k];
                    }
                    // Moist blob around the center.
                    let sigma = 2.0 * moved.r_max;
                    for i in 0..grid.n_y {
                        for j in 0..grid.n_x {
                            let p = (lats[i * grid.n_x + j], grid.lon0 + j as f64 * grid.d_lon);
                            let r = GridSpec::distance_km(center, p);
                            rh[i * grid.n_x + j] += rh_amp * (-0.5 * (r / sigma).powi(2)).exp();
                        }
                    }
                }
                Feature::Front { params } => {
                    let anchor = shift_km(params.anchor, east, north);
                    if !grid.contains(anchor.0, anchor.1) {
                        return Err(outside());
                    }
                    let moved = FrontParams {
                        anchor,
                        contrast: params.contrast * scale,
                        warm_wind: (params.warm_wind.0 * scale, params.warm_wind.1 * scale),
                        cold_wind: (params.cold_wind.0 * scale, params.cold_wind.1 * scale),
                        ..*params
                    };
                    let ff = render_front(&moved, grid)?;
                    for k in 0..n {
                        t2m[k] += ff.t2m[k] - moved.t_mid;
                        u[k] += ff.u[k];
                        v[k] += ff.v[k];
                    }
                }
            }
        }

        let amp = |var: VariableKind| -> f64 {
            scenario.noise
                * match var {
                    VariableKind::PSEA => p_amp,
                    VariableKind::U10 | VariableKind::V10 => wind_amp,
                    VariableKind::T2M => t_amp,
                    VariableKind::RH2M => rh_amp,
                }
        };
        let add_noise = |var: VariableKind, values: &mut [f64]| {
            let a = amp(var);
            if a > 0.0 {
                let noise = &noises[&var];
                for (val, &(x, y)) in values.iter_mut().zip(&pos_km) {
                    *val += a * noise.eval(x, y, te);
                }
            }
        };
        add_noise(VariableKind::PSEA, &mut psea);
        add_noise(VariableKind::U10, &mut u);
        add_noise(VariableKind::V10, &mut v);
        add_noise(VariableKind::T2M, &mut t2m);
        add_noise(VariableKind::RH2M, &mut rh);
        for x in rh.iter_mut() {
            *x = x.clamp(0.0, 100.0);
        }
        if let Some(p) = psea.iter().find(|p| !(**p > 850.0 && **p < 1100.0)) {
            return Err(Error::InvalidParams(format!(
                "synthetic PSEA {p} hPa at FT={lead} outside (850, 1100)"
            )));
        }

        for (var, values) in [
            (VariableKind::PSEA, psea),
            (VariableKind::U10, u),
            (VariableKind::V10, v),
            (VariableKind::T2M, t2m),
            (VariableKind::RH2M, rh),
        ] {
            run.insert(Field2D::new(var, *grid, values, init_time, lead)?)?;
        }
    }
    Ok(run)
}

/// Random single-vortex scenarios used for training and evaluation.
///
/// The vortex is placed so that it stays at least `margin_cells` inside the
/// grid over `[0, max_lead]` hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexFamily {
    pub dp: (f64, f64),
    pub r_max: (f64, f64),
    pub v_max: (f64, f64),
    pub dp_rate: (f64, f64),
    /// Track speed range, km/h; direction is uniform.
    pub speed: (f64, f64),
    pub p_env: (f64, f64),
    pub background: f64,
    pub noise: f64,
    /// Lead hour at which the vortex is placed uniformly inside the domain.
    pub reference_lead: u32,
    pub max_lead: u32,
    pub margin_cells: f64,
}

impl Default for VortexFamily {
    fn default() -> Self {
        VortexFamily {
            dp: (20.0, 50.0),
            r_max: (50.0, 80.0),
            v_max: (20.0, 45.0),
            dp_rate: (-0.5, 0.5),
            speed: (10.0, 32.0),
            p_env: (1004.0, 1014.0),
            background: 3.0,
            noise: 0.02,
            reference_lead: 12,
            max_lead: 20,
            margin_cells: 4.0,
        }
    }
}

impl VortexFamily {
    pub fn scenario(&self, grid: &GridSpec, seed: u64) -> Result<Scenario> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["vortex-family"]));
        let pick = |rng: &mut ChaCha8Rng, r: (f64, f64)| {
            if r.1 > r.0 {
                rng.gen_range(r.0..r.1)
            } else {
                r.0
            }
        };
        for _ in 0..1000 {
            let speed = pick(&mut rng, self.speed);
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let track = (speed * heading.cos(), speed * heading.sin());
            let fi = rng.gen_range(0.0..1.0) * (grid.n_y - 1) as f64;
            let fj = rng.gen_range(0.0..1.0) * (grid.n_x - 1) as f64;
            let at_ref = (grid.lat0 + fi * grid.d_lat, grid.lon0 + fj * grid.d_lon);
            let h = self.reference_lead as f64;
            let start = shift_km(at_ref, -track.0 * h, -track.1 * h);
            let end = shift_km(
                start,
                track.0 * self.max_lead as f64,
                track.1 * self.max_lead as f64,
            );
            let ok = [start, at_ref, end]
                .iter()
                .all(|p| grid.contains_with_margin(p.0, p.1, self.margin_cells));
            if !ok {
                continue;
            }
            let p_env = pick(&mut rng, self.p_env);
            let vortex = VortexParams {
                center: start,
                p_env,
                dp: pick(&mut rng, self.dp),
                r_max: pick(&mut rng, self.r_max),
                v_max: pick(&mut rng, self.v_max),
            };
            let bg_dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let bg = rng.gen_range(0.0..=1.0) * self.background;
            return Ok(Scenario {
                features: vec![Feature::Vortex {
                    params: vortex,
                    dp_rate: pick(&mut rng, self.dp_rate),
                }],
                background: (bg * bg_dir.cos(), bg * bg_dir.sin()),
                track_km_per_hour: track,
                noise: self.noise,
                seed,
                p_env,
                t2m_base: default_t2m(),
                t2m_lapse_per_deg: 0.5,
                rh_base: default_rh(),
            });
        }
        Err(Error::InvalidParams(
            "could not place a vortex track inside the grid; widen the grid or slow the track".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t0() -> NaiveDateTime {
        chrono::NaiveDate::from_ymd_opt(2023, 8, 14)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    fn vortex() -> VortexParams {
        VortexParams {
            center: (30.0, 136.0),
            p_env: 1010.0,
            dp: 40.0,
            r_max: 60.0,
            v_max: 40.0,
        }
    }

    fn front() -> FrontParams {
        FrontParams {
            anchor: (30.0, 136.0),
            orientation: 0.0,
            t_mid: 21.0,
            contrast: 8.0,
            width_km: 80.0,
            warm_wind: (-2.0, 8.0),
            cold_wind: (-6.0, -4.0),
        }
    }

    #[test]
    fn vortex_profiles() {
        let p = vortex();
        assert_eq!(p.pressure_at(0.0), 970.0);
        assert_eq!(p.tangential_wind_at(60.0), 40.0);
        assert_relative_eq!(p.pressure_at(180.0), 1010.0 - 40.0 * (-3.0f64).exp());
        assert_relative_eq!(p.tangential_wind_at(180.0), 40.0 / 3.0);
        assert_relative_eq!(p.tangential_wind_at(30.0), 20.0);
    }

    #[test]
    fn vortex_validation() {
        for bad in [
            VortexParams { dp: 0.0, ..vortex() },
            VortexParams {
                dp: 121.0,
                ..vortex()
            },
            VortexParams {
                r_max: 10.0,
                ..vortex()
            },
            VortexParams {
                v_max: 95.0,
                ..vortex()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let g = GridSpec::desk();
        let outside = VortexParams {
            center: (10.0, 136.0),
            ..vortex()
        };
        assert!(matches!(
            render_vortex(&outside, &g),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn rendered_vortex_rotates_counterclockwise() {
        let g = GridSpec::desk();
        let v = VortexParams {
            center: g.latlon_of(32, 32).unwrap(),
            ..vortex()
        };
        let f = render_vortex(&v, &g).unwrap();
        let k = |i: usize, j: usize| i * g.n_x + j;
        assert_eq!(f.psea[k(32, 32)], 970.0);
        // East of the center the wind blows north; north of it, west.
        assert!(f.v[k(32, 35)] > 0.0 && f.u[k(32, 35)].abs() < 1e-9);
        assert!(f.u[k(35, 32)] < 0.0 && f.v[k(35, 32)].abs() < 1e-9);
    }

    #[test]
    fn front_profile() {
        let p = front();
        assert_eq!(p.temperature_at(0.0), 21.0);
        let far_warm = p.temperature_at(1000.0);
        assert!((far_warm - 25.0).abs() <= 0.01 * 25.0);
        // Quarter width: 21 + 4 * tanh(0.25).
        assert_relative_eq!(p.temperature_at(20.0), 21.0 + 4.0 * 0.25f64.tanh());
        // South of an eastward-running front is the warm side.
        assert!(p.signed_distance_km(29.0, 136.0) > 0.0);
        assert!(p.signed_distance_km(31.0, 136.0) < 0.0);
        let bad = FrontParams {
            cold_wind: (-1.0, 8.0),
            ..front()
        };
        assert!(bad.validate().is_err());
        let narrow = FrontParams {
            width_km: 10.0,
            ..front()
        };
        assert!(narrow.validate().is_err());
    }

    #[test]
    fn identity_perturbation_is_no_op() {
        let g = GridSpec::desk();
        let mut sc = Scenario::single_vortex(vortex(), (10.0, 5.0), 3);
        sc.noise = 0.02;
        let leads: Vec<u32> = (0..=12).collect();
        let base = generate_run(&sc, &ModelPerturbation::identity("m"), &g, t0(), &leads).unwrap();
        let also = generate_run(
            &sc,
            &ModelPerturbation::displaced("m", 0.0, 0.0, 12),
            &g,
            t0(),
            &leads,
        )
        .unwrap();
        assert_eq!(base, also);
        let again = generate_run(&sc, &ModelPerturbation::identity("m"), &g, t0(), &leads).unwrap();
        assert_eq!(base, again);
        let other = generate_run(&sc, &ModelPerturbation::identity("n"), &g, t0(), &leads).unwrap();
        assert_ne!(base, other, "noise is keyed on the model id");
    }

    #[test]
    fn no_features_gives_background_winds() {
        let g = GridSpec::desk();
        let sc = Scenario {
            features: vec![],
            background: (3.5, -1.25),
            track_km_per_hour: (0.0, 0.0),
            noise: 0.05,
            seed: 9,
            p_env: 1012.0,
            t2m_base: 20.0,
            t2m_lapse_per_deg: 0.0,
            rh_base: 50.0,
        };
        let run = generate_run(&sc, &ModelPerturbation::identity("m"), &g, t0(), &[0, 3]).unwrap();
        for lead in [0, 3] {
            assert!(run
                .get(lead, VariableKind::U10)
                .unwrap()
                .values
                .iter()
                .all(|&x| x == 3.5));
            assert!(run
                .get(lead, VariableKind::V10)
                .unwrap()
                .values
                .iter()
                .all(|&x| x == -1.25));
        }
    }

    #[test]
    fn feature_leaving_grid_reports_lead() {
        let g = GridSpec::desk();
        let sc = Scenario::single_vortex(vortex(), (0.0, 80.0), 1);
        let err = generate_run(&sc, &ModelPerturbation::identity("m"), &g, t0(), &[0, 6, 12]).unwrap_err();
        match err {
            Error::FeatureOutsideGrid { lead_hours, .. } => assert_eq!(lead_hours, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lead_hours_validated() {
        let g = GridSpec::desk();
        let sc = Scenario::single_vortex(vortex(), (0.0, 0.0), 1);
        let p = ModelPerturbation::identity("m");
        assert!(generate_run(&sc, &p, &g, t0(), &[]).is_err());
        assert!(generate_run(&sc, &p, &g, t0(), &[3, 3]).is_err());
        let bad = ModelPerturbation {
            intensity_scale: 2.0,
            ..p
        };
        assert!(generate_run(&sc, &bad, &g, t0(), &[0]).is_err());
    }

    #[test]
    fn family_scenarios_stay_inside() {
        let g = GridSpec::desk();
        let fam = VortexFamily::default();
        let leads: Vec<u32> = (0..=fam.max_lead).collect();
        for seed in 0..20 {
            let sc = fam.scenario(&g, seed).unwrap();
            assert_eq!(sc, fam.scenario(&g, seed).unwrap());
            generate_run(&sc, &ModelPerturbation::identity("m"), &g, t0(), &leads).unwrap();
        }
    }
}
