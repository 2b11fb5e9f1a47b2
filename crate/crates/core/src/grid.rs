//! Target grid, field containers and spatial sampling.
//!
//! Rows run south to north (row 0 is the southernmost row) and columns run
//! west to east. Field values are stored row-major, `values[i * n_x + j]`.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kilometres per degree of latitude on a 6371 km sphere.
pub const KM_PER_DEG: f64 = 111.194_926_644_558_73;

/// Regular latitude/longitude grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_y: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub d_lat: f64,
    pub d_lon: f64,
}

impl GridSpec {
    pub fn new(n_x: usize, n_y: usize, lat0: f64, lon0: f64, d_lat: f64, d_lon: f64) -> Result<Self> {
        let grid = GridSpec {
            n_x,
            n_y,
            lat0,
            lon0,
            d_lat,
            d_lon,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 64 x 64 grid with the 0.2 deg x 0.25 deg spacing, used for desk-scale training.
    pub fn desk() -> Self {
        GridSpec {
            n_x: 64,
            n_y: 64,
            lat0: 24.0,
            lon0: 128.0,
            d_lat: 0.2,
            d_lon: 0.25,
        }
    }

    /// 121 columns x 151 rows around Japan at 0.25 deg (lon) x 0.2 deg (lat).
    pub fn full() -> Self {
        GridSpec {
            n_x: 121,
            n_y: 151,
            lat0: 20.0,
            lon0: 120.0,
            d_lat: 0.2,
            d_lon: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < 2 || self.n_y < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2x2 points, got {}x{}",
                self.n_x, self.n_y
            )));
        }
        let finite = [self.lat0, self.lon0, self.d_lat, self.d_lon]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.d_lat <= 0.0 || self.d_lon <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "steps must be positive and finite (d_lat={}, d_lon={})",
                self.d_lat, self.d_lon
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lat_max(&self) -> f64 {
        self.lat0 + (self.n_y - 1) as f64 * self.d_lat
    }

    pub fn lon_max(&self) -> f64 {
        self.lon0 + (self.n_x - 1) as f64 * self.d_lon
    }

    /// Latitude and longitude of grid point (row `i`, column `j`).
    pub fn latlon_of(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        if i >= self.n_y || j >= self.n_x {
            return Err(Error::IndexOutOfRange {
                i,
                j,
                n_y: self.n_y,
                n_x: self.n_x,
            });
        }
        Ok((
            self.lat0 + i as f64 * self.d_lat,
            self.lon0 + j as f64 * self.d_lon,
        ))
    }

    /// Fractional (row, column) position of a point; no bounds check.
    pub fn fractional_index(&self, lat: f64, lon: f64) -> (f64, f64) {
        ((lat - self.lat0) / self.d_lat, (lon - self.lon0) / self.d_lon)
    }

    /// Inverse of [`GridSpec::latlon_of`]: nearest grid point to (lat, lon).
    pub fn index_of(&self, lat: f64, lon: f64) -> Result<(usize, usize)> {
        let (fi, fj) = self.fractional_index(lat, lon);
        let (i, j) = (fi.round(), fj.round());
        if !(i >= 0.0 && j >= 0.0 && i < self.n_y as f64 && j < self.n_x as f64) {
            return Err(Error::OutOfDomain { lat, lon });
        }
        Ok((i as usize, j as usize))
    }

    /// True when the point lies in the closed bounding box of the grid.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let (fi, fj) = self.fractional_index(lat, lon);
        let tol = 1e-9;
        fi >= -tol && fj >= -tol && fi <= (self.n_y - 1) as f64 + tol && fj <= (self.n_x - 1) as f64 + tol
    }

    /// True when the point lies at least `margin` cells inside every edge.
    pub fn contains_with_margin(&self, lat: f64, lon: f64, margin: f64) -> bool {
        let (fi, fj) = self.fractional_index(lat, lon);
        fi > margin
            && fj > margin
            && fi < (self.n_y - 1) as f64 - margin
            && fj < (self.n_x - 1) as f64 - margin
    }

    /// Local equirectangular offset (east, north) in km of `to` relative to `from`.
    pub fn offset_km(from: (f64, f64), to: (f64, f64)) -> (f64, f64) {
        let coslat = (0.5 * (from.0 + to.0)).to_radians().cos();
        (
            (to.1 - from.1) * KM_PER_DEG * coslat,
            (to.0 - from.0) * KM_PER_DEG,
        )
    }

    pub fn distance_km(a: (f64, f64), b: (f64, f64)) -> f64 {
        let (dx, dy) = Self::offset_km(a, b);
        dx.hypot(dy)
    }

    /// Nominal cell size in km (east, north) at the grid's central latitude.
    pub fn cell_km(&self) -> (f64, f64) {
        let lat_c = 0.5 * (self.lat0 + self.lat_max());
        (
            self.d_lon * KM_PER_DEG * lat_c.to_radians().cos(),
            self.d_lat * KM_PER_DEG,
        )
    }
}

/// How a variable is scaled into [0, 1] before entering a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormClass {
    /// Range is `[-m, m]` with `m = max(|min|, |max|)`, so zero maps to 0.5.
    Symmetric,
    MinMax,
}

impl NormClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NormClass::Symmetric => "symmetric",
            NormClass::MinMax => "min-max",
        }
    }
}

impl FromStr for NormClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NormClass::Symmetric),
            "min-max" => Ok(NormClass::MinMax),
            other => Err(Error::Config(format!("unknown normalization class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VariableKind {
    U10,
    V10,
    T2M,
    RH2M,
    PSEA,
}

impl VariableKind {
    pub const ALL: [VariableKind; 5] = [
        VariableKind::U10,
        VariableKind::V10,
        VariableKind::T2M,
        VariableKind::RH2M,
        VariableKind::PSEA,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariableKind::U10 => "U10",
            VariableKind::V10 => "V10",
            VariableKind::T2M => "T2M",
            VariableKind::RH2M => "RH2M",
            VariableKind::PSEA => "PSEA",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            VariableKind::U10 | VariableKind::V10 => "m/s",
            VariableKind::T2M => "degC",
            VariableKind::RH2M => "%",
            VariableKind::PSEA => "hPa",
        }
    }

    pub fn norm_class(self) -> NormClass {
        match self {
            VariableKind::U10 | VariableKind::V10 => NormClass::Symmetric,
            _ => NormClass::MinMax,
        }
    }
}

impl fmt::Display for VariableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariableKind::ALL
            .iter()
            .copied()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variable '{s}'")))
    }
}

/// One variable on the grid at one valid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub variable: VariableKind,
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub init_time: NaiveDateTime,
    pub lead_hours: u32,
}

impl Field2D {
    pub fn new(
        variable: VariableKind,
        grid: GridSpec,
        values: Vec<f64>,
        init_time: NaiveDateTime,
        lead_hours: u32,
    ) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.n_y,
                grid.n_x
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite {variable} value at index {k}"
            )));
        }
        if variable == VariableKind::RH2M {
            if let Some(v) = values.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(Error::InvalidField(format!("RH2M value {v} outside [0, 100]")));
            }
        }
        Ok(Field2D {
            variable,
            grid,
            values,
            init_time,
            lead_hours,
        })
    }

    /// Field with every value equal to `value`.
    pub fn constant(
        variable: VariableKind,
        grid: GridSpec,
        value: f64,
        init_time: NaiveDateTime,
        lead_hours: u32,
    ) -> Result<Self> {
        Self::new(variable, grid, vec![value; grid.len()], init_time, lead_hours)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_x + j]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same variable, grid, valid time; the check used before combining fields.
    pub fn check_compatible(&self, other: &Field2D) -> Result<()> {
        if self.variable != other.variable {
            return Err(Error::Shape(format!(
                "variable mismatch: {} vs {}",
                self.variable, other.variable
            )));
        }
        if self.grid != other.grid {
            return Err(Error::Shape("grid mismatch".into()));
        }
        if self.lead_hours != other.lead_hours {
            return Err(Error::Shape(format!(
                "lead hour mismatch: {} vs {}",
                self.lead_hours, other.lead_hours
            )));
        }
        Ok(())
    }

    /// Copy of this field's metadata carrying new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Field2D> {
        Field2D::new(self.variable, self.grid, values, self.init_time, self.lead_hours)
    }
}

/// Bilinear interpolation from the four grid points surrounding (lat, lon).
pub fn bilinear_sample(field: &Field2D, lat: f64, lon: f64) -> Result<f64> {
    let grid = &field.grid;
    if !grid.contains(lat, lon) {
        return Err(Error::OutOfDomain { lat, lon });
    }
    let (fi, fj) = grid.fractional_index(lat, lon);
    let fi = fi.clamp(0.0, (grid.n_y - 1) as f64);
    let fj = fj.clamp(0.0, (grid.n_x - 1) as f64);
    let i0 = (fi.floor() as usize).min(grid.n_y - 2);
    let j0 = (fj.floor() as usize).min(grid.n_x - 2);
    let ty = fi - i0 as f64;
    let tx = fj - j0 as f64;
    let f00 = field.at(i0, j0);
    let f01 = field.at(i0, j0 + 1);
    let f10 = field.at(i0 + 1, j0);
    let f11 = field.at(i0 + 1, j0 + 1);
    Ok((1.0 - ty) * ((1.0 - tx) * f00 + tx * f01) + ty * ((1.0 - tx) * f10 + tx * f11))
}

/// A verification site. Must sit at least one cell inside the grid edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64, grid: &GridSpec) -> Result<Self> {
        let st = Station {
            id: id.into(),
            lat,
            lon,
        };
        st.check_inside(grid)?;
        Ok(st)
    }

    pub fn check_inside(&self, grid: &GridSpec) -> Result<()> {
        // Exactly one cell from the edge is still allowed.
        if grid.contains_with_margin(self.lat, self.lon, 1.0 - 1e-9) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}
