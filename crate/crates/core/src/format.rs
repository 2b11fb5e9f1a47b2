//! On-disk formats: `MFD1` field files, run directories, station and
//! observation CSVs, and grayscale renderings.
//!
//! ```text
//! MFD1
//! variable: PSEA
//! units: hPa
//! n_x: 64
//! n_y: 64
//! lat0: 24
//! lon0: 128
//! d_lat: 0.2
//! d_lon: 0.25
//! model_id: A
//! init_time: 2023-08-01T00:00:00
//! lead_hours: 12
//! normalization: min-max
//!
//! <n_x * n_y f32 little-endian values, row-major, row 0 southernmost>
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ObsSet, WindObs};
use crate::error::{Error, Result};
use crate::grid::{Field2D, GridSpec, NormClass, Station, VariableKind};
use crate::synth::ForecastRun;

pub const FIELD_MAGIC: &str = "MFD1";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const MAX_HEADER_LINES: usize = 64;

/// A field together with the model that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub model_id: String,
    pub field: Field2D,
}

pub fn write_field<W: Write>(mut out: W, model_id: &str, field: &Field2D) -> std::io::Result<()> {
    if model_id.is_empty() || model_id.contains(['\n', '\r']) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("model id {model_id:?} cannot be stored in a header"),
        ));
    }
    let g = &field.grid;
    let header = format!(
        "{FIELD_MAGIC}\nvariable: {}\nunits: {}\nn_x: {}\nn_y: {}\nlat0: {}\nlon0: {}\nd_lat: {}\nd_lon: {}\n\
         model_id: {model_id}\ninit_time: {}\nlead_hours: {}\nnormalization: {}\n\n",
        field.variable,
        field.variable.units(),
        g.n_x,
        g.n_y,
        g.lat0,
        g.lon0,
        g.d_lat,
        g.d_lon,
        field.init_time.format(TIME_FORMAT),
        field.lead_hours,
        field.variable.norm_class().as_str(),
    );
    out.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(field.values.len() * 4);
    for &v in &field.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()
}

/// Parses an `MFD1` stream; `origin` only labels error messages.
pub fn read_field<R: BufRead>(mut input: R, origin: &Path) -> Result<FieldFile> {
    let bad = |msg: String| Error::format(origin, msg);
    let mut kv = BTreeMap::new();
    let mut first = true;
    loop {
        let mut line = String::new();
        let n = input.read_line(&mut line).map_err(|e| Error::io(origin, e))?;
        if n == 0 {
            return Err(bad("header is not terminated by a blank line".into()));
        }
        let line = line.trim_end_matches(['\n', '\r']);
        if first {
            if line != FIELD_MAGIC {
                return Err(bad(format!("missing {FIELD_MAGIC} magic")));
            }
            first = false;
            continue;
        }
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
        if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(bad(format!("duplicate header key '{}'", k.trim())));
        }
        if kv.len() > MAX_HEADER_LINES {
            return Err(bad("header too long".into()));
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing header key '{k}'")));
    fn parse<T: std::str::FromStr>(v: &str, k: &str, origin: &Path) -> Result<T> {
        v.parse()
            .map_err(|_| Error::format(origin, format!("header key '{k}' has bad value '{v}'")))
    }
    let num = |k: &str| -> Result<f64> { parse(get(k)?, k, origin) };
    let int = |k: &str| -> Result<usize> { parse(get(k)?, k, origin) };

    let variable: VariableKind = get("variable")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    if get("units")? != variable.units() {
        return Err(bad(format!("units '{}' do not match {variable}", get("units")?)));
    }
    let norm: NormClass = get("normalization")?
        .parse()
        .map_err(|e: Error| bad(e.to_string()))?;
    if norm != variable.norm_class() {
        return Err(bad(format!(
            "normalization '{}' does not match {variable}",
            norm.as_str()
        )));
    }
    let grid = GridSpec::new(
        int("n_x")?,
        int("n_y")?,
        num("lat0")?,
        num("lon0")?,
        num("d_lat")?,
        num("d_lon")?,
    )
    .map_err(|e| bad(e.to_string()))?;
    let init_time = NaiveDateTime::parse_from_str(get("init_time")?, TIME_FORMAT)
        .map_err(|e| bad(format!("bad init_time: {e}")))?;
    let lead_hours: u32 = parse(get("lead_hours")?, "lead_hours", origin)?;
    let model_id = get("model_id")?.clone();

    let mut payload = Vec::new();
    input
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(origin, e))?;
    if payload.len() != grid.len() * 4 {
        return Err(bad(format!(
            "payload has {} bytes, expected {} for {}x{}",
            payload.len(),
            grid.len() * 4,
            grid.n_y,
            grid.n_x
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let field =
        Field2D::new(variable, grid, values, init_time, lead_hours).map_err(|e| bad(e.to_string()))?;
    Ok(FieldFile { model_id, field })
}

pub fn save_field(path: &Path, model_id: &str, field: &Field2D) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_field(std::io::BufWriter::new(file), model_id, field).map_err(|e| Error::io(path, e))
}

pub fn load_field(path: &Path) -> Result<FieldFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_field(BufReader::new(file), path)
}

/// `<dir>/<model_id>/<VAR>_ft<lead:03>.mfd`
pub fn field_path(dir: &Path, model_id: &str, variable: VariableKind, lead_hours: u32) -> PathBuf {
    dir.join(model_id)
        .join(format!("{variable}_ft{lead_hours:03}.mfd"))
}

/// Writes every field of `run` (optionally only `variables`) and returns the
/// paths in write order.
pub fn save_run(dir: &Path, run: &ForecastRun, variables: Option<&[VariableKind]>) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (&lead, vars) in &run.fields {
        for (&var, field) in vars {
            if variables.is_some_and(|vs| !vs.contains(&var)) {
                continue;
            }
            let p = field_path(dir, &run.model_id, var, lead);
            save_field(&p, &run.model_id, field)?;
            paths.push(p);
        }
    }
    Ok(paths)
}

/// Reads every `.mfd` file in one model directory into a run.
pub fn load_run(model_dir: &Path) -> Result<ForecastRun> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(model_dir)
        .map_err(|e| Error::io(model_dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(model_dir, e)))
        .collect::<Result<_>>()?;
    entries.retain(|p| p.extension().is_some_and(|x| x == "mfd"));
    entries.sort();
    let mut run: Option<ForecastRun> = None;
    for p in entries {
        let ff = load_field(&p)?;
        let r = run
            .get_or_insert_with(|| ForecastRun::new(ff.model_id.clone(), ff.field.init_time, ff.field.grid));
        if ff.model_id != r.model_id || ff.field.init_time != r.init_time {
            return Err(Error::format(
                &p,
                format!("does not belong to run '{}'", r.model_id),
            ));
        }
        r.insert(ff.field).map_err(|e| Error::format(&p, e.to_string()))?;
    }
    run.ok_or(Error::Empty("field files in run directory"))
}

#[derive(Debug, Serialize, Deserialize)]
struct StationRow {
    id: String,
    lat: f64,
    lon: f64,
}

pub fn write_stations<W: Write>(out: W, stations: &[Station]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in stations {
        w.serialize(StationRow {
            id: s.id.clone(),
            lat: s.lat,
            lon: s.lon,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))
}

pub fn read_stations<R: Read>(input: R, origin: &Path) -> Result<Vec<Station>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<StationRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::format(origin, e.to_string()))?;
            Ok(Station {
                id: row.id,
                lat: row.lat,
                lon: row.lon,
            })
        })
        .collect()
}

pub fn write_obs<W: Write>(out: W, obs: &ObsSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for o in &obs.records {
        w.serialize(o).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))
}

pub fn read_obs<R: Read>(input: R, origin: &Path) -> Result<ObsSet> {
    let mut r = csv::Reader::from_reader(input);
    let records = r
        .deserialize::<WindObs>()
        .map(|row| row.map_err(|e| Error::format(origin, e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let set = ObsSet { records };
    set.validate().map_err(|e| Error::format(origin, e.to_string()))?;
    Ok(set)
}

/// Contour lines of a second field drawn over a rendering.
#[derive(Debug, Clone, Copy)]
pub struct ContourOverlay<'a> {
    pub field: &'a Field2D,
    pub interval: f64,
}

/// Grayscale image of a field with min black and max white, north up.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub min: f64,
    pub max: f64,
    pub upscale: u32,
}

impl Rendering {
    /// Pixel of grid point `(i, j)`'s top-left sub-pixel.
    pub fn pixel_of(&self, i: usize, j: usize, n_y: usize) -> (u32, u32) {
        (j as u32 * self.upscale, (n_y - 1 - i) as u32 * self.upscale)
    }

    pub fn sidecar(&self, field: &Field2D, overlay: Option<&ContourOverlay<'_>>) -> String {
        let mut s = format!(
            "variable: {}\nunits: {}\nmin: {}\nmax: {}\nblack: min\nwhite: max\nupscale: {}\nwidth: {}\nheight: {}\n",
            field.variable,
            field.variable.units(),
            self.min,
            self.max,
            self.upscale,
            self.width,
            self.height
        );
        if let Some(o) = overlay {
            s.push_str(&format!(
                "contour_variable: {}\ncontour_interval: {}\n",
                o.field.variable, o.interval
            ));
        }
        s
    }
}

pub fn render(field: &Field2D, upscale: u32, overlay: Option<&ContourOverlay<'_>>) -> Result<Rendering> {
    if upscale == 0 {
        return Err(Error::InvalidParams("upscale must be at least 1".into()));
    }
    let g = field.grid;
    let (min, max) = (field.min(), field.max());
    let shade = |x: f64| -> u8 {
        if max > min {
            (255.0 * (x - min) / (max - min)).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    };
    let mut line = vec![false; g.len()];
    if let Some(o) = overlay {
        if o.field.grid != g {
            return Err(Error::Shape("contour field is on a different grid".into()));
        }
        if !(o.interval > 0.0) {
            return Err(Error::InvalidParams("contour interval must be positive".into()));
        }
        let band = |x: f64| (x / o.interval).floor() as i64;
        for i in 0..g.n_y {
            for j in 0..g.n_x {
                let b = band(o.field.at(i, j));
                let crosses = (j + 1 < g.n_x && band(o.field.at(i, j + 1)) != b)
                    || (i + 1 < g.n_y && band(o.field.at(i + 1, j)) != b);
                line[i * g.n_x + j] = crosses;
            }
        }
    }
    let up = upscale as usize;
    let (width, height) = (g.n_x * up, g.n_y * up);
    let mut pixels = vec![0u8; width * height];
    for row in 0..height {
        let i = g.n_y - 1 - row / up;
        for col in 0..width {
            let j = col / up;
            // Contours are drawn on the centre sub-pixel only, so the shading
            // of every grid point stays visible.
            let on_line = line[i * g.n_x + j] && row % up == up / 2 && col % up == up / 2;
            pixels[row * width + col] = if on_line { 255 } else { shade(field.at(i, j)) };
        }
    }
    Ok(Rendering {
        width: width as u32,
        height: height as u32,
        pixels,
        min,
        max,
        upscale,
    })
}

/// Binary portable graymap bytes.
pub fn encode_pgm(r: &Rendering) -> Result<Vec<u8>> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&r.pixels, r.width, r.height, image::ExtendedColorType::L8)
        .map_err(|e| Error::InvalidParams(format!("image encoding failed: {e}")))?;
    Ok(out)
}
