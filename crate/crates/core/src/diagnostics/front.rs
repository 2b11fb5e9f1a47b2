use crate::error::{Error, Result};
use crate::grid::Field2D;

/// Minimum meridional wind shear for a front, m/s per km.
pub const SHEAR_THRESHOLD: f64 = 0.02;

/// Latitude of the front crossing the column nearest `along_lon`.
///
/// Scores each interior row by |dT/dy| times the magnitude of the
/// meridional wind shear and returns the best-scoring latitude (parabolic
/// sub-cell refinement), or `None` when the shear never reaches
/// [`SHEAR_THRESHOLD`].
pub fn detect_front(t2m: &Field2D, u: &Field2D, v: &Field2D, along_lon: f64) -> Result<Option<f64>> {
    let g = t2m.grid;
    if u.grid != g || v.grid != g {
        return Err(Error::Shape("front fields must share one grid".into()));
    }
    let fj = (along_lon - g.lon0) / g.d_lon;
    if !(fj >= -1e-9 && fj <= (g.n_x - 1) as f64 + 1e-9) {
        return Err(Error::OutOfDomain {
            lat: g.lat0,
            lon: along_lon,
        });
    }
    let j = fj.round().clamp(0.0, (g.n_x - 1) as f64) as usize;
    let dy_km = 2.0 * g.cell_km().1;

    let mut scores = vec![0.0; g.n_y];
    let mut best: Option<usize> = None;
    for i in 1..g.n_y - 1 {
        let dtdy = (t2m.at(i + 1, j) - t2m.at(i - 1, j)) / dy_km;
        let dudy = (u.at(i + 1, j) - u.at(i - 1, j)) / dy_km;
        let dvdy = (v.at(i + 1, j) - v.at(i - 1, j)) / dy_km;
        let shear = dudy.hypot(dvdy);
        scores[i] = dtdy.abs() * shear;
        if shear >= SHEAR_THRESHOLD && best.map_or(true, |b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    let Some(i) = best else {
        return Ok(None);
    };
    let mut fi = i as f64;
    if i >= 2 && i + 2 < g.n_y {
        let (a, b, c) = (scores[i - 1], scores[i], scores[i + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            fi += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(Some(g.lat0 + fi * g.d_lat))
}
