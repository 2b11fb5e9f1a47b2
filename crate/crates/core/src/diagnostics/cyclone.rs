use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field2D, GridSpec, VariableKind};

/// Default radius for the maximum-wind search, km.
pub const DEFAULT_SEARCH_RADIUS_KM: f64 = 500.0;
/// Default prominence for a pressure minimum to count as a cyclone, hPa.
pub const DEFAULT_DEPTH_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CenterQuality {
    /// Sub-cell position from a quadratic fit.
    Refined,
    /// Fit unavailable (edge or non-convex); grid-point position.
    Discrete,
    /// Flat pressure field; the center carries no information.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycloneDiagnostics {
    /// (lat, lon) in degrees.
    pub center: (f64, f64),
    /// Fractional (row, column) of the center.
    pub center_index: (f64, f64),
    pub central_pressure: f64,
    pub max_wind: f64,
    pub quality: CenterQuality,
}

/// 3x3 box mean; edge cells average over their in-grid neighbours.
pub fn smooth3x3(values: &[f64], n_x: usize, n_y: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 0..n_y {
        for j in 0..n_x {
            let mut sum = 0.0;
            let mut n = 0usize;
            for ii in i.saturating_sub(1)..=(i + 1).min(n_y - 1) {
                for jj in j.saturating_sub(1)..=(j + 1).min(n_x - 1) {
                    sum += values[ii * n_x + jj];
                    n += 1;
                }
            }
            out[i * n_x + j] = sum / n as f64;
        }
    }
    out
}

/// Index of the smallest value; the lowest index wins ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}

/// Least-squares quadratic through the 3x3 neighbourhood of (i, j); returns
/// the (row, column) offset of its stationary point when that point is a
/// minimum within one cell.
fn quadratic_offset(values: &[f64], n_x: usize, i: usize, j: usize) -> Option<(f64, f64)> {
    let f = |dy: isize, dx: isize| values[(i as isize + dy) as usize * n_x + (j as isize + dx) as usize];
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let v = f(dy, dx);
            let (x, y) = (dx as f64, dy as f64);
            sx += x * v;
            sy += y * v;
            sxy += x * y * v;
            sxx += (x * x - 2.0 / 3.0) * v;
            syy += (y * y - 2.0 / 3.0) * v;
        }
    }
    // f ~ a + b x + c y + d x^2 + e x y + g y^2
    let b = sx / 6.0;
    let c = sy / 6.0;
    let e = sxy / 4.0;
    let d = sxx / 2.0;
    let g = syy / 2.0;
    // Hessian [[2d, e], [e, 2g]] must be positive definite.
    let det = 4.0 * d * g - e * e;
    if !(d > 0.0 && det > 0.0) {
        return None;
    }
    let x = (-b * 2.0 * g + c * e) / det;
    let y = (-c * 2.0 * d + b * e) / det;
    if x.abs() <= 1.0 && y.abs() <= 1.0 {
        Some((y, x))
    } else {
        None
    }
}

fn check_same_grid(fields: &[&Field2D]) -> Result<()> {
    let g = fields[0].grid;
    if fields.iter().any(|f| f.grid != g) {
        return Err(Error::Shape("diagnostic fields must share one grid".into()));
    }
    Ok(())
}

/// Cyclone center, central pressure and maximum wind.
///
/// The center is the minimum of the 3x3-smoothed pressure, refined by a
/// quadratic fit; the central pressure is the raw minimum in the 3x3
/// neighbourhood of that point.
pub fn detect_cyclone(
    psea: &Field2D,
    u: &Field2D,
    v: &Field2D,
    search_radius_km: f64,
) -> Result<CycloneDiagnostics> {
    check_same_grid(&[psea, u, v])?;
    if psea.variable != VariableKind::PSEA {
        return Err(Error::Shape(format!("expected PSEA, got {}", psea.variable)));
    }
    let g = psea.grid;
    let smooth = smooth3x3(&psea.values, g.n_x, g.n_y);
    let k = argmin(&smooth);
    let (i, j) = (k / g.n_x, k % g.n_x);

    let lo = smooth[k];
    let hi = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let interior = i >= 1 && j >= 1 && i + 1 < g.n_y && j + 1 < g.n_x;
    let (quality, (di, dj)) = if hi - lo <= 1e-9 * hi.abs().max(1.0) {
        (CenterQuality::Degenerate, (0.0, 0.0))
    } else if let Some(off) = interior.then(|| quadratic_offset(&smooth, g.n_x, i, j)).flatten() {
        (CenterQuality::Refined, off)
    } else {
        (CenterQuality::Discrete, (0.0, 0.0))
    };
    let fi = i as f64 + di;
    let fj = j as f64 + dj;
    let center = (g.lat0 + fi * g.d_lat, g.lon0 + fj * g.d_lon);

    let mut central_pressure = f64::INFINITY;
    for ii in i.saturating_sub(1)..=(i + 1).min(g.n_y - 1) {
        for jj in j.saturating_sub(1)..=(j + 1).min(g.n_x - 1) {
            central_pressure = central_pressure.min(psea.at(ii, jj));
        }
    }

    let mut max_wind: f64 = 0.0;
    for ii in 0..g.n_y {
        for jj in 0..g.n_x {
            let p = g.latlon_of(ii, jj)?;
            if GridSpec::distance_km(center, p) <= search_radius_km {
                max_wind = max_wind.max(u.at(ii, jj).hypot(v.at(ii, jj)));
            }
        }
    }

    Ok(CycloneDiagnostics {
        center,
        center_index: (fi, fj),
        central_pressure,
        max_wind,
        quality,
    })
}

/// A local pressure minimum and how far it stands below its lowest saddle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PressureMinimum {
    pub row: usize,
    pub col: usize,
    pub value: f64,
    pub prominence: f64,
}

/// Local minima of the 3x3-smoothed field (8-neighbourhood) with their
/// prominence, found by flooding cells in ascending order. Minima on the
/// grid border are ignored. Sorted by ascending value.
pub fn pressure_minima(psea: &Field2D) -> Vec<PressureMinimum> {
    let g = psea.grid;
    let (nx, ny) = (g.n_x, g.n_y);
    let smooth = smooth3x3(&psea.values, nx, ny);
    let n = smooth.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| smooth[a].total_cmp(&smooth[b]).then(a.cmp(&b)));

    const UNSET: usize = usize::MAX;
    let mut parent = vec![UNSET; n];
    // Per root: index of the component's minimum.
    let mut comp_min = vec![UNSET; n];
    let mut prominence = vec![f64::NAN; n];

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut roots = Vec::with_capacity(8);
    for &k in &order {
        let (i, j) = (k / nx, k % nx);
        roots.clear();
        for ii in i.saturating_sub(1)..=(i + 1).min(ny - 1) {
            for jj in j.saturating_sub(1)..=(j + 1).min(nx - 1) {
                let q = ii * nx + jj;
                if q != k && parent[q] != UNSET {
                    let r = find(&mut parent, q);
                    if !roots.contains(&r) {
                        roots.push(r);
                    }
                }
            }
        }
        if roots.is_empty() {
            parent[k] = k;
            comp_min[k] = k;
            continue;
        }
        // The component with the deepest minimum survives.
        let key = |r: usize| (smooth[comp_min[r]], comp_min[r]);
        let survivor = *roots
            .iter()
            .min_by(|&&a, &&b| key(a).0.total_cmp(&key(b).0).then(key(a).1.cmp(&key(b).1)))
            .unwrap();
        for &r in &roots {
            if r != survivor {
                let m = comp_min[r];
                prominence[m] = smooth[k] - smooth[m];
                parent[r] = survivor;
            }
        }
        parent[k] = survivor;
    }
    let hi = smooth[*order.last().unwrap()];
    let global = order[0];
    prominence[global] = hi - smooth[global];

    let mut out: Vec<PressureMinimum> = (0..n)
        .filter(|&k| !prominence[k].is_nan())
        .filter(|&k| {
            let (i, j) = (k / nx, k % nx);
            i > 0 && j > 0 && i + 1 < ny && j + 1 < nx
        })
        .map(|k| PressureMinimum {
            row: k / nx,
            col: k % nx,
            value: smooth[k],
            prominence: prominence[k],
        })
        .collect();
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    out
}

/// Number of distinct pressure minima at least `depth_threshold` hPa deep.
pub fn count_minima(psea: &Field2D, depth_threshold: f64) -> Result<usize> {
    if !(depth_threshold > 0.0) {
        return Err(Error::InvalidParams("depth threshold must be positive".into()));
    }
    Ok(pressure_minima(psea)
        .iter()
        .filter(|m| m.prominence >= depth_threshold)
        .count())
}

/// Consensus position: mean latitude and mean longitude.
pub fn feature_midpoint(diags: &[CycloneDiagnostics]) -> Result<(f64, f64)> {
    midpoint(&diags.iter().map(|d| d.center).collect::<Vec<_>>())
}

pub fn midpoint(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::Empty("positions"));
    }
    let n = points.len() as f64;
    let (lat, lon) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    Ok((lat / n, lon / n))
}

/// Pointwise mean of fields sharing grid, variable and lead time.
pub fn arithmetic_mean(fields: &[&Field2D]) -> Result<Field2D> {
    let first = fields.first().ok_or(Error::Empty("fields to average"))?;
    for f in &fields[1..] {
        first.check_compatible(f)?;
    }
    let n = fields.len() as f64;
    let values = (0..first.values.len())
        .map(|k| fields.iter().map(|f| f.values[k]).sum::<f64>() / n)
        .collect();
    first.with_values(values)
}
