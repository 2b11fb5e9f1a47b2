//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! criterion fails. Runs single-threaded so every number is reproducible.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medcast::dataset::{
    compute_norm, denormalize, normalize, pad_replicate, padded_dim, trim_padding, PairingConfig,
};
use medcast::diagnostics::{
    angle_diff, arithmetic_mean, count_minima, detect_cyclone, feature_midpoint, random_stations, rmse,
    synthesize_obs, verify_against_stations, CycloneDiagnostics, Quantity, DEFAULT_DEPTH_THRESHOLD,
    DEFAULT_SEARCH_RADIUS_KM,
};
use medcast::infer::{medcast_combine, medcast_pair, order_sensitivity, CombineTree, FOUR_WAY_LAYOUTS};
use medcast::synth::{generate_run, Feature, ForecastRun, ModelPerturbation, Scenario, VortexFamily};
use medcast::train::{train_variable, SeedRange, TrainPlan};
use medcast::unet::{backward, forward, init_network, mse_loss, AdamConfig, NetworkConfig, NetworkWeights};
use medcast::{Field2D, GridSpec, NormClass, VariableKind};

type Outcome = std::result::Result<String, String>;

fn t0() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 8, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    check(
        elapsed.as_secs_f64() < limit_s,
        format!(
            "{detail}; runtime {:.2} s (limit {limit_s} s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn random_field(rng: &mut ChaCha8Rng, var: VariableKind) -> Field2D {
    let n_x = rng.gen_range(2..40);
    let n_y = rng.gen_range(2..40);
    let g = GridSpec::new(n_x, n_y, 20.0, 120.0, 0.2, 0.25).unwrap();
    let (lo, hi) = match var {
        VariableKind::PSEA => (950.0, 1030.0),
        VariableKind::T2M => (-30.0, 40.0),
        VariableKind::RH2M => (0.0, 100.0),
        VariableKind::U10 | VariableKind::V10 => (-40.0, 40.0),
    };
    let values = (0..g.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Field2D::new(var, g, values, t0(), 12).unwrap()
}

fn c1_normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let vars = [
        VariableKind::PSEA,
        VariableKind::T2M,
        VariableKind::RH2M,
        VariableKind::U10,
        VariableKind::V10,
    ];
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let var = vars[k % vars.len()];
        let f = random_field(&mut rng, var);
        let norm = compute_norm(&[&f], var.norm_class()).map_err(|e| e.to_string())?;
        let back = denormalize(&normalize(&f, &norm), &norm, &f).map_err(|e| e.to_string())?;
        for (&x, &y) in f.values.iter().zip(&back.values) {
            let rel = if x == 0.0 { y.abs() } else { ((y - x) / x).abs() };
            worst = worst.max(rel);
        }
    }
    // Symmetric rule: zero wind sits at the exact centre of [0, 1].
    let mut zero_ok = true;
    for _ in 0..100 {
        let mut f = random_field(&mut rng, VariableKind::U10);
        f.values[0] = 0.0;
        let norm = compute_norm(&[&f], NormClass::Symmetric).map_err(|e| e.to_string())?;
        zero_ok &= normalize(&f, &norm)[0] == 0.5 && norm.denormalize_value(0.5) == 0.0;
    }
    let elapsed = start.elapsed();
    if worst > 1e-6 || !zero_ok {
        return Err(format!(
            "worst relative error {worst:.2e}, zero->0.5 exact: {zero_ok}"
        ));
    }
    within(
        elapsed,
        1.0,
        format!("worst relative error {worst:.2e} over 1000 fields; 0 -> 0.5 exact"),
    )
}

fn c2_padding() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut grids = vec![(121usize, 151usize, 3usize)];
    for _ in 0..50 {
        grids.push((rng.gen_range(2..130), rng.gen_range(2..130), rng.gen_range(1..5)));
    }
    for &(n_x, n_y, depth) in &grids {
        let values: Vec<f64> = (0..n_x * n_y).map(|_| rng.gen::<f64>()).collect();
        let (px, py) = (padded_dim(n_x, depth), padded_dim(n_y, depth));
        let padded = pad_replicate(&values, n_x, n_y, px, py).map_err(|e| e.to_string())?;
        let back = trim_padding(&padded, px, py, n_x, n_y).map_err(|e| e.to_string())?;
        let exact =
            back.len() == values.len() && back.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits());
        if !exact {
            return Err(format!("{n_x}x{n_y} depth {depth} not bit-exact"));
        }
    }
    let (px, py) = (padded_dim(121, 3), padded_dim(151, 3));
    within(
        start.elapsed(),
        1.0,
        format!("{} grids bit-exact; 121x151 pads to {px}x{py}", grids.len()),
    )
}

fn c3_gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = NetworkConfig {
        base_channels: 4,
        depth: 1,
        seed: 3,
        ..NetworkConfig::default()
    };
    let n = 8;
    let mut w: NetworkWeights<f64> = init_network(&cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    // Nonzero biases keep ReLU kinks away from the sampled points.
    for t in w.tensors.iter_mut().filter(|t| t.name.ends_with("bias")) {
        for b in t.data.iter_mut() {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let x: Vec<f64> = (0..2 * n * n).map(|_| rng.gen()).collect();
    let target: Vec<f64> = (0..n * n).map(|_| rng.gen()).collect();
    let (_, grads) = backward(&w, &x, &target, n, n).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let per_tensor = 100usize.div_ceil(w.tensors.len()) + 1;
    let mut sampled = 0;
    let mut worst = 0.0f64;
    for ti in 0..w.tensors.len() {
        for _ in 0..per_tensor {
            let k = rng.gen_range(0..w.tensors[ti].data.len());
            let orig = w.tensors[ti].data[k];
            w.tensors[ti].data[k] = orig + h;
            let lp = mse_loss(&forward(&w, &x, n, n).map_err(|e| e.to_string())?, &target).unwrap();
            w.tensors[ti].data[k] = orig - h;
            let lm = mse_loss(&forward(&w, &x, n, n).map_err(|e| e.to_string())?, &target).unwrap();
            w.tensors[ti].data[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.tensors[ti].data[k];
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
            worst = worst.max(rel);
            sampled += 1;
        }
    }
    if sampled < 100 || worst > 1e-3 {
        return Err(format!("{sampled} parameters, worst relative error {worst:.2e}"));
    }
    within(
        start.elapsed(),
        30.0,
        format!("{sampled} parameters, worst relative error {worst:.2e}"),
    )
}

/// Independent double loop: mean over stations, then over times.
fn brute_force_rmse(f: &[Vec<f64>], o: &[Vec<f64>], direction: bool) -> f64 {
    let mut total = 0.0;
    for t in 0..f.len() {
        let mut s = 0.0;
        for n in 0..f[t].len() {
            let mut d = f[t][n] - o[t][n];
            if direction {
                d = d.abs();
                if d > 180.0 {
                    d = 360.0 - d;
                }
            }
            s += d * d;
        }
        total += s / f[t].len() as f64;
    }
    (total / f.len() as f64).sqrt()
}

fn c4_rmse_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for case in 0..20 {
        let t_n = rng.gen_range(1..=5);
        let s_n = rng.gen_range(1..=5);
        for q in [Quantity::WindSpeed, Quantity::WindDirection] {
            // Directions on a 1/8 degree lattice so the reference is exact.
            let draw = |rng: &mut ChaCha8Rng| match q {
                Quantity::WindSpeed => rng.gen_range(0.0..30.0),
                Quantity::WindDirection => rng.gen_range(0..2880) as f64 / 8.0,
            };
            let f: Vec<Vec<f64>> = (0..t_n)
                .map(|_| (0..s_n).map(|_| draw(&mut rng)).collect())
                .collect();
            let o: Vec<Vec<f64>> = (0..t_n)
                .map(|_| (0..s_n).map(|_| draw(&mut rng)).collect())
                .collect();
            let got = rmse(&f, &o, q).map_err(|e| e.to_string())?;
            let want = brute_force_rmse(&f, &o, q == Quantity::WindDirection);
            if got != want {
                return Err(format!("case {case} {q}: {got} vs brute force {want}"));
            }
        }
    }
    let wrap = rmse(&[vec![359.0]], &[vec![1.0]], Quantity::WindDirection).map_err(|e| e.to_string())?;
    check(
        wrap == 2.0 && angle_diff(359.0, 1.0) == -2.0,
        format!("20 instances x 2 quantities match exactly; 359 vs 1 -> {wrap}"),
    )
}

fn c5_envelope() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let nets: Vec<NetworkWeights<f32>> = (0..3)
        .map(|s| {
            init_network(&NetworkConfig {
                base_channels: 8,
                depth: 2,
                seed: s,
                ..NetworkConfig::default()
            })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let vars = [
        VariableKind::PSEA,
        VariableKind::U10,
        VariableKind::T2M,
        VariableKind::RH2M,
    ];
    for k in 0..100 {
        let var = vars[k % vars.len()];
        let a = random_field(&mut rng, var);
        let mut b = random_field(&mut rng, var);
        b.grid = a.grid;
        b.values = (0..a.grid.len())
            .map(|i| a.values[i] + rng.gen_range(-20.0..20.0))
            .collect();
        let out = medcast_pair(&nets[k % nets.len()], &a, &b).map_err(|e| e.to_string())?;
        let lo = a.min().min(b.min());
        let hi = a.max().max(b.max());
        if let Some(v) = out.values.iter().find(|&&v| !(v >= lo && v <= hi)) {
            return Err(format!("pair {k}: value {v} outside [{lo}, {hi}]"));
        }
    }
    Ok("100 random pairs, every value inside the joint input range".into())
}

struct Trained {
    psea: NetworkWeights<f32>,
    u10: NetworkWeights<f32>,
    v10: NetworkWeights<f32>,
    seconds: f64,
    summary: String,
}

impl Trained {
    fn net(&self, var: VariableKind) -> &NetworkWeights<f32> {
        match var {
            VariableKind::PSEA => &self.psea,
            VariableKind::U10 => &self.u10,
            VariableKind::V10 => &self.v10,
            _ => unreachable!("no network trained for {var}"),
        }
    }
}

/// Epoch counts keep the three desk-scale networks inside the 30 minute
/// training budget on one core.
fn train_all() -> medcast::Result<Trained> {
    let start = Instant::now();
    let mut nets = Vec::new();
    let mut summary = Vec::new();
    for (var, epochs) in [
        (VariableKind::PSEA, 7),
        (VariableKind::U10, 5),
        (VariableKind::V10, 5),
    ] {
        let plan = TrainPlan {
            variable: var,
            grid: GridSpec::desk(),
            init_time: t0(),
            family: VortexFamily::default(),
            train_seeds: SeedRange { start: 0, count: 200 },
            val_seeds: SeedRange {
                start: 10_000,
                count: 10,
            },
            perturbations: vec![ModelPerturbation::identity("train")],
            pairing: PairingConfig {
                t_list: vec![12],
                dt_list: vec![3, 6],
            },
            network: NetworkConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 8,
            max_epochs: epochs,
            patience: 10,
            seed: 1,
        };
        let var_start = Instant::now();
        let (w, report) = train_variable(&plan)?;
        summary.push(format!(
            "{var}: best val {:.2e} at epoch {} ({:.0} s)",
            report.best_val_loss,
            report.best_epoch,
            var_start.elapsed().as_secs_f64()
        ));
        nets.push(w);
    }
    let v10 = nets.pop().unwrap();
    let u10 = nets.pop().unwrap();
    let psea = nets.pop().unwrap();
    Ok(Trained {
        psea,
        u10,
        v10,
        seconds: start.elapsed().as_secs_f64(),
        summary: summary.join("; "),
    })
}

fn cell_km(g: &GridSpec) -> f64 {
    let (cx, cy) = g.cell_km();
    0.5 * (cx + cy)
}

fn cyclone(run: &ForecastRun, psea: &Field2D) -> medcast::Result<CycloneDiagnostics> {
    let lead = psea.lead_hours;
    detect_cyclone(
        psea,
        run.get(lead, VariableKind::U10).unwrap(),
        run.get(lead, VariableKind::V10).unwrap(),
        DEFAULT_SEARCH_RADIUS_KM,
    )
}

fn vortex_r_max(sc: &Scenario) -> f64 {
    sc.features
        .iter()
        .find_map(|f| match f {
            Feature::Vortex { params, .. } => Some(params.r_max),
            _ => None,
        })
        .unwrap()
}

/// Distance between fractional (row, column) positions, in cells.
fn cell_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// The 20 held-out displaced pairs: separations spread over 6..16 cells.
struct HeldOutPair {
    scenario: Scenario,
    sep_cells: f64,
    a: ForecastRun,
    b: ForecastRun,
}

fn held_out_pairs() -> medcast::Result<Vec<HeldOutPair>> {
    let g = GridSpec::desk();
    let cell = cell_km(&g);
    (0..20u64)
        .map(|k| {
            let sep_cells = 6.0 + 10.0 * k as f64 / 19.0;
            let angle = k as f64 * 2.4;
            let d = sep_cells * cell / 2.0;
            let fam = VortexFamily {
                margin_cells: 4.0 + sep_cells / 2.0,
                ..VortexFamily::default()
            };
            let scenario = fam.scenario(&g, 20_000 + k)?;
            let pa = ModelPerturbation::displaced("A", d * angle.cos(), d * angle.sin(), 12);
            let pb = ModelPerturbation::displaced("B", -d * angle.cos(), -d * angle.sin(), 12);
            Ok(HeldOutPair {
                a: generate_run(&scenario, &pa, &g, t0(), &[12])?,
                b: generate_run(&scenario, &pb, &g, t0(), &[12])?,
                scenario,
                sep_cells,
            })
        })
        .collect()
}

fn c6_midpoint(tr: &Trained, pairs: &[HeldOutPair]) -> Outcome {
    let run = || -> medcast::Result<(usize, usize, usize, usize, usize, String)> {
        let g = GridSpec::desk();
        let cell = cell_km(&g);
        let (mut ok_a, mut ok_b, mut ok_c, mut base_n, mut base_ok) = (0, 0, 0, 0, 0);
        let mut lines = Vec::new();
        for p in pairs {
            let pa = p.a.get(12, VariableKind::PSEA).unwrap();
            let pb = p.b.get(12, VariableKind::PSEA).unwrap();
            let out = medcast_pair(&tr.psea, pa, pb)?;
            let (da, db) = (cyclone(&p.a, pa)?, cyclone(&p.b, pb)?);
            // Winds only feed max_wind, which is not scored here.
            let dm = cyclone(&p.a, &out)?;
            let (lat, lon) = feature_midpoint(&[da, db])?;
            let err = cell_distance(dm.center_index, g.fractional_index(lat, lon));
            let minima = count_minima(&out, DEFAULT_DEPTH_THRESHOLD)?;
            let p_env = p.scenario.p_env;
            let depth_in = p_env - 0.5 * (da.central_pressure + db.central_pressure);
            let depth_out = p_env - dm.central_pressure;
            let mean = arithmetic_mean(&[pa, pb])?;
            let mean_minima = count_minima(&mean, DEFAULT_DEPTH_THRESHOLD)?;
            let mean_depth = p_env - cyclone(&p.a, &mean)?.central_pressure;
            ok_a += (minima == 1) as usize;
            ok_b += (err <= (1.5f64).max(0.15 * p.sep_cells)) as usize;
            ok_c += (depth_out >= 0.8 * depth_in) as usize;
            let r_max = vortex_r_max(&p.scenario);
            if p.sep_cells * cell >= 4.0 * r_max {
                base_n += 1;
                base_ok += (mean_minima == 2 || mean_depth < 0.6 * depth_in) as usize;
            }
            lines.push(format!(
                "    sep {:5.2} cells: minima {minima}, center error {err:.2} cells, depth {:.0}% | mean: minima {mean_minima}, depth {:.0}%",
                p.sep_cells,
                100.0 * depth_out / depth_in,
                100.0 * mean_depth / depth_in
            ));
        }
        Ok((ok_a, ok_b, ok_c, base_n, base_ok, lines.join("\n")))
    };
    let (ok_a, ok_b, ok_c, base_n, base_ok, lines) = run().map_err(|e| e.to_string())?;
    println!("{lines}");
    let budget_ok = tr.seconds <= 1800.0;
    let detail = format!(
        "(a) single minimum {ok_a}/20, (b) center near midpoint {ok_b}/20, (c) depth >= 80% {ok_c}/20, \
         mean baseline split or shallow {base_ok}/{base_n} at sep >= 4 r_max; training {:.0} s [{}]",
        tr.seconds, tr.summary
    );
    check(
        ok_a >= 18 && ok_b >= 18 && ok_c == 20 && base_n > 0 && base_ok == base_n && budget_ok,
        detail,
    )
}

fn c7_identity(tr: &Trained) -> Outcome {
    let g = GridSpec::desk();
    let mut worst = 0.0f64;
    for var in [VariableKind::PSEA, VariableKind::U10, VariableKind::V10] {
        for k in 0..20u64 {
            let sc = VortexFamily::default()
                .scenario(&g, 30_000 + k)
                .map_err(|e| e.to_string())?;
            let run = generate_run(&sc, &ModelPerturbation::identity("F"), &g, t0(), &[12])
                .map_err(|e| e.to_string())?;
            let f = run.get(12, var).unwrap();
            let out = medcast_pair(tr.net(var), f, f).map_err(|e| e.to_string())?;
            let mse: f64 = out
                .values
                .iter()
                .zip(&f.values)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / f.values.len() as f64;
            let rel = mse.sqrt() / (f.max() - f.min());
            worst = worst.max(rel);
        }
    }
    check(
        worst <= 0.05,
        format!(
            "worst RMSE(pair(F,F), F) = {:.2}% of range over 20 fields x 3 variables",
            100.0 * worst
        ),
    )
}

fn c8_order(tr: &Trained, pairs: &[HeldOutPair]) -> Outcome {
    let mut total = 0.0;
    for p in pairs {
        let a = p.a.get(12, VariableKind::PSEA).unwrap();
        let b = p.b.get(12, VariableKind::PSEA).unwrap();
        total += order_sensitivity(&tr.psea, a, b).map_err(|e| e.to_string())?;
    }
    let mean = total / pairs.len() as f64;
    check(
        mean <= 0.05,
        format!("mean order sensitivity {mean:.4} of joint range"),
    )
}

fn c9_four_way(tr: &Trained) -> Outcome {
    let run = || -> medcast::Result<Outcome> {
        let g = GridSpec::desk();
        let cell = cell_km(&g);
        let fam = VortexFamily {
            margin_cells: 9.0,
            ..VortexFamily::default()
        };
        let sc = fam.scenario(&g, 40_000)?;
        let offsets = [(4.0, 3.0), (-4.0, 2.0), (3.0, -3.0), (-2.0, -4.0)];
        let mut runs = Vec::new();
        let mut diags = Vec::new();
        for (k, &(dx, dy)) in offsets.iter().enumerate() {
            let pert = ModelPerturbation::displaced(format!("M{k}"), dx * cell, dy * cell, 12);
            let r = generate_run(&sc, &pert, &g, t0(), &[12])?;
            diags.push(cyclone(&r, r.get(12, VariableKind::PSEA).unwrap())?);
            runs.push(r);
        }
        let (lat, lon) = feature_midpoint(&diags)?;
        let mid = g.fractional_index(lat, lon);
        let leaves = || -> Vec<(String, Field2D)> {
            runs.iter()
                .map(|r| (r.model_id.clone(), r.get(12, VariableKind::PSEA).unwrap().clone()))
                .collect()
        };
        let balanced = medcast_combine(&tr.psea, &CombineTree::balanced(leaves())?)?;
        let minima = count_minima(&balanced, DEFAULT_DEPTH_THRESHOLD)?;
        let center = cyclone(&runs[0], &balanced)?.center_index;
        let err = cell_distance(center, mid);
        let mut centers = Vec::new();
        for layout in FOUR_WAY_LAYOUTS {
            let out = medcast_combine(&tr.psea, &CombineTree::from_layout(layout, leaves())?)?;
            centers.push(cyclone(&runs[0], &out)?.center_index);
        }
        let mut spread = 0.0f64;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                spread = spread.max(cell_distance(centers[i], centers[j]));
            }
        }
        Ok(check(
            minima == 1 && err <= 2.0 && spread <= 2.0,
            format!(
                "balanced tree: {minima} minimum, {err:.2} cells from the 4-way midpoint; \
                 largest distance between the three pairing orders {spread:.2} cells"
            ),
        ))
    };
    run().map_err(|e| e.to_string())?
}

fn c10_verification(tr: &Trained) -> Outcome {
    let run = || -> medcast::Result<Outcome> {
        let g = GridSpec::desk();
        let cell = cell_km(&g);
        let leads = [6u32, 12, 18];
        let sep_cells = 8.0;
        let fam = VortexFamily {
            margin_cells: 10.0,
            ..VortexFamily::default()
        };
        let stations = random_stations(&g, 50, 1.0, 50);
        // Per system and lead: per-scenario mean squared errors. Each scenario counts
        // as one verification time when pooling.
        let systems = ["A", "B", "medcast"];
        let mut sq = vec![vec![[0.0f64; 2]; leads.len()]; systems.len()];
        for k in 0..10u64 {
            let sc = fam.scenario(&g, 50_000 + k)?;
            let angle = k as f64 * 2.4;
            let d = sep_cells * cell / 2.0;
            let truth = generate_run(&sc, &ModelPerturbation::identity("truth"), &g, t0(), &leads)?;
            let a = generate_run(
                &sc,
                &ModelPerturbation::displaced("A", d * angle.cos(), d * angle.sin(), 12),
                &g,
                t0(),
                &leads,
            )?;
            let b = generate_run(
                &sc,
                &ModelPerturbation::displaced("B", -d * angle.cos(), -d * angle.sin(), 12),
                &g,
                t0(),
                &leads,
            )?;
            let mut mid = ForecastRun::new("medcast", t0(), g);
            for &lead in &leads {
                for var in [VariableKind::U10, VariableKind::V10] {
                    mid.insert(medcast_pair(
                        tr.net(var),
                        a.get(lead, var).unwrap(),
                        b.get(lead, var).unwrap(),
                    )?)?;
                }
            }
            let obs = synthesize_obs(&truth, &stations, &leads, 0.5, 60 + k)?;
            let res = verify_against_stations(&[&a, &b, &mid], &obs, &stations, &leads)?;
            for (si, name) in systems.iter().enumerate() {
                for (li, &lead) in leads.iter().enumerate() {
                    for (qi, q) in [Quantity::WindSpeed, Quantity::WindDirection]
                        .into_iter()
                        .enumerate()
                    {
                        let r = res.get(name, lead, q).unwrap();
                        sq[si][li][qi] += r * r / 10.0;
                    }
                }
            }
        }
        let score = |si: usize, li: usize, qi: usize| sq[si][li][qi].sqrt();
        let mut speed_ok = true;
        let mut dir_wins = 0;
        let mut lines = Vec::new();
        for (li, lead) in leads.iter().enumerate() {
            let (sa, sb, sm) = (score(0, li, 0), score(1, li, 0), score(2, li, 0));
            let (da, db, dm) = (score(0, li, 1), score(1, li, 1), score(2, li, 1));
            speed_ok &= sm < sa && sm < sb;
            dir_wins += (dm < da && dm < db) as usize;
            lines.push(format!(
                "ft{lead:02}: speed A {sa:.2} B {sb:.2} medcast {sm:.2}, direction A {da:.1} B {db:.1} medcast {dm:.1}"
            ));
        }
        let dir_ok = dir_wins as f64 >= 0.8 * leads.len() as f64;
        Ok(check(
            speed_ok && dir_ok,
            format!(
                "speed lowest at every lead: {speed_ok}; direction lowest at {dir_wins}/{} leads [{}]",
                leads.len(),
                lines.join("; ")
            ),
        ))
    };
    run().map_err(|e| e.to_string())?
}

fn medcast_bin(args: &[&str], cwd: &Path) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_medcast"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "medcast {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Every file under `a` except the manifest has a byte-identical twin in `b`.
fn same_tree(a: &Path, b: &Path) -> std::result::Result<usize, String> {
    let mut n = 0;
    let mut stack = vec![a.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            if p.file_name().is_some_and(|f| f == "manifest.toml") {
                continue;
            }
            let rel = p.strip_prefix(a).unwrap();
            let x = std::fs::read(&p).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(rel)).map_err(|e| format!("{}: {e}", rel.display()))?;
            if x != y {
                return Err(format!("{} differs", rel.display()));
            }
            n += 1;
        }
    }
    Ok(n)
}

fn c11_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(
        d.join("synth.toml"),
        "seed = 3\ninit_time = \"2023-08-01T00:00:00\"\nlead_hours = [12]\nvariables = [\"PSEA\"]\n\
         [[models]]\nmodel_id = \"A\"\ndrift_km_per_hour = [4.0, 1.0]\n\
         [[models]]\nmodel_id = \"B\"\ndrift_km_per_hour = [-4.0, -1.0]\n",
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(
        d.join("plan.toml"),
        "variable = \"PSEA\"\ninit_time = \"2023-08-01T00:00:00\"\nmax_epochs = 2\nseed = 7\nbatch_size = 4\n\
         train_seeds = { start = 0, count = 6 }\nval_seeds = { start = 100, count = 2 }\n\
         pairing = { t_list = [12], dt_list = [3, 6] }\n\
         network = { base_channels = 8, depth = 2, convs_per_stage = 2 }\n\
         [grid]\nn_x = 32\nn_y = 32\nlat0 = 24.0\nlon0 = 128.0\nd_lat = 0.2\nd_lon = 0.25\n",
    )
    .map_err(|e| e.to_string())?;
    medcast_bin(
        &["--single-thread", "--out-dir", "fields", "synth", "synth.toml"],
        d,
    )?;
    medcast_bin(
        &["--single-thread", "--out-dir", "train1", "train", "plan.toml"],
        d,
    )?;
    medcast_bin(&["--manifest", "train1/manifest.toml", "--out-dir", "train2"], d)?;
    let n_train = same_tree(&d.join("train1"), &d.join("train2"))?;
    medcast_bin(
        &[
            "--single-thread",
            "--out-dir",
            "mc1",
            "medcast",
            "--checkpoint",
            "train1/PSEA.mwt",
            "fields/A/PSEA_ft012.mfd",
            "fields/B/PSEA_ft012.mfd",
        ],
        d,
    )?;
    medcast_bin(&["--manifest", "mc1/manifest.toml", "--out-dir", "mc2"], d)?;
    let n_mc = same_tree(&d.join("mc1"), &d.join("mc2"))?;
    check(
        n_train == 2 && n_mc == 1,
        format!("train rerun: {n_train} files identical; medcast rerun: {n_mc} file identical"),
    )
}

fn main() {
    // Fails only if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        match &o {
            Ok(d) => println!("criterion {n:2} PASS {name}: {d}"),
            Err(d) => println!("criterion {n:2} FAIL {name}: {d}"),
        }
        results.push((n, name, o));
    };

    report(1, "normalization round trip", c1_normalization());
    report(2, "pad/trim round trip", c2_padding());
    report(3, "gradient check", c3_gradient_check());
    report(4, "rmse oracle", c4_rmse_oracle());
    report(5, "range envelope", c5_envelope());
    report(11, "manifest reruns bit-identical", c11_reproducibility());

    match train_all() {
        Ok(tr) => {
            let pairs = held_out_pairs();
            match pairs {
                Ok(pairs) => {
                    report(6, "midpoint center", c6_midpoint(&tr, &pairs));
                    report(8, "order robustness", c8_order(&tr, &pairs));
                }
                Err(e) => {
                    report(6, "midpoint center", Err(e.to_string()));
                    report(8, "order robustness", Err(e.to_string()));
                }
            }
            report(7, "identity limit", c7_identity(&tr));
            report(9, "four-model recursion", c9_four_way(&tr));
            report(10, "verification superiority", c10_verification(&tr));
        }
        Err(e) => {
            for (n, name) in [
                (6, "midpoint center"),
                (7, "identity limit"),
                (8, "order robustness"),
                (9, "four-model recursion"),
                (10, "verification superiority"),
            ] {
                report(n, name, Err(format!("training failed: {e}")));
            }
        }
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0.to_string())
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
