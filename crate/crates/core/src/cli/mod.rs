//! Command-line entry point.
//!
//! Every command writes its outputs and a `manifest.toml` into `--out-dir`.
//! `medcast --manifest <file> --out-dir <dir>` repeats a recorded command and
//! fails unless every output is byte-identical to the recorded one.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | bad arguments or configuration |
//! | 3 | I/O failure |
//! | 4 | malformed file, shape or grid mismatch, missing data |
//! | 5 | numerical failure (divergence, degenerate range) |
//! | 6 | input count is not a power of two |
//! | 7 | a manifest rerun produced different outputs |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{synthesize_obs, verify_against_stations};
use crate::error::{Error, Result};
use crate::format::{
    encode_pgm, load_field, load_run, read_obs, read_stations, render, save_field, save_run, write_obs,
    ContourOverlay,
};
use crate::grid::{Field2D, GridSpec, VariableKind};
use crate::infer::{medcast_combine, CombineTree};
use crate::manifest::{manifest_path, RunManifest, VERSION};
use crate::synth::{generate_run, ModelPerturbation, Scenario, VortexFamily};
use crate::train::{train_variable, TrainPlan};
use crate::unet::{load_checkpoint, save_checkpoint, Checkpoint, NetworkWeights};

#[derive(Debug, Parser)]
#[command(
    name = "medcast",
    version,
    about = "Intermediate forecasts between two or more model outputs"
)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use one worker thread (the bit-reproducible mode).
    #[arg(long, global = true)]
    pub single_thread: bool,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Repeat the command recorded in this manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render synthetic model runs from a scenario configuration.
    Synth(SynthArgs),
    /// Train one per-variable network from a training plan.
    Train(TrainArgs),
    /// Combine 2^k model fields into intermediate forecasts.
    Medcast(MedcastArgs),
    /// Wind RMSE of forecast runs against synthetic station observations.
    Verify(VerifyArgs),
    /// Grayscale image of a field, optionally with contours of another.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    pub config: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    pub plan: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MedcastArgs {
    /// Network checkpoint; repeat once per variable.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Pairing layout over the inputs of each variable, e.g. "((0,2),(1,3))".
    #[arg(long)]
    pub tree: Option<String>,
    /// Field files; grouped by variable in the order given.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Run directory of the truth.
    #[arg(long)]
    pub truth: PathBuf,
    /// Station list CSV (id,lat,lon).
    #[arg(long)]
    pub stations: PathBuf,
    /// Observation CSV to use instead of sampling the truth.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Observation noise standard deviation per wind component, m/s.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Lead hours to verify (default: every lead present in all runs).
    #[arg(long, value_delimiter = ',')]
    pub leads: Option<Vec<u32>>,
    /// Run directories of the forecast systems.
    #[arg(required = true)]
    pub systems: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    pub field: PathBuf,
    /// Output file stem inside the output directory (default: input stem).
    #[arg(long)]
    pub name: Option<String>,
    /// Field whose contours are drawn over the image.
    #[arg(long)]
    pub contour: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    pub interval: f64,
    #[arg(long, default_value_t = 1)]
    pub upscale: u32,
}

/// Scenario configuration read by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "GridSpec::desk")]
    pub grid: GridSpec,
    pub init_time: NaiveDateTime,
    pub lead_hours: Vec<u32>,
    /// Variables to write (default: all).
    #[serde(default)]
    pub variables: Option<Vec<VariableKind>>,
    /// Explicit scenario; when absent one is drawn from `family`.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub family: Option<VortexFamily>,
    pub models: Vec<ModelPerturbation>,
    /// Number of random stations to write to `stations.csv`.
    #[serde(default)]
    pub stations: Option<usize>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParams(_)
        | Error::InvalidGrid(_)
        | Error::OutOfDomain { .. }
        | Error::FeatureOutsideGrid { .. }
        | Error::Empty(_) => 2,
        Error::Io { .. } => 3,
        Error::Format { .. }
        | Error::Shape(_)
        | Error::IndexOutOfRange { .. }
        | Error::InvalidField(_)
        | Error::MissingLead { .. } => 4,
        Error::Divergence { .. } | Error::DegenerateRange(_) => 5,
        Error::NotPowerOfTwo(_) => 6,
        Error::NotReproduced(_) => 7,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, &args) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command line; `args` is the raw argument list it came from.
pub fn execute(cli: Cli, args: &[OsString]) -> Result<RunManifest> {
    if cli.single_thread {
        // Fails harmlessly when the pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match (&cli.manifest, &cli.command) {
        (Some(path), None) => rerun(path, &cli.out_dir),
        (None, Some(cmd)) => {
            let argv = recorded_argv(args);
            std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
            let seed = cli.seed;
            let mut m = match cmd {
                Command::Synth(a) => cmd_synth(a, seed, &cli.out_dir, argv)?,
                Command::Train(a) => cmd_train(a, seed, &cli.out_dir, argv)?,
                Command::Medcast(a) => cmd_medcast(a, &cli.out_dir, argv)?,
                Command::Verify(a) => cmd_verify(a, seed, &cli.out_dir, argv)?,
                Command::Render(a) => cmd_render(a, &cli.out_dir, argv)?,
            };
            m.single_thread = cli.single_thread;
            let path = manifest_path(&cli.out_dir);
            m.save(&path)?;
            info!("wrote {}", path.display());
            Ok(m)
        }
        (Some(_), Some(_)) => Err(Error::Config(
            "--manifest repeats a recorded command; do not name a command too".into(),
        )),
        (None, None) => Err(Error::Config("no command given (see --help)".into())),
    }
}

/// Arguments worth recording: everything except the program name and the
/// output-directory and manifest options.
fn recorded_argv(args: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = it.next() {
        if a == "--out-dir" || a == "--manifest" {
            it.next();
        } else if !(a.starts_with("--out-dir=") || a.starts_with("--manifest=")) {
            out.push(a);
        }
    }
    out
}

fn rerun(path: &Path, out_dir: &Path) -> Result<RunManifest> {
    let recorded = RunManifest::load(path)?;
    if recorded.version != VERSION {
        log::warn!(
            "manifest was written by version {}, this is {VERSION}",
            recorded.version
        );
    }
    let changed = recorded.changed_inputs();
    if !changed.is_empty() {
        return Err(Error::format(
            path,
            format!("inputs changed since the recorded run: {}", changed.join(", ")),
        ));
    }
    let mut argv: Vec<OsString> = vec!["medcast".into()];
    argv.extend(recorded.argv.iter().map(OsString::from));
    argv.push("--out-dir".into());
    argv.push(out_dir.as_os_str().to_owned());
    let cli =
        Cli::try_parse_from(&argv).map_err(|e| Error::format(path, format!("recorded arguments: {e}")))?;
    if cli.manifest.is_some() || cli.command.is_none() {
        return Err(Error::format(path, "recorded arguments do not name a command"));
    }
    let fresh = execute(cli, &argv)?;
    let diff = recorded.output_differences(&fresh);
    if !diff.is_empty() {
        return Err(Error::NotReproduced(diff));
    }
    info!("all {} outputs reproduced bit-identically", fresh.outputs.len());
    Ok(fresh)
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((value, text))
}

fn cmd_synth(a: &SynthArgs, seed: Option<u64>, out: &Path, argv: Vec<String>) -> Result<RunManifest> {
    let (cfg, text): (SynthConfig, String) = read_config(&a.config)?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    if cfg.models.is_empty() {
        return Err(Error::Config(format!("{}: no models listed", a.config.display())));
    }
    let scenario = match (&cfg.scenario, &cfg.family) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(format!(
                "{}: give either 'scenario' or 'family', not both",
                a.config.display()
            )))
        }
        (Some(s), None) => Scenario { seed, ..s.clone() },
        (None, f) => f.clone().unwrap_or_default().scenario(&cfg.grid, seed)?,
    };
    let mut m = RunManifest::new("synth", argv, seed, false);
    m.config = Some(text);
    m.settings.insert(
        "scenario".into(),
        toml::to_string(&scenario).map_err(|e| Error::Config(e.to_string()))?,
    );
    m.add_input(&a.config)?;
    for pert in &cfg.models {
        let run = generate_run(&scenario, pert, &cfg.grid, cfg.init_time, &cfg.lead_hours)?;
        for p in save_run(out, &run, cfg.variables.as_deref())? {
            m.add_output(out, &p)?;
        }
    }
    if let Some(n) = cfg.stations {
        let stations = crate::diagnostics::random_stations(&cfg.grid, n, 1.0, seed);
        let p = out.join("stations.csv");
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        crate::format::write_stations(f, &stations)?;
        m.add_output(out, &p)?;
    }
    info!("synth: wrote {} files", m.outputs.len());
    Ok(m)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>, out: &Path, argv: Vec<String>) -> Result<RunManifest> {
    let (mut plan, text): (TrainPlan, String) = read_config(&a.plan)?;
    if let Some(s) = seed {
        plan.seed = s;
        plan.network.seed = s;
    }
    let mut m = RunManifest::new("train", argv, plan.seed, false);
    m.config = Some(text);
    m.settings.insert(
        "effective_plan".into(),
        toml::to_string(&plan).map_err(|e| Error::Config(e.to_string()))?,
    );
    m.add_input(&a.plan)?;
    let (weights, mut report) = train_variable(&plan)?;
    let ckpt_path = out.join(format!("{}.mwt", plan.variable));
    save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            variable: plan.variable,
            weights,
        },
    )?;
    report.checkpoint = Some(ckpt_path.to_string_lossy().into_owned());
    let csv_path = out.join(format!("{}_train.csv", plan.variable));
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    m.settings
        .insert("best_epoch".into(), report.best_epoch.to_string());
    m.settings
        .insert("best_val_loss".into(), format!("{:e}", report.best_val_loss));
    m.add_output(out, &ckpt_path)?;
    m.add_output(out, &csv_path)?;
    Ok(m)
}

fn cmd_medcast(a: &MedcastArgs, out: &Path, argv: Vec<String>) -> Result<RunManifest> {
    let mut m = RunManifest::new("medcast", argv, 0, false);
    let mut nets: BTreeMap<VariableKind, NetworkWeights<f32>> = BTreeMap::new();
    for p in &a.checkpoints {
        let c = load_checkpoint(p)?;
        m.add_input(p)?;
        if nets.insert(c.variable, c.weights).is_some() {
            return Err(Error::Config(format!("two checkpoints given for {}", c.variable)));
        }
    }
    let mut groups: BTreeMap<VariableKind, Vec<(String, Field2D)>> = BTreeMap::new();
    for p in &a.inputs {
        let ff = load_field(p)?;
        m.add_input(p)?;
        groups
            .entry(ff.field.variable)
            .or_default()
            .push((ff.model_id, ff.field));
    }
    for (var, leaves) in groups {
        let w = nets
            .get(&var)
            .ok_or_else(|| Error::Config(format!("no checkpoint given for {var}")))?;
        let tree = match &a.tree {
            Some(layout) => CombineTree::from_layout(layout, leaves)?,
            None => CombineTree::balanced(leaves)?,
        };
        let field = medcast_combine(w, &tree)?;
        m.settings.insert(format!("tree_{var}"), tree.to_string());
        let p = crate::format::field_path(out, "medcast", var, field.lead_hours);
        save_field(&p, "medcast", &field)?;
        m.add_output(out, &p)?;
    }
    Ok(m)
}

fn cmd_verify(a: &VerifyArgs, seed: Option<u64>, out: &Path, argv: Vec<String>) -> Result<RunManifest> {
    let seed = seed.unwrap_or(0);
    let mut m = RunManifest::new("verify", argv, seed, false);
    let truth = load_run(&a.truth)?;
    let systems = a
        .systems
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    let f = std::fs::File::open(&a.stations).map_err(|e| Error::io(&a.stations, e))?;
    let stations = read_stations(f, &a.stations)?;
    m.add_input(&a.stations)?;
    for dir in std::iter::once(&a.truth).chain(&a.systems) {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "mfd"))
            .collect();
        files.sort();
        for p in files {
            m.add_input(&p)?;
        }
    }
    let has_wind = |r: &crate::synth::ForecastRun, lead: u32| {
        r.get(lead, VariableKind::U10).is_some() && r.get(lead, VariableKind::V10).is_some()
    };
    let leads: Vec<u32> = match &a.leads {
        Some(l) => l.clone(),
        None => truth
            .lead_hours()
            .into_iter()
            .filter(|&l| has_wind(&truth, l) && systems.iter().all(|s| has_wind(s, l)))
            .collect(),
    };
    if leads.is_empty() {
        return Err(Error::Empty("lead hours with wind fields in every run"));
    }
    let obs = match &a.obs {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            m.add_input(p)?;
            read_obs(f, p)?
        }
        None => synthesize_obs(&truth, &stations, &leads, a.sigma, seed)?,
    };
    let refs: Vec<&crate::synth::ForecastRun> = systems.iter().collect();
    let result = verify_against_stations(&refs, &obs, &stations, &leads)?;
    let obs_path = out.join("observations.csv");
    let f = std::fs::File::create(&obs_path).map_err(|e| Error::io(&obs_path, e))?;
    write_obs(f, &obs)?;
    let res_path = out.join("verification.csv");
    std::fs::write(&res_path, result.to_csv()).map_err(|e| Error::io(&res_path, e))?;
    m.add_output(out, &obs_path)?;
    m.add_output(out, &res_path)?;
    Ok(m)
}

fn cmd_render(a: &RenderArgs, out: &Path, argv: Vec<String>) -> Result<RunManifest> {
    let mut m = RunManifest::new("render", argv, 0, false);
    let ff = load_field(&a.field)?;
    m.add_input(&a.field)?;
    let contour = match &a.contour {
        Some(p) => {
            m.add_input(p)?;
            Some(load_field(p)?.field)
        }
        None => None,
    };
    let overlay = contour.as_ref().map(|f| ContourOverlay {
        field: f,
        interval: a.interval,
    });
    let img = render(&ff.field, a.upscale, overlay.as_ref())?;
    let stem = a.name.clone().unwrap_or_else(|| {
        a.field
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "field".into())
    });
    let pgm = out.join(format!("{stem}.pgm"));
    std::fs::write(&pgm, encode_pgm(&img)?).map_err(|e| Error::io(&pgm, e))?;
    let side = out.join(format!("{stem}.txt"));
    std::fs::write(&side, img.sidecar(&ff.field, overlay.as_ref())).map_err(|e| Error::io(&side, e))?;
    m.add_output(out, &pgm)?;
    m.add_output(out, &side)?;
    Ok(m)
}
