//! Per-variable training on synthetic single-model runs.
//!
//! Each training run provides triplets `(t - dt, t + dt) -> t`. Every epoch
//! consumes each triplet once in each input order, in a seeded shuffle.

use chrono::NaiveDateTime;
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_pairs, normalize, pad_replicate, padded_dim, PairingConfig, TrainingSample};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, VariableKind};
use crate::synth::{derive_seed, generate_run, ForecastRun, ModelPerturbation, VortexFamily};
use crate::unet::{
    adam_update, batch_gradients, forward, init_network, mse_loss, AdamConfig, AdamState, Example,
    NetworkConfig, NetworkWeights,
};

/// Contiguous block of scenario seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    pub fn iter(&self) -> impl Iterator<Item = u64> {
        self.start..self.start + self.count
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.count > 0
            && other.count > 0
            && self.start < other.start + other.count
            && other.start < self.start + self.count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub variable: VariableKind,
    pub grid: GridSpec,
    pub init_time: NaiveDateTime,
    #[serde(default)]
    pub family: VortexFamily,
    pub train_seeds: SeedRange,
    pub val_seeds: SeedRange,
    /// Each training scenario is rendered once per perturbation.
    #[serde(default = "default_perturbations")]
    pub perturbations: Vec<ModelPerturbation>,
    #[serde(default)]
    pub pairing: PairingConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping early.
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub seed: u64,
}

fn default_perturbations() -> Vec<ModelPerturbation> {
    vec![ModelPerturbation::identity("train")]
}

fn default_batch() -> usize {
    8
}

fn default_patience() -> usize {
    10
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.pairing.validate()?;
        self.network.validate()?;
        if self.train_seeds.count == 0 {
            return Err(Error::Empty("training scenarios"));
        }
        if self.val_seeds.count == 0 {
            return Err(Error::Empty("validation scenarios"));
        }
        if self.train_seeds.overlaps(&self.val_seeds) {
            return Err(Error::InvalidParams(
                "training and validation scenario seeds overlap".into(),
            ));
        }
        if self.perturbations.is_empty() {
            return Err(Error::Empty("perturbations"));
        }
        for p in &self.perturbations {
            p.validate()?;
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidParams(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Training runs (every scenario under every perturbation) and
    /// validation runs (unperturbed).
    pub fn build_runs(&self) -> Result<(Vec<ForecastRun>, Vec<ForecastRun>)> {
        let leads = self.pairing.required_leads();
        let mut train = Vec::new();
        for s in self.train_seeds.iter() {
            let sc = self.family.scenario(&self.grid, s)?;
            for p in &self.perturbations {
                train.push(generate_run(&sc, p, &self.grid, self.init_time, &leads)?);
            }
        }
        let val = self
            .val_seeds
            .iter()
            .map(|s| {
                let sc = self.family.scenario(&self.grid, s)?;
                generate_run(
                    &sc,
                    &ModelPerturbation::identity("val"),
                    &self.grid,
                    self.init_time,
                    &leads,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((train, val))
    }
}

/// A training triplet as network-ready tensors on the padded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// Channels `[a, b]`.
    pub input: Vec<f32>,
    /// Channels `[b, a]`.
    pub swapped: Vec<f32>,
    pub target: Vec<f32>,
}

pub fn prepare_sample(sample: &TrainingSample, depth: usize) -> Result<PreparedSample> {
    let g = sample.target.grid;
    let (pnx, pny) = (padded_dim(g.n_x, depth), padded_dim(g.n_y, depth));
    let tensor = |f| -> Result<Vec<f32>> {
        Ok(
            pad_replicate(&normalize(f, &sample.norm), g.n_x, g.n_y, pnx, pny)?
                .into_iter()
                .map(|x| x as f32)
                .collect(),
        )
    };
    let a = tensor(&sample.input_a)?;
    let b = tensor(&sample.input_b)?;
    Ok(PreparedSample {
        input: [a.as_slice(), b.as_slice()].concat(),
        swapped: [b.as_slice(), a.as_slice()].concat(),
        target: tensor(&sample.target)?,
    })
}

/// Prepared triplets of every run for one variable.
pub fn prepare_runs(
    runs: &[ForecastRun],
    pairing: &PairingConfig,
    variable: VariableKind,
    depth: usize,
) -> Result<Vec<PreparedSample>> {
    let mut out = Vec::new();
    for run in runs {
        for s in build_pairs(run, pairing, variable)? {
            out.push(prepare_sample(&s, depth)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Samples consumed in `[a, b]` order.
    pub n_forward: usize,
    /// Samples consumed in `[b, a]` order.
    pub n_swapped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variable: VariableKind,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,n_forward,n_swapped,best\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.9e},{:.9e},{},{},{}\n",
                e.epoch,
                e.train_loss,
                e.val_loss,
                e.n_forward,
                e.n_swapped,
                u8::from(e.epoch == self.best_epoch)
            ));
        }
        s
    }
}

/// Loop settings shared by [`train_variable`] and [`train_on_samples`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub variable: VariableKind,
    pub network: NetworkConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl From<&TrainPlan> for LoopConfig {
    fn from(p: &TrainPlan) -> Self {
        LoopConfig {
            variable: p.variable,
            network: p.network.clone(),
            adam: p.adam,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            patience: p.patience,
            seed: p.seed,
        }
    }
}

pub fn train_variable(plan: &TrainPlan) -> Result<(NetworkWeights<f32>, TrainReport)> {
    plan.validate()?;
    let (train_runs, val_runs) = plan.build_runs()?;
    let depth = plan.network.depth;
    let train = prepare_runs(&train_runs, &plan.pairing, plan.variable, depth)?;
    let val = prepare_runs(&val_runs, &plan.pairing, plan.variable, depth)?;
    info!(
        "{}: {} training and {} validation triplets",
        plan.variable,
        train.len(),
        val.len()
    );
    train_on_samples(&LoopConfig::from(plan), &train, &val, plan.grid)
}

/// Mean loss over both input orders of every sample.
pub fn evaluate(w: &NetworkWeights<f32>, samples: &[PreparedSample], h: usize, wd: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let mut total = 0.0;
    for s in samples {
        for input in [&s.input, &s.swapped] {
            total += mse_loss(&forward(w, input, h, wd)?, &s.target)?;
        }
    }
    Ok(total / (2 * samples.len()) as f64)
}

/// Sets the output bias to the logit of the mean training target, so the
/// untrained network starts at the target prior instead of pushing the
/// sigmoid toward saturation while it learns the offset.
pub fn init_head_bias(weights: &mut NetworkWeights<f32>, train: &[PreparedSample]) {
    let (sum, n) = train
        .iter()
        .flat_map(|s| s.target.iter())
        .fold((0.0f64, 0usize), |(s, n), &x| (s + f64::from(x), n + 1));
    if n == 0 {
        return;
    }
    let m = (sum / n as f64).clamp(0.01, 0.99);
    let bias = weights.tensors.last_mut().expect("network has a head");
    bias.data[0] = (m / (1.0 - m)).ln() as f32;
}

/// Epoch loop with early stopping; returns the best-validation weights.
pub fn train_on_samples(
    cfg: &LoopConfig,
    train: &[PreparedSample],
    val: &[PreparedSample],
    grid: GridSpec,
) -> Result<(NetworkWeights<f32>, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation samples"));
    }
    let h = padded_dim(grid.n_y, cfg.network.depth);
    let wd = padded_dim(grid.n_x, cfg.network.depth);
    if train[0].target.len() != h * wd {
        return Err(Error::Shape(format!(
            "prepared samples have {} values, expected {h}x{wd}",
            train[0].target.len()
        )));
    }

    let mut weights: NetworkWeights<f32> = init_network(&cfg.network)?;
    init_head_bias(&mut weights, train);
    let mut adam = AdamState::new(&weights);
    let mut best = (weights.clone(), f64::INFINITY, 0usize);
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<(usize, bool)> = (0..train.len()).flat_map(|k| [(k, false), (k, true)]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["shuffle", &epoch.to_string()]));
        order.shuffle(&mut rng);

        let (mut n_forward, mut n_swapped) = (0, 0);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example<f32>> = chunk
                .iter()
                .map(|&(k, swap)| Example {
                    input: if swap { &train[k].swapped } else { &train[k].input },
                    target: &train[k].target,
                })
                .collect();
            let (loss, grads) = batch_gradients(&weights, &batch, h, wd)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            adam_update(&mut weights, &grads, &mut adam, &cfg.adam)?;
            loss_sum += loss * chunk.len() as f64;
            for &(_, swap) in chunk {
                if swap {
                    n_swapped += 1;
                } else {
                    n_forward += 1;
                }
            }
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = evaluate(&weights, val, h, wd)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: order.len().div_ceil(cfg.batch_size),
            });
        }
        info!(
            "{} epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}",
            cfg.variable
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            n_forward,
            n_swapped,
        });
        if val_loss < best.1 {
            best = (weights.clone(), val_loss, epoch);
        } else if epoch - best.2 >= cfg.patience {
            debug!(
                "{}: stopping after {} epochs without improvement",
                cfg.variable, cfg.patience
            );
            break;
        }
    }

    let (weights, best_val_loss, best_epoch) = best;
    Ok((
        weights,
        TrainReport {
            variable: cfg.variable,
            epochs,
            best_epoch,
            best_val_loss,
            checkpoint: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> NaiveDateTime {
        chrono::NaiveDate::from_ymd_opt(2023, 8, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    #[test]
    fn head_bias_starts_at_target_mean() {
        let cfg = NetworkConfig {
            base_channels: 4,
            depth: 1,
            ..NetworkConfig::default()
        };
        let mut w: NetworkWeights<f32> = init_network(&cfg).unwrap();
        let sample = |t: f32| PreparedSample {
            input: vec![0.0; 2 * 16],
            swapped: vec![0.0; 2 * 16],
            target: vec![t; 16],
        };
        let sigmoid = |x: f32| 1.0 / (1.0 + (-x).exp());
        let head = w.tensors.last().unwrap().name.clone();
        assert_eq!(head, "head.bias");

        init_head_bias(&mut w, &[sample(0.8), sample(0.9)]);
        assert!((sigmoid(w.tensors.last().unwrap().data[0]) - 0.85).abs() < 1e-5);
        // Saturated targets are pulled back so the sigmoid keeps a gradient.
        init_head_bias(&mut w, &[sample(1.0)]);
        assert!((sigmoid(w.tensors.last().unwrap().data[0]) - 0.99).abs() < 1e-5);
        // With all-zero input the network output is exactly the head bias prior.
        for t in w.tensors.iter_mut().filter(|t| t.name != "head.bias") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let out = forward(&w, &[0.0; 2 * 16], 4, 4).unwrap();
        assert!(out.iter().all(|&o| (o - 0.99).abs() < 1e-5));
    }

    fn tiny_plan() -> TrainPlan {
        TrainPlan {
            variable: VariableKind::PSEA,
            grid: GridSpec::new(16, 16, 28.0, 132.0, 0.5, 0.6).unwrap(),
            init_time: t0(),
            family: VortexFamily {
                speed: (10.0, 20.0),
                margin_cells: 2.0,
                r_max: (80.0, 120.0),
                ..VortexFamily::default()
            },
            train_seeds: SeedRange { start: 0, count: 2 },
            val_seeds: SeedRange { start: 100, count: 1 },
            perturbations: default_perturbations(),
            pairing: PairingConfig {
                t_list: vec![12],
                dt_list: vec![3, 6],
            },
            network: NetworkConfig {
                base_channels: 4,
                depth: 2,
                seed: 1,
                ..NetworkConfig::default()
            },
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            batch_size: 4,
            max_epochs: 200,
            patience: 1000,
            seed: 9,
        }
    }

    #[test]
    fn overfits_four_samples() {
        let plan = tiny_plan();
        let (w, report) = train_variable(&plan).unwrap();
        let first = report.epochs[0].train_loss;
        let last = report.epochs.last().unwrap().train_loss;
        assert_eq!(report.epochs.len(), 200);
        assert!(last < 0.1 * first, "{first} -> {last}");
        for e in &report.epochs {
            assert_eq!(e.n_forward, 4);
            assert_eq!(e.n_swapped, 4);
            assert!(e.train_loss.is_finite() && e.val_loss.is_finite());
        }
        let min = report
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, min);
        assert!(report.best_val_loss <= report.epochs[0].val_loss);
        assert_eq!(report.epochs[report.best_epoch - 1].val_loss, min);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 201);

        // The returned weights are the best-validation ones.
        let (_, val) = plan.build_runs().unwrap();
        let val = prepare_runs(&val, &plan.pairing, plan.variable, 2).unwrap();
        assert_eq!(evaluate(&w, &val, 16, 16).unwrap(), report.best_val_loss);
    }

    #[test]
    fn deterministic_report() {
        let plan = TrainPlan {
            max_epochs: 3,
            ..tiny_plan()
        };
        let a = train_variable(&plan).unwrap();
        let b = train_variable(&plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_validation() {
        let mut p = tiny_plan();
        p.train_seeds = SeedRange { start: 0, count: 0 };
        assert!(matches!(train_variable(&p), Err(Error::Empty(_))));
        let mut p = tiny_plan();
        p.val_seeds = SeedRange { start: 1, count: 5 };
        assert!(p.validate().is_err());
        assert!(train_on_samples(&LoopConfig::from(&tiny_plan()), &[], &[], tiny_plan().grid).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = tiny_plan();
        p.max_epochs = 2;
        p.adam.lr = f64::NAN;
        assert!(matches!(
            train_variable(&p),
            Err(Error::Divergence { epoch: 1, .. })
        ));
    }

    #[test]
    fn plan_toml_round_trip() {
        let p = tiny_plan();
        let text = toml::to_string(&p).unwrap();
        let back: TrainPlan = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
        let bad = text.replace("batch_size", "batch_sise");
        let err = toml::from_str::<TrainPlan>(&bad).unwrap_err().to_string();
        assert!(err.contains("batch_sise"), "{err}");
    }
}
