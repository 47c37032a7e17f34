//! Class-incremental training loop with weighted current-task gradients and replay.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{TaskDataset, TaskStream};
use crate::error::{Error, Result};
use crate::fsw::{fsw_weights, FairnessMeasure, FswConfig, WeightVector};
use crate::metrics::{accuracy, disparity, DisparitySnapshot, MetricsReport};
use crate::replay::{BudgetMode, ReplayBuffer};
use crate::tensor::{weighted_full_grad, MlpModel, Sample, SgdMomentum};

pub const TAU_GRID: [f64; 4] = [1.0, 2.0, 5.0, 10.0];
pub const ETA_GRID: [f64; 3] = [0.001, 0.01, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    /// Scale of the replay gradient.
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub hidden_dim: usize,
    pub fsw: FswConfig,
    pub fsw_enabled: bool,
    pub buffer_per_group: usize,
    pub budget_mode: BudgetMode,
    /// Use the whole buffer for every replay gradient instead of a sampled batch.
    pub full_buffer_grad: bool,
    /// Update only the output layer.
    pub freeze_hidden: bool,
    pub schedule: LrSchedule,
}

/// Per-task learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `eta · (1 + cos(π·epoch/epochs)) / 2`, restarted at each task.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, eta: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => eta,
            LrSchedule::Cosine => {
                eta * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            tau: 1.0,
            epochs: 10,
            batch_size: 64,
            momentum: 0.9,
            hidden_dim: 32,
            fsw: FswConfig::default(),
            fsw_enabled: true,
            buffer_per_group: 32,
            budget_mode: BudgetMode::PerSensitiveGroup,
            full_buffer_grad: false,
            freeze_hidden: false,
            schedule: LrSchedule::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be nonnegative, got {}",
                self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "epochs, batch_size and hidden_dim must be positive".into(),
            ));
        }
        self.fsw.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fsw,
    UniformReplay,
    Finetune,
    Joint,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Fsw,
        Method::UniformReplay,
        Method::Finetune,
        Method::Joint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fsw => "fsw",
            Method::UniformReplay => "uniform_replay",
            Method::Finetune => "finetune",
            Method::Joint => "joint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Audit record of one weighting solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub task: usize,
    pub epoch: usize,
    pub objective_at_optimum: f64,
    pub objective_at_ones: f64,
    pub near_binary: usize,
    pub num_weights: usize,
    pub lp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDump {
    pub task: usize,
    pub epoch: usize,
    pub weights: WeightVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub method: Method,
    pub seed: u64,
    /// `accuracy[l][t]`: accuracy on task `t` after training task `l`, `t ≤ l`.
    pub accuracy: Vec<Vec<f64>>,
    pub disparity: Vec<DisparitySnapshot>,
    pub diagnostics: Vec<EpochDiagnostics>,
    /// Final-epoch weights of each weighted task.
    pub weight_dumps: Vec<WeightDump>,
}

impl RunHistory {
    pub fn report(&self) -> Result<MetricsReport> {
        MetricsReport::from_history(&self.accuracy, &self.disparity)
    }
}

/// What a single task's training produced.
#[derive(Debug, Clone, Default)]
pub struct TaskLog {
    pub diagnostics: Vec<EpochDiagnostics>,
    pub last_weights: Option<WeightVector>,
}

/// One pass over `samples` in shuffled batches.
///
/// Each step applies `g_curr + tau·g_prev` where `g_curr = (1/|B|) Σ_{i∈B} wᵢ∇ℓᵢ`
/// and `g_prev` is the mean gradient over a replay batch of the same size.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch<R: Rng + ?Sized>(
    model: &mut MlpModel,
    opt: &mut SgdMomentum,
    samples: &[Sample],
    weights: &[f64],
    replay: &[Sample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<()> {
    if samples.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} samples but {} weights",
            samples.len(),
            weights.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let use_replay = cfg.tau > 0.0 && !replay.is_empty();
    let replay_all: Vec<&Sample> = if use_replay && cfg.full_buffer_grad {
        replay.iter().collect()
    } else {
        Vec::new()
    };
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let w: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
        let mut grad = weighted_full_grad(model, &batch, &w, batch.len() as f64)?;
        if use_replay {
            let picked: Vec<&Sample> = if cfg.full_buffer_grad {
                replay_all.clone()
            } else if replay.len() <= batch.len() {
                replay.iter().collect()
            } else {
                sample_indices(rng, replay.len(), batch.len())
                    .into_iter()
                    .map(|i| &replay[i])
                    .collect()
            };
            let ones = vec![cfg.tau; picked.len()];
            let prev = weighted_full_grad(model, &picked, &ones, picked.len() as f64)?;
            for (g, p) in grad.iter_mut().zip(&prev) {
                *g += p;
            }
        }
        if cfg.freeze_hidden {
            let k = model.last_layer_offset();
            grad[..k].iter_mut().for_each(|g| *g = 0.0);
        }
        opt.step(model.params_mut(), &grad)?;
    }
    Ok(())
}

/// Trains on one task. The buffer must hold every earlier task when replay or weighting is active.
pub fn train_task<R: Rng + ?Sized>(
    model: &mut MlpModel,
    task: &TaskDataset,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    first_task: bool,
    rng: &mut R,
) -> Result<TaskLog> {
    if task.is_empty() {
        return Err(Error::Empty(format!(
            "task {} has no samples",
            task.task_id
        )));
    }
    let weighting = cfg.fsw_enabled && (!first_task || cfg.fsw.weight_first_task);
    let replay = buffer.merged();
    if !first_task && replay.is_empty() && (cfg.tau > 0.0 || weighting) {
        return Err(Error::Empty(format!(
            "replay buffer is empty before task {}",
            task.task_id
        )));
    }
    let mut opt = SgdMomentum::new(cfg.eta, cfg.momentum, model.param_count());
    let mut log = TaskLog::default();
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.schedule.rate(cfg.eta, epoch, cfg.epochs);
        let weights = if weighting {
            let out = fsw_weights(&task.samples, &replay, model, &cfg.fsw)?;
            log.diagnostics.push(EpochDiagnostics {
                task: task.task_id,
                epoch,
                objective_at_optimum: out.objective_at_optimum,
                objective_at_ones: out.objective_at_ones,
                near_binary: out
                    .weights
                    .values()
                    .iter()
                    .filter(|&&w| w <= 1e-6 || w >= 1.0 - 1e-6)
                    .count(),
                num_weights: out.weights.len(),
                lp_iterations: out.lp_iterations,
            });
            out.weights
        } else {
            WeightVector::ones(task.len())
        };
        run_epoch(
            model,
            &mut opt,
            &task.samples,
            weights.values(),
            &replay,
            cfg,
            rng,
        )?;
        if weighting {
            log.last_weights = Some(weights);
        }
    }
    Ok(log)
}

fn predictions(model: &MlpModel, samples: &[Sample]) -> Result<Vec<usize>> {
    samples.iter().map(|s| model.predict(&s.features)).collect()
}

/// Accuracy per seen task and disparities on the union of their test splits.
pub fn evaluate(
    model: &MlpModel,
    stream: &TaskStream,
    upto: usize,
) -> Result<(Vec<f64>, DisparitySnapshot)> {
    let mut row = Vec::with_capacity(upto + 1);
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut sens = Vec::new();
    let mut classes = Vec::new();
    for test in &stream.test[..=upto] {
        let p = predictions(model, &test.samples)?;
        let y: Vec<usize> = test.samples.iter().map(|s| s.label).collect();
        row.push(accuracy(&p, &y)?);
        preds.extend(p);
        labels.extend(y);
        sens.extend(test.samples.iter().filter_map(|s| s.sensitive));
        classes.extend(&test.classes);
    }
    let z = stream.has_sensitive().then_some(sens.as_slice());
    let snap = DisparitySnapshot {
        eer: disparity(FairnessMeasure::Eer, &preds, &labels, None, &classes)?,
        eo: z
            .map(|z| disparity(FairnessMeasure::Eo, &preds, &labels, Some(z), &classes))
            .transpose()?,
        dp: z
            .map(|z| disparity(FairnessMeasure::Dp, &preds, &labels, Some(z), &classes))
            .transpose()?,
    };
    Ok((row, snap))
}

/// Runs `method` over the whole stream from a fresh model seeded by `seed`.
pub fn run_method(
    method: Method,
    stream: &TaskStream,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunHistory> {
    cfg.validate()?;
    stream.validate()?;
    let mut cfg = cfg.clone();
    match method {
        Method::Fsw => cfg.fsw_enabled = true,
        Method::UniformReplay => cfg.fsw_enabled = false,
        Method::Finetune | Method::Joint => {
            cfg.fsw_enabled = false;
            cfg.tau = 0.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::random(
        stream.input_dim,
        cfg.hidden_dim,
        stream.num_classes(),
        &mut rng,
    );
    let mut buffer = ReplayBuffer::new(cfg.buffer_per_group, cfg.budget_mode);
    let mut history = RunHistory {
        method,
        seed,
        accuracy: Vec::new(),
        disparity: Vec::new(),
        diagnostics: Vec::new(),
        weight_dumps: Vec::new(),
    };
    for (l, task) in stream.tasks.iter().enumerate() {
        let log = if method == Method::Joint {
            let union = TaskDataset {
                task_id: task.task_id,
                classes: stream.tasks[..=l]
                    .iter()
                    .flat_map(|t| t.classes.clone())
                    .collect(),
                samples: stream.tasks[..=l]
                    .iter()
                    .flat_map(|t| t.samples.clone())
                    .collect(),
            };
            train_task(&mut model, &union, &buffer, &cfg, l == 0, &mut rng)?
        } else {
            train_task(&mut model, task, &buffer, &cfg, l == 0, &mut rng)?
        };
        if let Some(weights) = log.last_weights {
            history.weight_dumps.push(WeightDump {
                task: task.task_id,
                epoch: cfg.epochs - 1,
                weights,
            });
        }
        history.diagnostics.extend(log.diagnostics);
        buffer.store(task, &mut rng)?;
        let (row, snap) = evaluate(&model, stream, l)?;
        log::debug!("{method} seed {seed} task {l}: accuracy {row:?}");
        history.accuracy.push(row);
        history.disparity.push(snap);
    }
    Ok(history)
}

pub fn run_baseline(
    method: Method,
    stream: &TaskStream,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunHistory> {
    if method == Method::Fsw {
        return Err(Error::Config("fsw is not a baseline".into()));
    }
    run_method(method, stream, cfg, seed)
}
