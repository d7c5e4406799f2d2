//! Adam training loop with per-epoch loss logging and checkpoints.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{sample_batch, TrainData};
use super::loss::{total_loss, LossComponents, LossSwitches};
use super::network::{ArchitectureSpec, Parameters};
use super::{MappingModel, NnError, Real, TrainingFingerprint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub loss_switches: LossSwitches,
    pub paired_fraction: f64,
    pub seed: u64,
    /// Random crops drawn per training image per epoch.
    pub patches_per_image: usize,
    /// Keep a checkpoint every this many epochs (0 disables periodic ones).
    pub checkpoint_every: usize,
    /// Cosine decay target as a fraction of `learning_rate`, reached at the
    /// last step. 1 keeps the rate constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 16,
            patch_size: 256,
            epochs: 140,
            loss_switches: LossSwitches::default(),
            paired_fraction: 0.5,
            seed: 0,
            patches_per_image: 1,
            checkpoint_every: 10,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ArchitectureSpec) -> Result<(), NnError> {
        self.loss_switches.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(NnError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(NnError::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.paired_fraction > 0.0 && self.paired_fraction < 1.0) {
            return Err(NnError::Config(format!("paired_fraction {} outside (0, 1)", self.paired_fraction)));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(NnError::Config(format!("final_lr_fraction {} outside (0, 1]", self.final_lr_fraction)));
        }
        if self.patches_per_image == 0 {
            return Err(NnError::Config("patches_per_image must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(NnError::Config("batch size must be at least 2 to mix paired and unpaired samples".into()));
        }
        if self.patch_size == 0 || self.patch_size % arch.alignment() != 0 {
            return Err(NnError::Config(format!(
                "patch size {} is not a multiple of {}",
                self.patch_size,
                arch.alignment()
            )));
        }
        Ok(())
    }

    /// Optimizer steps per epoch: `patches_per_image` crops of every image the
    /// enabled terms draw from. Unpaired sets only count when `L_r` is on.
    pub fn steps_per_epoch(&self, data: &TrainData) -> usize {
        let s = self.loss_switches;
        let unpaired = if s.use_r { data.unpaired_a.len() + data.unpaired_b.len() } else { 0 };
        let anchors = if s.uses_anchors() { data.anchors.len() } else { 0 };
        ((unpaired + anchors) * self.patches_per_image).div_ceil(self.batch_size).max(1)
    }

    /// Learning rate for optimizer step `step` (0-based) of a run with
    /// `total` steps.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        if self.final_lr_fraction == 1.0 || total <= 1 {
            return self.learning_rate;
        }
        let progress = step as f64 / (total - 1) as f64;
        let floor = self.learning_rate * self.final_lr_fraction;
        floor + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<P: Parameters<T>>(params: &P, lr: f64, beta1: f64, beta2: f64) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, s| m.push(vec![T::zero(); s.len()]));
        let v = m.clone();
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, m, v }
    }

    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c = |x: f64| T::from_f64(x).expect("representable");
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let step = c(self.lr * (1.0 - self.beta2.powi(self.t as i32)).sqrt() / (1.0 - self.beta1.powi(self.t as i32)));
        let eps_hat = c(self.eps * (1.0 - self.beta2.powi(self.t as i32)).sqrt());
        let mut gs: Vec<&[T]> = Vec::new();
        grads.visit("", &mut |_, s| gs.push(s));
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let (g, m, v) = (gs[i], &mut ms[i], &mut vs[i]);
            for k in 0..p.len() {
                m[k] = b1 * m[k] + one_b1 * g[k];
                v[k] = b2 * v[k] + one_b2 * g[k] * g[k];
                p[k] -= step * m[k] / (v[k].sqrt() + eps_hat);
            }
            i += 1;
        });
    }
}

/// Mean loss terms over one epoch; `None` for switched-off terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_r: Option<f64>,
    pub l_a: Option<f64>,
    pub l_m: Option<f64>,
    pub total: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,L_r,L_a,L_m,L";

    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        format!("{},{},{},{},{:.8}", self.epoch, f(self.l_r), f(self.l_a), f(self.l_m), self.total)
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::CSV_HEADER);
    out.push('\n');
    for l in log {
        let _ = writeln!(out, "{}", l.csv_line());
    }
    out
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub model: MappingModel<T>,
    pub adam: Adam<T>,
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl<T: Real> TrainState<T> {
    pub fn new(arch: &ArchitectureSpec, cfg: &TrainConfig) -> Result<Self, NnError> {
        let model = MappingModel::init(arch, cfg.seed)?;
        let adam = Adam::new(&model, cfg.learning_rate, cfg.beta1, cfg.beta2);
        Ok(TrainState { model, adam, epoch: 0, log: Vec::new() })
    }
}

#[derive(Debug)]
pub enum TrainError<T> {
    Nn(NnError),
    /// A non-finite loss or parameter; carries the last good checkpoint.
    Diverged { epoch: usize, step: usize, last_checkpoint: Box<TrainState<T>> },
}

impl<T> std::fmt::Display for TrainError<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Nn(e) => write!(f, "{e}"),
            TrainError::Diverged { epoch, step, last_checkpoint } => write!(
                f,
                "non-finite loss at epoch {epoch}, step {step}; last checkpoint is epoch {}",
                last_checkpoint.epoch
            ),
        }
    }
}

impl<T: Debug> std::error::Error for TrainError<T> {}

use std::fmt::Debug;

impl<T> From<NnError> for TrainError<T> {
    fn from(e: NnError) -> Self {
        TrainError::Nn(e)
    }
}

/// Side channels of a training run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Directory for periodic checkpoint files.
    pub checkpoint_dir: Option<PathBuf>,
    /// Called after every epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
    /// Stop after this epoch even if the config asks for more.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: MappingModel<T>,
    pub log: Vec<EpochLog>,
    /// Most recent periodic checkpoint (the final state if it fell on one).
    pub checkpoint: TrainState<T>,
    pub state: TrainState<T>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Trains a freshly initialized model.
pub fn train<T: Real>(
    data: &TrainData,
    arch: &ArchitectureSpec,
    cfg: &TrainConfig,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome<T>, TrainError<T>> {
    cfg.validate(arch)?;
    let state = TrainState::new(arch, cfg)?;
    resume(state, data, cfg, opts)
}

/// Continues from a saved state up to `cfg.epochs`.
pub fn resume<T: Real>(
    mut state: TrainState<T>,
    data: &TrainData,
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome<T>, TrainError<T>> {
    let arch = state.model.arch.clone();
    cfg.validate(&arch)?;
    data.validate(cfg.loss_switches, arch.in_channels)?;
    let switches = cfg.loss_switches;
    let steps = cfg.steps_per_epoch(data);
    let total_steps = steps * cfg.epochs;
    let mut checkpoint = state.clone();
    let last = opts.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    while state.epoch < last {
        let epoch = state.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        let mut sums = LossComponents::default();
        for step in 0..steps {
            let batch = sample_batch::<T, _>(data, cfg.batch_size, cfg.paired_fraction, cfg.patch_size, switches, &mut rng);
            state.adam.lr = cfg.learning_rate_at(state.epoch * steps + step, total_steps);
            let (c, grads) = state.model.batch_gradients(&batch, switches)?;
            let l = total_loss(c, switches)?;
            if !l.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, step, last_checkpoint: Box::new(checkpoint) });
            }
            state.adam.step(&mut state.model, &grads);
            sums.r += c.r;
            sums.a += c.a;
            sums.m += c.m;
        }
        let n = steps as f64;
        let mean = LossComponents { r: sums.r / n, a: sums.a / n, m: sums.m / n };
        let entry = EpochLog {
            epoch,
            l_r: switches.use_r.then_some(mean.r),
            l_a: switches.use_a.then_some(mean.a),
            l_m: switches.use_m.then_some(mean.m),
            total: total_loss(mean, switches)?,
        };
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&entry);
        }
        state.log.push(entry);
        state.epoch = epoch;
        if !state.model.is_finite() {
            return Err(TrainError::Diverged { epoch, step: steps, last_checkpoint: Box::new(checkpoint) });
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoint = state.clone();
            if let Some(dir) = &opts.checkpoint_dir {
                super::model_io::save_checkpoint(&checkpoint, cfg, dir)?;
            }
        }
    }
    state.model.fingerprint = TrainingFingerprint { seed: cfg.seed, epochs: state.epoch, switches };
    Ok(TrainOutcome { model: state.model.clone(), log: state.log.clone(), checkpoint, state })
}
