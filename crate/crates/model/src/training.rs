//! End-to-end training with the channel inside the loop, evaluation and
//! checkpointing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use icci_core::channel::{apply_channel, per_symbol_gains, ChannelFamily, ChannelSpec, Domain, Snr, SymbolStream};
use icci_core::metrics::{psnr, ssim};
use icci_core::sensing::{SensingKind, SensingModel};
use icci_core::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, Variant};
use crate::array::Arr;
use crate::error::{ModelError, Result};
use crate::layers::{apply_bn_updates, BnUpdate, Ctx};
use crate::network::{encode_graph, encoder_planes, interpret_graph, interpreter_masks};
use crate::optim::{Adam, AdamConfig};
use crate::params::{NetworkParams, ParamStore};
use crate::tape::Var;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` every `every` steps.
    Step { every: usize, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossId {
    Mse,
}

fn default_channel() -> ChannelSpec {
    ChannelSpec::awgn(Snr::Db(20.0))
}
fn default_lr() -> f64 {
    1e-4
}
fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}
fn default_loss() -> LossId {
    LossId::Mse
}
fn default_snr_high() -> f64 {
    20.0
}
fn default_ceiling() -> f64 {
    1e6
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_schedule")]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Channel family and parameters used in the loop.
    #[serde(default = "default_channel")]
    pub channel: ChannelSpec,
    /// Draw the SNR uniformly from `[snr_low, snr_high]` per batch; when off,
    /// the channel's own SNR is used.
    #[serde(default = "yes")]
    pub randomize_snr: bool,
    #[serde(default)]
    pub snr_low: f64,
    #[serde(default = "default_snr_high")]
    pub snr_high: f64,
    #[serde(default = "default_loss")]
    pub loss: LossId,
    #[serde(default)]
    pub seed: u64,
    /// Steps between checkpoints; 0 disables them.
    #[serde(default)]
    pub ckpt_interval: usize,
    #[serde(default)]
    pub deterministic: bool,
    /// Stop after this many steps even if epochs remain.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Losses above this (or non-finite) abort training.
    #[serde(default = "default_ceiling")]
    pub divergence_ceiling: f64,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            lr_schedule: LrSchedule::Constant,
            optimizer: AdamConfig::default(),
            channel: default_channel(),
            randomize_snr: true,
            snr_low: 0.0,
            snr_high: default_snr_high(),
            loss: LossId::Mse,
            seed,
            ckpt_interval: 0,
            deterministic: false,
            max_steps: None,
            divergence_ceiling: default_ceiling(),
        }
    }

    /// Fixed-channel training.
    pub fn with_channel(mut self, channel: ChannelSpec) -> Self {
        self.channel = channel;
        self.randomize_snr = false;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.randomize_snr && !(self.snr_low <= self.snr_high) {
            return bad("snr_low must not exceed snr_high");
        }
        if let LrSchedule::Step { every, gamma } = self.lr_schedule {
            if every == 0 || !(gamma > 0.0) {
                return bad("step schedule needs every > 0 and gamma > 0");
            }
        }
        if self.channel.family == ChannelFamily::Isi {
            return bad("the nonlinear isi channel is not differentiable in the loop");
        }
        self.channel.validate()?;
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Step { every, gamma } => self.lr * gamma.powi((step / every) as i32),
        }
    }
}

/// Mean squared elementwise difference.
pub fn mse_loss(estimate: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(icci_core::metrics::mse(estimate, target)?)
}

/// Independent stream seed for `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut r = Rng::new(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let a = r.next_u64();
    Rng::new(a ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64()
}

const STREAM_STEP: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_VAL: u64 = 3;

/// Checks that `arch` matches the sensing model and cube dims.
pub fn check_compat(arch: &ArchConfig, sensing: &SensingModel, cube: (usize, usize, usize)) -> Result<()> {
    arch.validate()?;
    sensing.check_cube_dims(cube)?;
    let variant_ok = matches!(
        (arch.variant, sensing.kind),
        (Variant::Spectral, SensingKind::Cassi) | (Variant::Video, SensingKind::Cacti)
    );
    let (_, wm) = sensing.measurement_dims(cube);
    if !variant_ok || arch.cube_dims() != cube || arch.meas_width != wm {
        return Err(ModelError::DimMismatch {
            expected: vec![arch.height, arch.width, arch.bands, arch.meas_width],
            actual: vec![cube.0, cube.1, cube.2, wm],
        });
    }
    Ok(())
}

/// Channel realization applied inside the graph: `y = gain ⊙ s + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub gains: Option<Vec<f64>>,
    pub noise: Vec<f64>,
}

/// Draws one channel realization for each row of `symbols` (`N × L` reals).
pub fn draw_channel(symbols: &[f64], rows: usize, domain: Domain, spec: &ChannelSpec, rng: &mut Rng) -> Result<ChannelDraw> {
    let l = symbols.len() / rows;
    let mut noise = Vec::with_capacity(symbols.len());
    let mut gains = Vec::new();
    for row in symbols.chunks(l) {
        let stream = SymbolStream::from_reals(row, domain);
        let out = apply_channel(&stream, spec, rng)?;
        let g: Vec<f64> = match &out.gains {
            Some(blocks) => per_symbol_gains(blocks, spec.block_len, stream.len())
                .into_iter()
                .flat_map(|g| std::iter::repeat_n(g, if domain == Domain::Complex { 2 } else { 1 }))
                .collect(),
            None => vec![1.0; l],
        };
        for ((r, o), gi) in row.iter().zip(out.stream.to_reals()).zip(&g) {
            noise.push(o - gi * r);
        }
        gains.extend(g);
    }
    let faded = spec.family == ChannelFamily::SlowFading;
    Ok(ChannelDraw {
        gains: faded.then_some(gains),
        noise,
    })
}

/// Output of one forward pass over a batch.
pub struct BatchEval {
    pub loss: f64,
    pub grads: Vec<(String, Vec<f64>)>,
    pub bn_updates: Vec<BnUpdate>,
    pub estimates: Vec<f64>,
}

/// One sensing → encode → channel → interpret → MSE pass. Sensor and channel
/// noise come from `rng` in that order.
#[allow(clippy::too_many_arguments)]
pub fn forward_batch(
    store: &ParamStore,
    arch: &ArchConfig,
    sensing: &SensingModel,
    cubes: &[&Tensor],
    channel: &ChannelSpec,
    rng: &mut Rng,
    train: bool,
    grad: bool,
    override_: Option<(&str, usize, f64)>,
) -> Result<BatchEval> {
    let n = cubes.len();
    let mut planes = Vec::new();
    let mut target = Vec::new();
    for cube in cubes {
        let m = sensing.forward(cube, rng)?;
        planes.extend(encoder_planes(arch, &m.data, &sensing.mask)?);
        target.extend(cube.to_f64());
    }
    let mut ctx = Ctx::new(store, train, grad);
    if let Some((name, i, v)) = override_ {
        ctx = ctx.with_override(name, i, v);
    }
    let input = ctx.constant(Arr::new(
        vec![n, arch.encoder_inputs(), arch.height, arch.padded_width()],
        planes,
    ));
    let s = encode_graph(&mut ctx, arch, input)?;
    let draw = draw_channel(&ctx.tape.value(s).data, n, arch.domain, channel, rng)?;
    let mut y: Var = s;
    if let Some(g) = draw.gains {
        y = ctx.tape.mul_const(y, g);
    }
    let y = ctx.tape.add_const(y, &draw.noise);
    let masks = interpreter_masks(arch, &sensing.mask, n)?.map(|m| ctx.constant(m));
    let out = interpret_graph(&mut ctx, arch, y, masks)?;
    let loss_var = ctx.tape.mse(out, target);
    let loss = ctx.tape.value(loss_var).data[0];
    let grads = if grad && loss.is_finite() {
        let g = ctx.tape.backward(loss_var);
        ctx.param_grads(&g)
    } else {
        Vec::new()
    };
    Ok(BatchEval {
        loss,
        grads,
        bn_updates: ctx.bn_updates().to_vec(),
        estimates: ctx.tape.value(out).data.clone(),
    })
}

/// Mean PSNR and SSIM of clipped reconstructions over `cubes`, with sensor
/// and channel noise drawn from a stream fixed by `seed` (independent of the
/// SNR, so sweeps share noise realizations). SSIM is `None` for frames
/// smaller than its window.
pub fn evaluate(
    params: &NetworkParams,
    sensing: &SensingModel,
    cubes: &[Tensor],
    channel: &ChannelSpec,
    seed: u64,
) -> Result<(f64, Option<f64>)> {
    let mut psnr_sum = 0.0;
    let mut ssim_sum = Some(0.0);
    for (i, cube) in cubes.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(seed, STREAM_VAL, i as u64));
        let est = reconstruct(params, sensing, cube, channel, &mut rng)?;
        psnr_sum += psnr(&est, cube, 1.0)?;
        ssim_sum = match (ssim_sum, ssim(&est, cube)) {
            (Some(acc), Ok(v)) => Some(acc + v),
            _ => None,
        };
    }
    let n = cubes.len().max(1) as f64;
    Ok((psnr_sum / n, ssim_sum.map(|s| s / n)))
}

/// Eval-mode reconstruction of one cube through the full link, clipped to [0, 1].
pub fn reconstruct(
    params: &NetworkParams,
    sensing: &SensingModel,
    cube: &Tensor,
    channel: &ChannelSpec,
    rng: &mut Rng,
) -> Result<Tensor> {
    let eval = forward_batch(&params.store, &params.arch, sensing, &[cube], channel, rng, false, false, None)?;
    let mut t = Tensor::from_f64(cube.dims().to_vec(), &eval.estimates)?;
    t.clamp(0.0, 1.0);
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Index of the epoch's last step.
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<f64>,
    /// Absent when the frames are smaller than the SSIM window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_ssim: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Mean of `losses[start..start + window]`.
    pub fn moving_average(&self, start: usize, window: usize) -> Option<f64> {
        let s = self.losses.get(start..start + window)?;
        Some(s.iter().sum::<f64>() / window as f64)
    }

    /// CSV with columns `step,loss,epoch,val_psnr,val_ssim,seconds`;
    /// validation columns are filled on each epoch's last step.
    pub fn to_csv(&self, steps_per_epoch: usize) -> String {
        let mut out = String::from("step,loss,epoch,val_psnr,val_ssim,seconds\n");
        for (step, loss) in self.losses.iter().enumerate() {
            let epoch = step / steps_per_epoch.max(1);
            let _ = write!(out, "{step},{loss},{epoch}");
            match self.epochs.iter().find(|e| e.step == step) {
                Some(e) => {
                    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
                    let _ = writeln!(out, ",{},{},{:.3}", opt(e.val_psnr), opt(e.val_ssim), e.seconds);
                }
                None => out.push_str(",,,\n"),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    step: usize,
    adam_t: u64,
    fingerprint: String,
    history: TrainHistory,
}

/// Stateful trainer; every step's randomness is derived from
/// `(seed, step)`, so a checkpoint only needs parameters, optimizer state and
/// the step counter.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub params: NetworkParams,
    pub adam: Adam,
    pub history: TrainHistory,
    step: usize,
    sensing: &'a SensingModel,
    train: &'a [Tensor],
    val: &'a [Tensor],
    epoch_started: Option<Instant>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        params: NetworkParams,
        sensing: &'a SensingModel,
        train: &'a [Tensor],
        val: &'a [Tensor],
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let first = train.first().ok_or_else(|| ModelError::InvalidConfig("empty training set".into()))?;
        let dims = first.cube_dims()?;
        check_compat(&params.arch, sensing, dims)?;
        for t in train.iter().chain(val) {
            if t.cube_dims()? != dims {
                return Err(ModelError::DimMismatch {
                    expected: vec![dims.0, dims.1, dims.2],
                    actual: t.dims().to_vec(),
                });
            }
        }
        let adam = Adam::new(cfg.optimizer, &params.store);
        Ok(Self {
            cfg,
            params,
            adam,
            history: TrainHistory::default(),
            step: 0,
            sensing,
            train,
            val,
            epoch_started: None,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let full = self.cfg.epochs * self.steps_per_epoch();
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    fn batch_indices(&self, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (step / spe, step % spe);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        Rng::new(derive_seed(self.cfg.seed, STREAM_SHUFFLE, epoch as u64)).shuffle(&mut order);
        let end = ((pos + 1) * self.cfg.batch_size).min(order.len());
        order[pos * self.cfg.batch_size..end].to_vec()
    }

    fn channel_for(&self, rng: &mut Rng) -> ChannelSpec {
        if self.cfg.randomize_snr {
            let u = rng.next_uniform();
            let snr = self.cfg.snr_low + u * (self.cfg.snr_high - self.cfg.snr_low);
            self.cfg.channel.with_snr(Snr::Db(snr))
        } else {
            self.cfg.channel.clone()
        }
    }

    /// Loss of the next step without updating anything.
    pub fn peek_loss(&self) -> Result<f64> {
        let (loss, ..) = self.evaluate_step(self.step, false)?;
        Ok(loss)
    }

    fn evaluate_step(&self, step: usize, grad: bool) -> Result<(f64, Vec<(String, Vec<f64>)>, Vec<BnUpdate>)> {
        let idx = self.batch_indices(step);
        let cubes: Vec<&Tensor> = idx.iter().map(|&i| &self.train[i]).collect();
        let mut rng = Rng::new(derive_seed(self.cfg.seed, STREAM_STEP, step as u64));
        let channel = self.channel_for(&mut rng);
        let e = forward_batch(
            &self.params.store,
            &self.params.arch,
            self.sensing,
            &cubes,
            &channel,
            &mut rng,
            true,
            grad,
            None,
        )?;
        Ok((e.loss, e.grads, e.bn_updates))
    }

    /// Runs one optimization step and returns its loss.
    pub fn train_step(&mut self) -> Result<f64> {
        if self.epoch_started.is_none() {
            self.epoch_started = Some(Instant::now());
        }
        let step = self.step;
        let (loss, grads, bn) = self.evaluate_step(step, true)?;
        if !loss.is_finite() || loss > self.cfg.divergence_ceiling {
            return Err(ModelError::Diverged { step, loss });
        }
        self.adam.step(&mut self.params.store, &grads, self.cfg.lr_at(step));
        apply_bn_updates(&mut self.params.store, &bn);
        self.history.losses.push(loss);
        self.step += 1;
        let spe = self.steps_per_epoch();
        if self.step.is_multiple_of(spe) || self.step == self.total_steps() {
            self.finish_epoch(step)?;
        }
        Ok(loss)
    }

    fn finish_epoch(&mut self, last_step: usize) -> Result<()> {
        let seconds = if self.cfg.deterministic {
            0.0
        } else {
            self.epoch_started.map_or(0.0, |t| t.elapsed().as_secs_f64())
        };
        self.epoch_started = None;
        let (val_psnr, val_ssim) = if self.val.is_empty() {
            (None, None)
        } else {
            let channel = if self.cfg.randomize_snr {
                self.cfg.channel.with_snr(Snr::Db(self.cfg.snr_high))
            } else {
                self.cfg.channel.clone()
            };
            let (p, s) = evaluate(&self.params, self.sensing, self.val, &channel, self.cfg.seed)?;
            (Some(p), s)
        };
        self.history.epochs.push(EpochRecord {
            epoch: last_step / self.steps_per_epoch(),
            step: last_step,
            val_psnr,
            val_ssim,
            seconds,
        });
        Ok(())
    }

    /// Trains to completion, checkpointing into `ckpt_dir` at the configured
    /// interval and at the end.
    pub fn run(&mut self, ckpt_dir: Option<&Path>) -> Result<()> {
        while !self.is_done() {
            self.train_step()?;
            if let Some(dir) = ckpt_dir {
                let every = self.cfg.ckpt_interval;
                if every > 0 && self.step.is_multiple_of(every) {
                    self.save_checkpoint(dir)?;
                }
            }
        }
        if let Some(dir) = ckpt_dir {
            self.save_checkpoint(dir)?;
        }
        Ok(())
    }

    /// Writes parameters, optimizer moments, trainer state and history CSV.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let fp = self.params.fingerprint();
        self.params.save(&dir.join("params"))?;
        self.adam.m.save(&dir.join("adam_m"), &fp, None)?;
        self.adam.v.save(&dir.join("adam_v"), &fp, None)?;
        let state = TrainerState {
            step: self.step,
            adam_t: self.adam.t,
            fingerprint: fp,
            history: self.history.clone(),
        };
        let path = dir.join("state.toml");
        let text = toml::to_string(&state).map_err(|e| ModelError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        fs::write(&path, text).map_err(|e| ModelError::io(&path, e))?;
        let csv = dir.join("history.csv");
        fs::write(&csv, self.history.to_csv(self.steps_per_epoch())).map_err(|e| ModelError::io(&csv, e))
    }

    /// Restores a trainer from [`Trainer::save_checkpoint`] output.
    pub fn resume(
        dir: &Path,
        arch: &ArchConfig,
        sensing: &'a SensingModel,
        train: &'a [Tensor],
        val: &'a [Tensor],
        cfg: TrainConfig,
    ) -> Result<Self> {
        let params = NetworkParams::load(&dir.join("params"), arch)?;
        let path = dir.join("state.toml");
        let text = fs::read_to_string(&path).map_err(|e| ModelError::io(&path, e))?;
        let state: TrainerState = toml::from_str(&text).map_err(|e| ModelError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if state.fingerprint != arch.fingerprint() {
            return Err(ModelError::FingerprintMismatch {
                expected: arch.fingerprint(),
                found: state.fingerprint,
            });
        }
        let mut t = Self::new(params, sensing, train, val, cfg)?;
        t.adam.m = ParamStore::load(&dir.join("adam_m"))?.0;
        t.adam.v = ParamStore::load(&dir.join("adam_v"))?.0;
        t.adam.t = state.adam_t;
        t.step = state.step;
        t.history = state.history;
        Ok(t)
    }
}

/// Initializes parameters from `cfg.seed` and trains to completion.
pub fn train_e2e(
    train: &[Tensor],
    val: &[Tensor],
    sensing: &SensingModel,
    arch: &ArchConfig,
    cfg: TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(NetworkParams, TrainHistory)> {
    let params = NetworkParams::init(arch, cfg.seed)?;
    let mut t = Trainer::new(params, sensing, train, val, cfg)?;
    t.run(ckpt_dir)?;
    Ok((t.params, t.history))
}
