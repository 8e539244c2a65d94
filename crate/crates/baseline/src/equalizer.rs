//! Pilot-trained equalizers for real-valued streams: a linear FIR
//! equalizer adapted by LMS and a small fully connected network (CDAN)
//! over a sliding window of received symbols.

use icci_core::Rng;
use icci_model::array::Arr;
use icci_model::layers::Ctx;
use icci_model::optim::{Adam, AdamConfig};
use icci_model::ParamStore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScError};

pub const FFE_TAPS: usize = 61;
pub const LMS_STEP: f64 = 1e-3;
pub const LMS_PASSES: usize = 20;
pub const CDAN_WINDOW: usize = 121;
pub const CDAN_HIDDEN: [usize; 2] = [60, 121];

/// Received samples `r[n + k - c]`, `k = 0..len`, `c = len / 2`, zero outside.
pub fn window(received: &[f64], n: usize, len: usize) -> Vec<f64> {
    let c = len / 2;
    (0..len)
        .map(|k| {
            let idx = n as isize + k as isize - c as isize;
            if idx >= 0 && (idx as usize) < received.len() {
                received[idx as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Trained FIR taps; tap `c = len / 2` aligns with the current symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffe {
    pub taps: Vec<f64>,
}

impl Ffe {
    /// LMS over the pilot pairs `(pilots[i], received[i])`, starting from a
    /// unit center tap.
    pub fn train(received: &[f64], pilots: &[f64], n_taps: usize) -> Result<Self> {
        if n_taps.is_multiple_of(2) {
            return Err(ScError::InvalidConfig(format!("ffe tap count {n_taps} must be odd")));
        }
        if pilots.len() < n_taps || received.len() < pilots.len() {
            return Err(ScError::TooFewPilots {
                pilots: pilots.len().min(received.len()),
                taps: n_taps,
            });
        }
        let mut taps = vec![0.0; n_taps];
        taps[n_taps / 2] = 1.0;
        for _ in 0..LMS_PASSES {
            for (n, &s) in pilots.iter().enumerate() {
                let w = window(received, n, n_taps);
                let y: f64 = taps.iter().zip(&w).map(|(a, b)| a * b).sum();
                let e = s - y;
                for (t, x) in taps.iter_mut().zip(&w) {
                    *t += LMS_STEP * e * x;
                }
            }
        }
        Ok(Self { taps })
    }

    pub fn apply(&self, received: &[f64]) -> Vec<f64> {
        (0..received.len())
            .map(|n| {
                window(received, n, self.taps.len())
                    .iter()
                    .zip(&self.taps)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Trains on the leading pilots and equalizes the whole stream.
pub fn ffe_equalize(received: &[f64], pilots: &[f64], n_taps: usize) -> Result<Vec<f64>> {
    Ok(Ffe::train(received, pilots, n_taps)?.apply(received))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdanConfig {
    pub pilot_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled L2 shrinkage applied to weights after every step.
    pub weight_decay: f64,
    /// Share of the pilots held back to pick the best epoch.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CdanConfig {
    fn default() -> Self {
        Self {
            pilot_fraction: 0.05,
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl CdanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pilot_fraction > 0.0 && self.pilot_fraction <= 1.0) {
            return Err(ScError::InvalidConfig(format!("pilot fraction {}", self.pilot_fraction)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || !(self.weight_decay >= 0.0) {
            return Err(ScError::InvalidConfig("cdan holdout in [0, 1) and weight decay >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(ScError::InvalidConfig("cdan needs epochs, batch size and lr > 0".into()));
        }
        Ok(())
    }

    pub fn pilot_count(&self, len: usize) -> usize {
        ((len as f64 * self.pilot_fraction).round() as usize).clamp(1, len)
    }
}

/// Window → FC(60) → PReLU → FC(121) → PReLU → FC(1).
#[derive(Debug, Clone)]
pub struct Cdan {
    pub params: ParamStore,
}

fn cdan_forward(ctx: &mut Ctx<'_>, x: Arr) -> icci_model::tape::Var {
    let x = ctx.constant(x);
    let h = ctx.linear("fc1", x, CDAN_HIDDEN[0]);
    let h = ctx.prelu("act1", h);
    let h = ctx.linear("fc2", h, CDAN_HIDDEN[1]);
    let h = ctx.prelu("act2", h);
    ctx.linear("out", h, 1)
}

fn batch(received: &[f64], idx: &[usize]) -> Arr {
    let data = idx.iter().flat_map(|&n| window(received, n, CDAN_WINDOW)).collect();
    Arr::new(vec![idx.len(), CDAN_WINDOW], data)
}

impl Cdan {
    /// Trains with Adam and MSE on `(pilots[i], received[i])` pairs.
    pub fn train(received: &[f64], pilots: &[f64], cfg: &CdanConfig) -> Result<Self> {
        cfg.validate()?;
        if received.len() < CDAN_WINDOW {
            return Err(ScError::StreamTooShort {
                len: received.len(),
                min: CDAN_WINDOW,
            });
        }
        if pilots.is_empty() || pilots.len() > received.len() {
            return Err(ScError::InvalidConfig(format!("{} pilots for {} symbols", pilots.len(), received.len())));
        }
        let mut params = ParamStore::new();
        {
            let mut ctx = Ctx::initializing(&mut params, cfg.seed);
            cdan_forward(&mut ctx, batch(received, &[0]));
        }
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let mut rng = Rng::new(cfg.seed ^ 0x5eed_cda0);
        let held = (pilots.len() as f64 * cfg.holdout_fraction) as usize;
        let fit = pilots.len() - held;
        let mut order: Vec<usize> = (0..fit).collect();
        let held_idx: Vec<usize> = (fit..pilots.len()).collect();
        let mut best: Option<(f64, ParamStore)> = None;
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for idx in order.chunks(cfg.batch_size) {
                let grads = {
                    let mut ctx = Ctx::new(&params, true, true);
                    let out = cdan_forward(&mut ctx, batch(received, idx));
                    let target = idx.iter().map(|&n| pilots[n]).collect();
                    let loss = ctx.tape.mse(out, target);
                    let g = ctx.tape.backward(loss);
                    ctx.param_grads(&g)
                };
                adam.step(&mut params, &grads, cfg.lr);
                if cfg.weight_decay > 0.0 {
                    let shrink = (1.0 - cfg.lr * cfg.weight_decay) as f32;
                    for (name, p) in params.iter_mut() {
                        if name.ends_with(".w") {
                            p.data.iter_mut().for_each(|v| *v *= shrink);
                        }
                    }
                }
            }
            if held > 0 {
                let net = Cdan { params: params.clone() };
                let z = net.apply_at(received, &held_idx);
                let err = z.iter().zip(&pilots[fit..]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / held as f64;
                if best.as_ref().is_none_or(|(e, _)| err < *e) {
                    best = Some((err, params.clone()));
                }
            }
        }
        if let Some((_, p)) = best {
            params = p;
        }
        Ok(Self { params })
    }

    pub fn apply(&self, received: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..received.len()).collect();
        self.apply_at(received, &all)
    }

    /// Outputs at the given stream positions.
    pub fn apply_at(&self, received: &[f64], positions: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(positions.len());
        for idx in positions.chunks(1024) {
            let mut ctx = Ctx::new(&self.params, false, false);
            let y = cdan_forward(&mut ctx, batch(received, idx));
            out.extend_from_slice(&ctx.tape.value(y).data);
        }
        out
    }
}

/// Trains on the leading `pilot_fraction` of the stream, whose sent symbols
/// are `sent_pilots`, and equalizes every symbol.
pub fn cdan_equalize(received: &[f64], sent_pilots: &[f64], cfg: &CdanConfig) -> Result<Vec<f64>> {
    if received.len() < CDAN_WINDOW {
        return Err(ScError::StreamTooShort {
            len: received.len(),
            min: CDAN_WINDOW,
        });
    }
    let p = cfg.pilot_count(received.len());
    if sent_pilots.len() < p {
        return Err(ScError::InvalidConfig(format!(
            "{} known symbols, {p} pilots required",
            sent_pilots.len()
        )));
    }
    Ok(Cdan::train(received, &sent_pilots[..p], cfg)?.apply(received))
}

/// Equalizer choice for the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EqualizerConfig {
    Ffe {
        #[serde(default = "default_taps")]
        taps: usize,
        #[serde(default = "default_pilot_fraction")]
        pilot_fraction: f64,
    },
    Cdan(CdanConfig),
}

fn default_taps() -> usize {
    FFE_TAPS
}

fn default_pilot_fraction() -> f64 {
    0.05
}

impl EqualizerConfig {
    pub fn pilot_fraction(&self) -> f64 {
        match self {
            EqualizerConfig::Ffe { pilot_fraction, .. } => *pilot_fraction,
            EqualizerConfig::Cdan(c) => c.pilot_fraction,
        }
    }

    pub fn min_pilots(&self) -> usize {
        match self {
            EqualizerConfig::Ffe { taps, .. } => *taps,
            EqualizerConfig::Cdan(_) => 1,
        }
    }

    /// Trains on `pilots` (the first symbols of `received`) and equalizes.
    pub fn equalize(&self, received: &[f64], pilots: &[f64]) -> Result<Vec<f64>> {
        match self {
            EqualizerConfig::Ffe { taps, .. } => ffe_equalize(received, pilots, *taps),
            EqualizerConfig::Cdan(c) => {
                if received.len() < CDAN_WINDOW {
                    return Err(ScError::StreamTooShort {
                        len: received.len(),
                        min: CDAN_WINDOW,
                    });
                }
                Ok(Cdan::train(received, pilots, c)?.apply(received))
            }
        }
    }
}
