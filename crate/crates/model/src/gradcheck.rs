//! Finite-difference verification of analytic gradients.

use icci_core::channel::ChannelSpec;
use icci_core::sensing::{generate_mask, MaskPattern, SensingModel};
use icci_core::{Rng, Tensor};

use crate::arch::{ArchConfig, Variant};
use crate::array::Arr;
use crate::blocks::{ial_forward, ssa_forward, trb_forward, BlockFlags};
use crate::error::Result;
use crate::layers::Ctx;
use crate::params::{NetworkParams, ParamStore};
use crate::training::forward_batch;

/// Central-difference step applied to the selected parameter. Losses are
/// evaluated in double precision, so the step follows the usual
/// `eps^(1/3)` scaling (about 1e-3 for single precision, 1e-5 here).
pub const FD_STEP: f64 = 1e-5;
/// Differences this small in absolute terms count as agreement.
pub const ABS_FLOOR: f64 = 1e-9;
/// Fraction of checked parameters that must agree.
pub const PASS_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        let ok = self.checks.iter().filter(|c| c.ok).count();
        ok as f64 / self.checks.len().max(1) as f64
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.pass_fraction() >= PASS_FRACTION
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

/// Loss evaluation with an optional `(name, index, value)` override; returns
/// the loss and, when no override is given, gradients by parameter name.
pub type LossFn<'a> = dyn Fn(Option<(&str, usize, f64)>) -> Result<(f64, Vec<(String, Vec<f64>)>)> + 'a;

/// Compares analytic gradients against central differences for `n`
/// parameter scalars drawn uniformly (parameter first, then index). With
/// `corrupt` set the analytic gradients are deliberately scaled by 1.5.
pub fn check_gradients(
    store: &ParamStore,
    n: usize,
    tolerance: f64,
    seed: u64,
    corrupt: bool,
    eval: &LossFn,
) -> Result<GradCheckReport> {
    let (_, grads) = eval(None)?;
    let mut rng = Rng::new(seed);
    let names: Vec<&(String, Vec<f64>)> = grads.iter().filter(|(name, _)| store.get(name).is_some()).collect();
    let mut checks = Vec::with_capacity(n);
    for _ in 0..n {
        let (name, g) = names[rng.next_below(names.len())];
        let index = rng.next_below(g.len());
        let base = store.get(name).expect("checked above").data[index] as f64;
        let (lp, _) = eval(Some((name, index, base + FD_STEP)))?;
        let (lm, _) = eval(Some((name, index, base - FD_STEP)))?;
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let analytic = if corrupt { g[index] * 1.5 } else { g[index] };
        let diff = (analytic - numeric).abs();
        let rel_err = diff / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        checks.push(ParamCheck {
            name: name.clone(),
            index,
            analytic,
            numeric,
            rel_err,
            ok: rel_err <= tolerance || diff <= ABS_FLOOR,
        });
    }
    Ok(GradCheckReport { checks, tolerance })
}

/// Toy sensing model and scenes matching `arch` (random binary masks,
/// uniform random cubes).
pub fn toy_problem(arch: &ArchConfig, batch: usize, seed: u64) -> Result<(SensingModel, Vec<Tensor>)> {
    let (h, w, c) = arch.cube_dims();
    let sensing = match arch.variant {
        Variant::Spectral => {
            let step = if c > 1 { (arch.meas_width - w) / (c - 1) } else { 0 };
            SensingModel::cassi(generate_mask(h, w, 1, 0.5, seed, MaskPattern::Bernoulli)?, step, 0.0)
        }
        Variant::Video => SensingModel::cacti(generate_mask(h, w, c, 0.5, seed, MaskPattern::Bernoulli)?, 0.0),
    };
    let mut rng = Rng::new(seed ^ 0x5151);
    let cubes = (0..batch)
        .map(|_| {
            let v: Vec<f64> = (0..h * w * c).map(|_| rng.next_uniform()).collect();
            Tensor::from_f64(vec![h, w, c], &v)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((sensing, cubes))
}

/// End-to-end check on the full sensing → encoder → channel → interpreter →
/// MSE chain with freshly initialized parameters and training-mode batch norm.
pub fn gradient_check(
    arch: &ArchConfig,
    channel: &ChannelSpec,
    n: usize,
    tolerance: f64,
    seed: u64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let mut params = NetworkParams::init(arch, seed)?;
    jitter_offsets(&mut params.store, seed);
    let (sensing, cubes) = toy_problem(arch, 2, seed)?;
    let refs: Vec<&Tensor> = cubes.iter().collect();
    let eval = |ov: Option<(&str, usize, f64)>| {
        let mut rng = Rng::new(seed ^ 0xC0FFEE);
        let e = forward_batch(
            &params.store,
            arch,
            &sensing,
            &refs,
            channel,
            &mut rng,
            true,
            ov.is_none(),
            ov,
        )?;
        Ok((e.loss, e.grads))
    };
    check_gradients(&params.store, n, tolerance, seed ^ 0xABCD, corrupt, &eval)
}

/// Moves zero-initialized offsets (biases, batch-norm shifts) to small
/// random values. Zero-padded regions otherwise produce pre-activations of
/// exactly zero, where ReLU has no derivative and central differences
/// straddle the kink.
pub fn jitter_offsets(store: &mut ParamStore, seed: u64) {
    let mut rng = Rng::new(seed ^ 0x1177);
    for (name, p) in store.iter_mut() {
        if p.trainable && (name.ends_with(".b") || name.ends_with(".beta")) {
            for v in &mut p.data {
                *v += (0.1 * rng.next_gaussian()) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Trb,
    Ssa,
    Ial,
}

/// Check on a single block: MSE of the block output against a fixed random
/// target, for an `N × C × H × W` random input.
pub fn block_gradient_check(
    kind: BlockKind,
    shape: [usize; 4],
    n: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let len: usize = shape.iter().product();
    let input: Vec<f64> = (0..len).map(|_| rng.next_gaussian()).collect();
    let target: Vec<f64> = (0..len).map(|_| rng.next_gaussian()).collect();
    let c = shape[1];
    let build = |ctx: &mut Ctx| -> Result<crate::tape::Var> {
        let x = ctx.constant(Arr::new(shape.to_vec(), input.clone()));
        match kind {
            BlockKind::Trb => trb_forward(ctx, "blk", x, c, BlockFlags::default()),
            BlockKind::Ssa => ssa_forward(ctx, "blk", x),
            BlockKind::Ial => Ok(ial_forward(ctx, "blk", x)),
        }
    };
    let mut store = ParamStore::new();
    {
        let mut ctx = Ctx::initializing(&mut store, seed ^ 1);
        build(&mut ctx)?;
    }
    let eval = |ov: Option<(&str, usize, f64)>| {
        let mut ctx = Ctx::new(&store, true, ov.is_none());
        if let Some((name, i, v)) = ov {
            ctx = ctx.with_override(name, i, v);
        }
        let y = build(&mut ctx)?;
        let l = ctx.tape.mse(y, target.clone());
        let loss = ctx.tape.value(l).data[0];
        let grads = if ov.is_none() {
            ctx.param_grads(&ctx.tape.backward(l))
        } else {
            Vec::new()
        };
        Ok((loss, grads))
    };
    check_gradients(&store, n, tolerance, seed ^ 2, false, &eval)
}
