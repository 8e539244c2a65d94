//! Network building blocks.

use crate::error::{ModelError, Result};
use crate::layers::{Ctx, LEAKY_SLOPE};
use crate::tape::Var;

/// Optional parts of a block, switched off for purely linear test networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockFlags {
    pub batch_norm: bool,
    pub activations: bool,
}

impl Default for BlockFlags {
    fn default() -> Self {
        Self {
            batch_norm: true,
            activations: true,
        }
    }
}

fn channels(ctx: &Ctx, x: Var) -> usize {
    ctx.tape.shape(x)[1]
}

fn expect_channels(ctx: &Ctx, x: Var, expected: usize) -> Result<()> {
    let shape = ctx.tape.shape(x);
    if shape[1] != expected {
        return Err(ModelError::DimMismatch {
            expected: vec![shape[0], expected],
            actual: shape.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn relu(ctx: &mut Ctx, x: Var, flags: BlockFlags) -> Var {
    if flags.activations {
        ctx.tape.relu(x)
    } else {
        x
    }
}

pub(crate) fn leaky(ctx: &mut Ctx, x: Var, flags: BlockFlags) -> Var {
    if flags.activations {
        ctx.tape.leaky_relu(x, LEAKY_SLOPE)
    } else {
        x
    }
}

fn bn(ctx: &mut Ctx, name: &str, x: Var, flags: BlockFlags) -> Var {
    if flags.batch_norm {
        ctx.batch_norm(name, x)
    } else {
        x
    }
}

/// Four parallel same-padded convolutions (kernels 1, 3, 5, 7), each with
/// `width / 4` outputs, concatenated.
pub fn feature_projection(ctx: &mut Ctx, name: &str, x: Var, width: usize) -> Result<Var> {
    if width < 4 || !width.is_multiple_of(4) {
        return Err(ModelError::InvalidArch(format!("projection width {width}")));
    }
    let parts: Vec<Var> = [1, 3, 5, 7]
        .iter()
        .map(|&k| ctx.conv2d(&format!("{name}.k{k}"), x, width / 4, k, 1))
        .collect();
    Ok(ctx.tape.concat(&parts))
}

/// Triple residual block: three chained `conv-BN-ReLU-conv-BN` branches. The
/// first two add their own input; the last adds the block input.
pub fn trb_forward(ctx: &mut Ctx, name: &str, x: Var, width: usize, flags: BlockFlags) -> Result<Var> {
    expect_channels(ctx, x, width)?;
    let mut h = x;
    for i in 0..3 {
        let p = format!("{name}.r{i}");
        let a = ctx.conv2d(&format!("{p}.c0"), h, width, 3, 1);
        let a = bn(ctx, &format!("{p}.bn0"), a, flags);
        let a = relu(ctx, a, flags);
        let a = ctx.conv2d(&format!("{p}.c1"), a, width, 3, 1);
        let a = bn(ctx, &format!("{p}.bn1"), a, flags);
        h = ctx.tape.add(if i < 2 { h } else { x }, a);
    }
    Ok(h)
}

/// Channel attention (squeeze-excitation with a 4x reduction) followed by a
/// spatial gate computed from per-pixel channel mean and max.
pub fn ssa_forward(ctx: &mut Ctx, name: &str, x: Var) -> Result<Var> {
    let c = channels(ctx, x);
    if c < 4 {
        return Err(ModelError::InvalidArch(format!("attention needs >= 4 channels, got {c}")));
    }
    let s = ctx.tape.global_avg_pool(x);
    let s = ctx.linear(&format!("{name}.fc0"), s, c / 4);
    let s = ctx.tape.relu(s);
    let s = ctx.linear(&format!("{name}.fc1"), s, c);
    let s = ctx.tape.sigmoid(s);
    let y = ctx.tape.scale_channels(x, s);
    let m = ctx.tape.channel_mean_max(y);
    let g = ctx.conv2d(&format!("{name}.spatial"), m, 1, 7, 1);
    let g = ctx.tape.sigmoid(g);
    Ok(ctx.tape.scale_spatial(y, g))
}

/// Per-channel importance gain in (0, 1) from pooled features.
pub fn ial_forward(ctx: &mut Ctx, name: &str, x: Var) -> Var {
    let c = channels(ctx, x);
    let s = ctx.tape.global_avg_pool(x);
    let s = ctx.linear(&format!("{name}.fc"), s, c);
    let w = ctx.tape.sigmoid(s);
    ctx.tape.scale_channels(x, w)
}

/// Residual dense block: three densely connected conv layers with growth
/// `width / 2`, a 1x1 fusion back to `width` and a residual skip.
pub fn res_dense_block(ctx: &mut Ctx, name: &str, x: Var, width: usize, flags: BlockFlags) -> Result<Var> {
    expect_channels(ctx, x, width)?;
    let growth = (width / 2).max(1);
    let mut feats = vec![x];
    for i in 0..3 {
        let inp = if feats.len() == 1 { x } else { ctx.tape.concat(&feats) };
        let f = ctx.conv2d(&format!("{name}.d{i}"), inp, growth, 3, 1);
        feats.push(leaky(ctx, f, flags));
    }
    let all = ctx.tape.concat(&feats);
    let fused = ctx.conv2d(&format!("{name}.fuse"), all, width, 1, 1);
    Ok(ctx.tape.add(x, fused))
}

/// Doubles spatial resolution: conv to `4·width` channels, then pixel shuffle.
pub fn upsample(ctx: &mut Ctx, name: &str, x: Var, width: usize) -> Var {
    let y = ctx.conv2d(name, x, 4 * width, 3, 1);
    ctx.tape.pixel_shuffle(y, 2)
}
