//! ICCI encoder and interpreter graphs for the spectral and video variants.

use icci_core::channel::{Domain, SymbolStream};
use icci_core::sensing::Mask;
use icci_core::Tensor;

use crate::arch::{ArchConfig, Variant};
use crate::array::Arr;
use crate::blocks::{
    feature_projection, ial_forward, leaky, relu, res_dense_block, ssa_forward, trb_forward, upsample, BlockFlags,
};
use crate::error::{ModelError, Result};
use crate::layers::Ctx;
use crate::params::{NetworkParams, ParamStore};
use crate::tape::Var;

fn flags(arch: &ArchConfig) -> BlockFlags {
    BlockFlags {
        batch_norm: arch.batch_norm,
        activations: arch.activations,
    }
}

/// Mean square of each transmitted real value.
pub fn component_power(domain: Domain) -> f64 {
    match domain {
        Domain::Real => 1.0,
        Domain::Complex => 0.5,
    }
}

/// Encoder input planes for one measurement: the measurement, scaled by
/// `1 / bands` and zero-padded to the padded width, followed by the mask
/// planes when the architecture takes them. Layout `C × H × W_pad`.
pub fn encoder_planes(arch: &ArchConfig, measurement: &Tensor, mask: &Mask) -> Result<Vec<f64>> {
    let (h, wm, wp) = (arch.height, arch.meas_width, arch.padded_width());
    if measurement.dims() != [h, wm] {
        return Err(ModelError::DimMismatch {
            expected: vec![h, wm],
            actual: measurement.dims().to_vec(),
        });
    }
    let scale = 1.0 / arch.bands as f64;
    let mut out = vec![0.0; arch.encoder_inputs() * h * wp];
    for i in 0..h {
        for j in 0..wm {
            out[i * wp + j] = measurement.data()[i * wm + j] as f64 * scale;
        }
    }
    if arch.include_mask {
        let planes = mask_planes(arch, mask, wp)?;
        out[h * wp..].copy_from_slice(&planes);
    }
    Ok(out)
}

/// Mask planes `M × H × width` (one plane for spectral, one per frame for
/// video), zero beyond the mask's own width.
pub fn mask_planes(arch: &ArchConfig, mask: &Mask, width: usize) -> Result<Vec<f64>> {
    let h = arch.height;
    let m = match arch.variant {
        Variant::Spectral => 1,
        Variant::Video => arch.bands,
    };
    if mask.height() != h || mask.width() != arch.width || mask.slices() != m {
        return Err(ModelError::DimMismatch {
            expected: vec![h, arch.width, m],
            actual: vec![mask.height(), mask.width(), mask.slices()],
        });
    }
    let mut out = vec![0.0; m * h * width];
    for s in 0..m {
        for i in 0..h {
            for j in 0..arch.width.min(width) {
                out[(s * h + i) * width + j] = mask.at(i, j, s) as f64;
            }
        }
    }
    Ok(out)
}

/// Encoder graph: `N × C_in × H × W_pad` planes to `N × L` power-normalized
/// symbols (row-major over rows, cols, channels).
pub fn encode_graph(ctx: &mut Ctx, arch: &ArchConfig, input: Var) -> Result<Var> {
    let f = flags(arch);
    let bw = arch.base_width;
    let expected = [arch.encoder_inputs(), arch.height, arch.padded_width()];
    if ctx.tape.shape(input)[1..] != expected {
        return Err(ModelError::DimMismatch {
            expected: expected.to_vec(),
            actual: ctx.tape.shape(input).to_vec(),
        });
    }
    let mut x = match arch.variant {
        Variant::Spectral => feature_projection(ctx, "enc.proj", input, bw)?,
        Variant::Video => {
            let y = ctx.conv2d("enc.init", input, bw, 3, 1);
            leaky(ctx, y, f)
        }
    };
    for s in 0..arch.k {
        let p = format!("enc.s{s}");
        x = ctx.conv2d(&format!("{p}.down"), x, bw, 3, 2);
        x = match arch.variant {
            Variant::Spectral => relu(ctx, x, f),
            Variant::Video => leaky(ctx, x, f),
        };
        for b in 0..arch.trb_count {
            x = match arch.variant {
                Variant::Spectral => trb_forward(ctx, &format!("{p}.trb{b}"), x, bw, f)?,
                Variant::Video => res_dense_block(ctx, &format!("{p}.rdb{b}"), x, bw, f)?,
            };
        }
    }
    if arch.ssa {
        x = ssa_forward(ctx, "enc.ssa", x)?;
    }
    x = ctx.conv2d("enc.out", x, arch.c_out, 1, 1);
    if arch.ial {
        x = ial_forward(ctx, "enc.ial", x);
    }
    let x = ctx.tape.to_nhwc(x);
    let n = ctx.tape.shape(x)[0];
    let x = ctx.tape.reshape(x, vec![n, arch.latent_len()]);
    Ok(ctx.tape.normalize_power(x, component_power(arch.domain)))
}

/// Interpreter graph: `N × L` received values to `N × H × W × C` cubes.
/// `masks` (`N × B × H × W`) is required by the video variant.
pub fn interpret_graph(ctx: &mut Ctx, arch: &ArchConfig, symbols: Var, masks: Option<Var>) -> Result<Var> {
    let f = flags(arch);
    let bw = arch.base_width;
    let shape = ctx.tape.shape(symbols).to_vec();
    if shape.len() != 2 || shape[1] != arch.latent_len() {
        return Err(ModelError::LengthMismatch {
            expected: arch.latent_len(),
            actual: shape.get(1).copied().unwrap_or(0),
        });
    }
    let n = shape[0];
    let (rows, cols) = arch.latent_dims();
    let x = ctx.tape.reshape(symbols, vec![n, rows, cols, arch.c_out]);
    let x = ctx.tape.from_nhwc(x);
    let mut x = ctx.conv2d("dec.in", x, bw, 3, 1);
    x = match arch.variant {
        Variant::Spectral => relu(ctx, x, f),
        Variant::Video => leaky(ctx, x, f),
    };
    for b in 0..arch.trb_count {
        x = match arch.variant {
            Variant::Spectral => {
                let y = trb_forward(ctx, &format!("dec.trb{b}"), x, bw, f)?;
                if arch.ssa {
                    ssa_forward(ctx, &format!("dec.ssa{b}"), y)?
                } else {
                    y
                }
            }
            Variant::Video => res_dense_block(ctx, &format!("dec.rdb{b}"), x, bw, f)?,
        };
    }
    for s in 0..arch.k {
        x = upsample(ctx, &format!("dec.up{s}"), x, bw);
        x = match arch.variant {
            Variant::Spectral => relu(ctx, x, f),
            Variant::Video => leaky(ctx, x, f),
        };
    }
    let x = ctx.tape.crop_width(x, arch.width);
    match arch.variant {
        Variant::Spectral => {
            let x = ctx.conv2d("dec.out", x, arch.bands, 3, 1);
            Ok(ctx.tape.to_nhwc(x))
        }
        Variant::Video => {
            let masks = masks.ok_or_else(|| ModelError::InvalidArch("video interpreter needs masks".into()))?;
            let b = arch.bands;
            let f3 = arch.conv3d_features;
            let (h, w) = (arch.height, arch.width);
            let x = ctx.tape.concat(&[x, masks]);
            let x = ctx.conv2d("dec.init", x, f3 * b, 3, 1);
            let x = leaky(ctx, x, f);
            let x = ctx.tape.reshape(x, vec![n, f3, b, h, w]);
            let x = ctx.conv3d("dec.c3d0", x, f3, 3);
            let x = leaky(ctx, x, f);
            let x = ctx.conv3d("dec.c3d1", x, 1, 3);
            let x = ctx.tape.reshape(x, vec![n, b, h, w]);
            Ok(ctx.tape.to_nhwc(x))
        }
    }
}

/// Mask constant for the video interpreter: `N` copies of the frame masks.
pub fn interpreter_masks(arch: &ArchConfig, mask: &Mask, n: usize) -> Result<Option<Arr>> {
    if arch.variant != Variant::Video {
        return Ok(None);
    }
    let planes = mask_planes(arch, mask, arch.width)?;
    let mut data = Vec::with_capacity(n * planes.len());
    for _ in 0..n {
        data.extend_from_slice(&planes);
    }
    Ok(Some(Arr::new(vec![n, arch.bands, arch.height, arch.width], data)))
}

impl NetworkParams {
    /// Freshly initialized parameters (He-normal convolutions, zero biases,
    /// identity batch norms).
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        {
            let mut ctx = Ctx::initializing(&mut store, seed);
            let n = 2;
            let planes = arch.encoder_inputs() * arch.height * arch.padded_width();
            let input = ctx.constant(Arr::new(
                vec![n, arch.encoder_inputs(), arch.height, arch.padded_width()],
                (0..n * planes).map(|i| (i % 7) as f64 * 0.1 + 0.05).collect(),
            ));
            let s = encode_graph(&mut ctx, arch, input)?;
            let masks = match arch.variant {
                Variant::Video => Some(ctx.constant(Arr::zeros(&[n, arch.bands, arch.height, arch.width]))),
                Variant::Spectral => None,
            };
            interpret_graph(&mut ctx, arch, s, masks)?;
        }
        Ok(Self {
            arch: arch.clone(),
            store,
        })
    }
}

/// Maps one measurement to a unit-power symbol stream.
pub fn encode(measurement: &Tensor, mask: &Mask, params: &NetworkParams) -> Result<SymbolStream> {
    let arch = &params.arch;
    let planes = encoder_planes(arch, measurement, mask)?;
    let mut ctx = Ctx::new(&params.store, false, false);
    let input = ctx.constant(Arr::new(
        vec![1, arch.encoder_inputs(), arch.height, arch.padded_width()],
        planes,
    ));
    let s = encode_graph(&mut ctx, arch, input)?;
    Ok(SymbolStream::from_reals(&ctx.tape.value(s).data, arch.domain))
}

/// Recovers a cube estimate (`H × W × C`) from received symbols.
pub fn interpret(symbols: &SymbolStream, mask: &Mask, params: &NetworkParams) -> Result<Tensor> {
    let arch = &params.arch;
    if symbols.len() != arch.symbol_count() || symbols.domain() != arch.domain {
        return Err(ModelError::LengthMismatch {
            expected: arch.symbol_count(),
            actual: symbols.len(),
        });
    }
    let reals = symbols.to_reals();
    let mut ctx = Ctx::new(&params.store, false, false);
    let s = ctx.constant(Arr::new(vec![1, reals.len()], reals));
    let masks = interpreter_masks(arch, mask, 1)?.map(|m| ctx.constant(m));
    let out = interpret_graph(&mut ctx, arch, s, masks)?;
    Ok(Tensor::from_f64(vec![arch.height, arch.width, arch.bands], &ctx.tape.value(out).data)?)
}
