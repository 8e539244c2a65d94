//! Lossy transform codec for 2-D measurements: 8×8 orthonormal DCT-II,
//! dead-zone uniform quantization, zig-zag scan and Exp-Golomb run-level
//! packing.
//!
//! Stream layout: height (16 bits), width (16 bits), min and max as f32
//! bit patterns (32 bits each), then per block `ue(nnz)` followed by
//! `nnz` pairs of `ue(run)` and `se(level)`. Values are normalized by the
//! stored range before transformation, so the reconstruction error is at
//! most `BLOCK · q · (max - min)` per sample.

use std::sync::OnceLock;

use icci_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::bitstream::BitStream;
use crate::error::{Result, ScError};

pub const BLOCK: usize = 8;
pub const HEADER_BITS: usize = 96;
const MAX_SAMPLES: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Quantization step on the normalized `[0, 1]` scale.
    pub q: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { q: 0.05 }
    }
}

impl CodecConfig {
    pub fn new(q: f64) -> Self {
        Self { q }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q > 0.0 && self.q.is_finite() {
            Ok(())
        } else {
            Err(ScError::InvalidConfig(format!("quantization step {} must be positive", self.q)))
        }
    }
}

fn dct_matrix() -> &'static [[f64; BLOCK]; BLOCK] {
    static M: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        let n = BLOCK as f64;
        for (k, row) in m.iter_mut().enumerate() {
            let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (i, v) in row.iter_mut().enumerate() {
                *v = alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        m
    })
}

/// Zig-zag scan order: `ZIGZAG[s]` is the row-major index of the s-th coefficient.
pub fn zigzag() -> &'static [usize; BLOCK * BLOCK] {
    static Z: OnceLock<[usize; BLOCK * BLOCK]> = OnceLock::new();
    Z.get_or_init(|| {
        let mut order = [0; BLOCK * BLOCK];
        let mut idx = 0;
        for d in 0..(2 * BLOCK - 1) {
            let lo = d.saturating_sub(BLOCK - 1);
            let hi = d.min(BLOCK - 1);
            let rows: Vec<usize> = if d % 2 == 0 { (lo..=hi).rev().collect() } else { (lo..=hi).collect() };
            for r in rows {
                order[idx] = r * BLOCK + (d - r);
                idx += 1;
            }
        }
        order
    })
}

/// Separable 2-D DCT-II of a row-major 8×8 block.
pub fn forward_dct(block: &[f64; BLOCK * BLOCK]) -> [f64; BLOCK * BLOCK] {
    let m = dct_matrix();
    let mut tmp = [0.0; BLOCK * BLOCK];
    for r in 0..BLOCK {
        for k in 0..BLOCK {
            tmp[r * BLOCK + k] = (0..BLOCK).map(|c| m[k][c] * block[r * BLOCK + c]).sum();
        }
    }
    let mut out = [0.0; BLOCK * BLOCK];
    for k in 0..BLOCK {
        for c in 0..BLOCK {
            out[k * BLOCK + c] = (0..BLOCK).map(|r| m[k][r] * tmp[r * BLOCK + c]).sum();
        }
    }
    out
}

pub fn inverse_dct(coef: &[f64; BLOCK * BLOCK]) -> [f64; BLOCK * BLOCK] {
    let m = dct_matrix();
    let mut tmp = [0.0; BLOCK * BLOCK];
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            tmp[r * BLOCK + c] = (0..BLOCK).map(|k| m[k][r] * coef[k * BLOCK + c]).sum();
        }
    }
    let mut out = [0.0; BLOCK * BLOCK];
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            out[r * BLOCK + c] = (0..BLOCK).map(|k| m[k][c] * tmp[r * BLOCK + k]).sum();
        }
    }
    out
}

/// Dead-zone quantizer index `sign(c) · floor(|c| / q)`.
pub fn quantize(c: f64, q: f64) -> i64 {
    let i = (c.abs() / q).floor() as i64;
    if c < 0.0 {
        -i
    } else {
        i
    }
}

/// Mid-point reconstruction `sign · (|idx| + 0.5) · q`; zero stays zero.
pub fn dequantize(idx: i64, q: f64) -> f64 {
    if idx == 0 {
        0.0
    } else {
        idx.signum() as f64 * (idx.unsigned_abs() as f64 + 0.5) * q
    }
}

/// Quantized coefficients of one normalized block, in row-major order.
pub fn quantize_block(block: &[f64; BLOCK * BLOCK], q: f64) -> [i64; BLOCK * BLOCK] {
    let c = forward_dct(block);
    let mut out = [0i64; BLOCK * BLOCK];
    for (o, v) in out.iter_mut().zip(c.iter()) {
        *o = quantize(*v, q);
    }
    out
}

fn measurement_dims(m: &Tensor) -> Result<(usize, usize)> {
    match *m.dims() {
        [h, w] if h > 0 && w > 0 && h <= u16::MAX as usize && w <= u16::MAX as usize => Ok((h, w)),
        _ => Err(ScError::InvalidConfig(format!("codec needs a 2-D measurement, got {:?}", m.dims()))),
    }
}

fn blocks(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(BLOCK), w.div_ceil(BLOCK))
}

pub fn codec_encode(m: &Tensor, cfg: &CodecConfig) -> Result<BitStream> {
    cfg.validate()?;
    let (h, w) = measurement_dims(m)?;
    let x = m.to_f64();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(icci_core::CoreError::NonFinite.into());
    }
    let (lo, hi) = m.min_max();
    let range = if hi > lo { (hi - lo) as f64 } else { 1.0 };
    let mut out = BitStream::new();
    out.push_bits(h as u64, 16);
    out.push_bits(w as u64, 16);
    out.push_bits(lo.to_bits() as u64, 32);
    out.push_bits(hi.to_bits() as u64, 32);
    let (bh, bw) = blocks(h, w);
    let zz = zigzag();
    for bi in 0..bh {
        for bj in 0..bw {
            let mut block = [0.0; BLOCK * BLOCK];
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    let i = (bi * BLOCK + r).min(h - 1);
                    let j = (bj * BLOCK + c).min(w - 1);
                    block[r * BLOCK + c] = (x[i * w + j] - lo as f64) / range;
                }
            }
            let qb = quantize_block(&block, cfg.q);
            let nnz = qb.iter().filter(|&&v| v != 0).count();
            out.push_ue(nnz as u64);
            let mut run = 0u64;
            for &pos in zz.iter() {
                let v = qb[pos];
                if v == 0 {
                    run += 1;
                } else {
                    out.push_ue(run);
                    out.push_se(v);
                    run = 0;
                }
            }
        }
    }
    Ok(out)
}

/// Header fields of an encoded measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecHeader {
    pub height: usize,
    pub width: usize,
    pub min: f32,
    pub max: f32,
}

pub fn read_header(b: &BitStream) -> Result<CodecHeader> {
    let mut r = b.reader();
    let bad = |m: &str| ScError::MalformedBitstream(m.to_string());
    let height = r.read_bits(16).ok_or_else(|| bad("truncated codec header"))? as usize;
    let width = r.read_bits(16).ok_or_else(|| bad("truncated codec header"))? as usize;
    let min = f32::from_bits(r.read_bits(32).ok_or_else(|| bad("truncated codec header"))? as u32);
    let max = f32::from_bits(r.read_bits(32).ok_or_else(|| bad("truncated codec header"))? as u32);
    if height == 0 || width == 0 || height * width > MAX_SAMPLES {
        return Err(bad(&format!("invalid dims {height}x{width}")));
    }
    let (bh, bw) = blocks(height, width);
    if bh * bw > r.remaining() {
        return Err(bad(&format!("{} blocks cannot fit in {} payload bits", bh * bw, r.remaining())));
    }
    if !min.is_finite() || !max.is_finite() || max < min {
        return Err(bad(&format!("invalid range [{min}, {max}]")));
    }
    Ok(CodecHeader { height, width, min, max })
}

/// Decodes a stream. A valid header is required (including at least one
/// payload bit per block); damage after it yields a best-effort image with undecodable blocks left at the range minimum.
pub fn codec_decode(b: &BitStream, cfg: &CodecConfig) -> Result<Tensor> {
    cfg.validate()?;
    let hdr = read_header(b)?;
    let (h, w) = (hdr.height, hdr.width);
    let range = if hdr.max > hdr.min { (hdr.max - hdr.min) as f64 } else { 1.0 };
    let mut r = b.reader();
    r.read_bits(HEADER_BITS as u32);
    let (bh, bw) = blocks(h, w);
    let zz = zigzag();
    let mut out = vec![0.0f64; h * w];
    let mut intact = true;
    for bi in 0..bh {
        for bj in 0..bw {
            let mut coef = [0.0; BLOCK * BLOCK];
            if intact {
                intact = read_block(&mut r, zz, cfg.q, &mut coef).is_some();
            }
            let px = inverse_dct(&coef);
            for rr in 0..BLOCK {
                for cc in 0..BLOCK {
                    let (i, j) = (bi * BLOCK + rr, bj * BLOCK + cc);
                    if i < h && j < w {
                        out[i * w + j] = px[rr * BLOCK + cc];
                    }
                }
            }
        }
    }
    let lo = hdr.min as f64;
    let hi = hdr.max as f64;
    for v in &mut out {
        *v = (lo + *v * range).clamp(lo, hi);
    }
    Ok(Tensor::from_f64(vec![h, w], &out)?)
}

fn read_block(
    r: &mut crate::bitstream::BitReader<'_>,
    zz: &[usize; BLOCK * BLOCK],
    q: f64,
    coef: &mut [f64; BLOCK * BLOCK],
) -> Option<()> {
    let nnz = r.read_ue()? as usize;
    if nnz > BLOCK * BLOCK {
        return None;
    }
    let mut pos = 0usize;
    for _ in 0..nnz {
        pos = pos.checked_add(r.read_ue()? as usize)?;
        let level = r.read_se()?;
        if pos >= BLOCK * BLOCK || level == 0 {
            return None;
        }
        coef[zz[pos]] = dequantize(level, q);
        pos += 1;
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zigzag_starts_like_jpeg() {
        assert_eq!(&zigzag()[..10], &[0, 1, 8, 16, 9, 2, 3, 10, 17, 24]);
        let mut seen = zigzag().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn dct_is_orthonormal() {
        let mut b = [0.0; 64];
        for (i, v) in b.iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 / 7.0;
        }
        let c = forward_dct(&b);
        let e1: f64 = b.iter().map(|v| v * v).sum();
        let e2: f64 = c.iter().map(|v| v * v).sum();
        assert!((e1 - e2).abs() < 1e-9);
        let back = inverse_dct(&c);
        for (x, y) in b.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_zone_quantizer() {
        assert_eq!(quantize(0.09, 0.1), 0);
        assert_eq!(quantize(-0.25, 0.1), -2);
        assert!((dequantize(-2, 0.1) + 0.25).abs() < 1e-12);
        assert_eq!(dequantize(0, 0.1), 0.0);
    }
}
