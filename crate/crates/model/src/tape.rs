//! Reverse-mode automatic differentiation over [`Arr`] values.
//!
//! Every forward op appends a node holding its value and whatever it needs
//! for the backward pass. Image tensors are `N × C × H × W`; 3-D volumes are
//! `N × C × D × H × W`.

use crate::array::{gemm, Arr, Conv2dGeom, Conv3dGeom};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
        cols: Vec<f64>,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv3dGeom,
        cols: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Prelu {
        x: Var,
        slope: Var,
    },
    Sigmoid(Var),
    Add(Var, Var),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    ScaleSpatial {
        x: Var,
        s: Var,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    ChannelMeanMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        channels: Vec<usize>,
    },
    PixelShuffle(Var, usize),
    CropWidth(Var, usize),
    PadWidth(Var, usize),
    Reshape(Var),
    ToNhwc(Var),
    FromNhwc(Var),
    NormalizePower {
        x: Var,
        inv_rms: Vec<f64>,
    },
    Mse {
        x: Var,
        target: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Arr,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const BN_EPS: f64 = 1e-5;

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Arr, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Arr) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch {xs:?} vs {ws:?}");
        let geom = Conv2dGeom {
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        let (n, cout) = (xs[0], ws[0]);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let (k, npix) = (geom.k(), oh * ow);
        let in_sz = geom.cin * geom.h * geom.w;
        let mut cols = vec![0.0; n * k * npix];
        let mut out = vec![0.0; n * cout * npix];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            for s in 0..n {
                let col = &mut cols[s * k * npix..(s + 1) * k * npix];
                geom.im2col(&xv[s * in_sz..(s + 1) * in_sz], col);
                gemm(cout, npix, k, wv, false, col, false, 0.0, &mut out[s * cout * npix..(s + 1) * cout * npix]);
            }
            if let Some(b) = b {
                let bv = &self.value(b).data;
                for s in 0..n {
                    for c in 0..cout {
                        for o in &mut out[(s * cout + c) * npix..(s * cout + c + 1) * npix] {
                            *o += bv[c];
                        }
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            Arr::new(vec![n, cout, oh, ow], out),
            Op::Conv2d { x, w, b, geom, cols },
            &inputs,
        )
    }

    /// Stride-1 convolution with cubic kernel and same padding.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 5, "conv3d input must be NCDHW");
        assert_eq!(xs[1], ws[1]);
        let geom = Conv3dGeom {
            cin: xs[1],
            d: xs[2],
            h: xs[3],
            w: xs[4],
            k: ws[2],
        };
        let (n, cout) = (xs[0], ws[0]);
        let (k, npix) = (geom.kvol(), geom.npix());
        let in_sz = geom.cin * npix;
        let mut cols = vec![0.0; n * k * npix];
        let mut out = vec![0.0; n * cout * npix];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            for s in 0..n {
                let col = &mut cols[s * k * npix..(s + 1) * k * npix];
                geom.im2col(&xv[s * in_sz..(s + 1) * in_sz], col);
                gemm(cout, npix, k, wv, false, col, false, 0.0, &mut out[s * cout * npix..(s + 1) * cout * npix]);
            }
            if let Some(b) = b {
                let bv = &self.value(b).data;
                for s in 0..n {
                    for c in 0..cout {
                        for o in &mut out[(s * cout + c) * npix..(s * cout + c + 1) * npix] {
                            *o += bv[c];
                        }
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            Arr::new(vec![n, cout, geom.d, geom.h, geom.w], out),
            Op::Conv3d { x, w, b, geom, cols },
            &inputs,
        )
    }

    /// Per-channel normalization of an `N × C × ...` tensor. With
    /// `running = None` batch statistics are used and returned as
    /// `(mean, biased variance)`; otherwise the given running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> (Var, Option<(Vec<f64>, Vec<f64>)>) {
        let xs = self.shape(x).to_vec();
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let m = (n * inner) as f64;
        let xv = &self.value(x).data;
        let (mean, var) = match running {
            Some((rm, rv)) => (rm.to_vec(), rv.to_vec()),
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xv[(b * c + ch) * inner..(b * c + ch + 1) * inner].iter().sum::<f64>();
                    }
                    let mu = s / m;
                    let mut q = 0.0;
                    for b in 0..n {
                        q += xv[(b * c + ch) * inner..(b * c + ch + 1) * inner]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gv = &self.value(gamma).data;
        let bv = &self.value(beta).data;
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                for i in r {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let batch_stats = running.is_none();
        let v = self.push(
            Arr::new(xs, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        );
        (v, batch_stats.then_some((mean, var)))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let out = Arr::new(v.shape.clone(), v.data.iter().map(|&a| f(a)).collect());
        self.push(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    /// Parametric ReLU with one learned slope per feature of an `N × F` input
    /// (or a single shared slope when `slope` has one entry).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let xv = self.value(x);
        let a = &self.value(slope).data;
        let f = *xv.shape.last().unwrap();
        let out: Vec<f64> = xv
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = if a.len() == 1 { a[0] } else { a[i % f] };
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            })
            .collect();
        let shape = xv.shape.clone();
        self.push(Arr::new(shape, out), Op::Prelu { x, slope }, &[x, slope])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let av = &self.value(a).data;
        let bv = &self.value(b).data;
        let out: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Arr::new(shape, out), Op::Add(a, b), &[a, b])
    }

    /// `x + c` for a constant `c`.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), c.len());
        let out = Arr::new(xv.shape.clone(), xv.data.iter().zip(c).map(|(a, b)| a + b).collect());
        self.push(out, Op::AddConst(x), &[x])
    }

    /// `x ⊙ c` for a constant `c`.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), c.len());
        let out = Arr::new(xv.shape.clone(), xv.data.iter().zip(&c).map(|(a, b)| a * b).collect());
        self.push(out, Op::MulConst(x, c), &[x])
    }

    /// `x[n, c, ...] * s[n, c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, c) = (xs[0], xs[1]);
        assert_eq!(self.shape(s), &[n, c]);
        let inner: usize = xs[2..].iter().product();
        let xv = &self.value(x).data;
        let sv = &self.value(s).data;
        let out: Vec<f64> = xv.iter().enumerate().map(|(i, v)| v * sv[i / inner]).collect();
        self.push(Arr::new(xs, out), Op::ScaleChannels { x, s }, &[x, s])
    }

    /// `x[n, c, h, w] * s[n, 0, h, w]`.
    pub fn scale_spatial(&mut self, x: Var, s: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        assert_eq!(self.value(s).len(), n * inner);
        let xv = &self.value(x).data;
        let sv = &self.value(s).data;
        let out: Vec<f64> = xv
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let b = i / (c * inner);
                v * sv[b * inner + i % inner]
            })
            .collect();
        self.push(Arr::new(xs, out), Op::ScaleSpatial { x, s }, &[x, s])
    }

    /// Mean over all non-leading axes after the channel axis: `N × C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let xv = &self.value(x).data;
        let out: Vec<f64> = xv.chunks(inner).map(|ch| ch.iter().sum::<f64>() / inner as f64).collect();
        self.push(Arr::new(vec![n, c], out), Op::GlobalAvgPool(x), &[x])
    }

    /// `x · wᵀ + b` with `x: N × in`, `w: out × in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 2);
        assert_eq!(xs[1], ws[1], "linear width mismatch");
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * fout];
        gemm(n, fout, fin, &self.value(x).data, false, &self.value(w).data, true, 0.0, &mut out);
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for row in out.chunks_mut(fout) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Arr::new(vec![n, fout], out), Op::Linear { x, w, b }, &inputs)
    }

    /// Per-pixel channel mean and max: `N × 2 × H × W`.
    pub fn channel_mean_max(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let xv = &self.value(x).data;
        let mut out = vec![0.0; n * 2 * inner];
        let mut argmax = vec![0; n * inner];
        for b in 0..n {
            for p in 0..inner {
                let mut sum = 0.0;
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for ch in 0..c {
                    let v = xv[(b * c + ch) * inner + p];
                    sum += v;
                    if v > best {
                        best = v;
                        arg = ch;
                    }
                }
                out[b * 2 * inner + p] = sum / c as f64;
                out[(b * 2 + 1) * inner + p] = best;
                argmax[b * inner + p] = arg;
            }
        }
        let mut shape = xs.clone();
        shape[1] = 2;
        self.push(Arr::new(shape, out), Op::ChannelMeanMax { x, argmax }, &[x])
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.shape(parts[0]).to_vec();
        let n = first[0];
        let inner: usize = first[2..].iter().product();
        let channels: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = self.shape(*p);
                assert_eq!(s[0], n);
                assert_eq!(s[2..], first[2..], "concat spatial mismatch");
                s[1]
            })
            .collect();
        let total: usize = channels.iter().sum();
        let mut out = Vec::with_capacity(n * total * inner);
        for b in 0..n {
            for (p, &c) in parts.iter().zip(&channels) {
                let v = &self.value(*p).data;
                out.extend_from_slice(&v[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = first;
        shape[1] = total;
        self.push(
            Arr::new(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                channels,
            },
            parts,
        )
    }

    /// `N × (C·r²) × H × W → N × C × (H·r) × (W·r)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, cr, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert_eq!(cr % (r * r), 0);
        let c = cr / (r * r);
        let xv = &self.value(x).data;
        let mut out = vec![0.0; xv.len()];
        for (src, &v) in xv.iter().enumerate() {
            out[shuffle_index(src, n, c, h, w, r)] = v;
        }
        let _ = n;
        self.push(Arr::new(vec![n, c, h * r, w * r], out), Op::PixelShuffle(x, r), &[x])
    }

    /// Keeps the first `width` columns.
    pub fn crop_width(&mut self, x: Var, width: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let w0 = *xs.last().unwrap();
        assert!(width <= w0);
        let xv = &self.value(x).data;
        let out: Vec<f64> = xv.chunks(w0).flat_map(|row| row[..width].iter().copied()).collect();
        let mut shape = xs;
        *shape.last_mut().unwrap() = width;
        self.push(Arr::new(shape, out), Op::CropWidth(x, w0), &[x])
    }

    /// Appends `extra` zero columns.
    pub fn pad_width(&mut self, x: Var, extra: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let w0 = *xs.last().unwrap();
        let xv = &self.value(x).data;
        let out: Vec<f64> = xv
            .chunks(w0)
            .flat_map(|row| row.iter().copied().chain(std::iter::repeat_n(0.0, extra)))
            .collect();
        let mut shape = xs;
        *shape.last_mut().unwrap() = w0 + extra;
        self.push(Arr::new(shape, out), Op::PadWidth(x, extra), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let v = self.value(x);
        assert_eq!(shape.iter().product::<usize>(), v.len());
        let out = Arr::new(shape, v.data.clone());
        self.push(out, Op::Reshape(x), &[x])
    }

    /// `N × C × H × W → N × H × W × C`.
    pub fn to_nhwc(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = &self.value(x).data;
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                for p in 0..h * w {
                    out[(b * h * w + p) * c + ch] = xv[(b * c + ch) * h * w + p];
                }
            }
        }
        self.push(Arr::new(vec![n, h, w, c], out), Op::ToNhwc(x), &[x])
    }

    /// `N × H × W × C → N × C × H × W`.
    pub fn from_nhwc(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = &self.value(x).data;
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                for p in 0..h * w {
                    out[(b * c + ch) * h * w + p] = xv[(b * h * w + p) * c + ch];
                }
            }
        }
        self.push(Arr::new(vec![n, c, h, w], out), Op::FromNhwc(x), &[x])
    }

    /// Scales each row of an `N × L` tensor so its mean square is `target`.
    pub fn normalize_power(&mut self, x: Var, target: f64) -> Var {
        let xs = self.shape(x).to_vec();
        let l = xs[1];
        let xv = &self.value(x).data;
        let mut inv_rms = Vec::with_capacity(xs[0]);
        let mut out = vec![0.0; xv.len()];
        for (row, orow) in xv.chunks(l).zip(out.chunks_mut(l)) {
            let p = row.iter().map(|v| v * v).sum::<f64>() / l as f64;
            let k = (target / p.max(f64::MIN_POSITIVE)).sqrt();
            for (o, v) in orow.iter_mut().zip(row) {
                *o = v * k;
            }
            inv_rms.push(k);
        }
        self.push(Arr::new(xs, out), Op::NormalizePower { x, inv_rms }, &[x])
    }

    /// Mean squared error against a constant target (a scalar node).
    pub fn mse(&mut self, x: Var, target: Vec<f64>) -> Var {
        let xv = &self.value(x).data;
        assert_eq!(xv.len(), target.len(), "mse size mismatch");
        let loss = xv.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / xv.len() as f64;
        self.push(Arr::scalar(loss), Op::Mse { x, target }, &[x])
    }

    /// `Σ x ⊙ weights` (a scalar node).
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let xv = &self.value(x).data;
        assert_eq!(xv.len(), weights.len());
        let s = xv.iter().zip(&weights).map(|(a, b)| a * b).sum();
        self.push(Arr::scalar(s), Op::WeightedSum { x, weights }, &[x])
    }

    /// Back-propagates from scalar `root`; returns gradients indexed by node
    /// (absent for nodes that do not need one).
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let n = self.shape(*x)[0];
                let cout = self.shape(*w)[0];
                let (k, npix) = (geom.k(), geom.out_h() * geom.out_w());
                let in_sz = geom.cin * geom.h * geom.w;
                if self.wants(*w) {
                    let dw = acc(grads, *w, cout * k);
                    for s in 0..n {
                        gemm(
                            cout,
                            k,
                            npix,
                            &g[s * cout * npix..(s + 1) * cout * npix],
                            false,
                            &cols[s * k * npix..(s + 1) * k * npix],
                            true,
                            1.0,
                            dw,
                        );
                    }
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let db = acc(grads, *b, cout);
                        for s in 0..n {
                            for c in 0..cout {
                                db[c] += g[(s * cout + c) * npix..(s * cout + c + 1) * npix].iter().sum::<f64>();
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    let wv = &self.value(*w).data;
                    let mut dcol = vec![0.0; k * npix];
                    let dx = acc(grads, *x, n * in_sz);
                    for s in 0..n {
                        gemm(k, npix, cout, wv, true, &g[s * cout * npix..(s + 1) * cout * npix], false, 0.0, &mut dcol);
                        geom.col2im(&dcol, &mut dx[s * in_sz..(s + 1) * in_sz]);
                    }
                }
            }
            Op::Conv3d { x, w, b, geom, cols } => {
                let n = self.shape(*x)[0];
                let cout = self.shape(*w)[0];
                let (k, npix) = (geom.kvol(), geom.npix());
                let in_sz = geom.cin * npix;
                if self.wants(*w) {
                    let dw = acc(grads, *w, cout * k);
                    for s in 0..n {
                        gemm(
                            cout,
                            k,
                            npix,
                            &g[s * cout * npix..(s + 1) * cout * npix],
                            false,
                            &cols[s * k * npix..(s + 1) * k * npix],
                            true,
                            1.0,
                            dw,
                        );
                    }
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let db = acc(grads, *b, cout);
                        for s in 0..n {
                            for c in 0..cout {
                                db[c] += g[(s * cout + c) * npix..(s * cout + c + 1) * npix].iter().sum::<f64>();
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    let wv = &self.value(*w).data;
                    let mut dcol = vec![0.0; k * npix];
                    let dx = acc(grads, *x, n * in_sz);
                    for s in 0..n {
                        gemm(k, npix, cout, wv, true, &g[s * cout * npix..(s + 1) * cout * npix], false, 0.0, &mut dcol);
                        geom.col2im(&dcol, &mut dx[s * in_sz..(s + 1) * in_sz]);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.shape(*x);
                let (n, c) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let m = (n * inner) as f64;
                let gv = &self.value(*gamma).data;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if self.wants(*gamma) {
                    let d = acc(grads, *gamma, c);
                    for ch in 0..c {
                        d[ch] += sum_gx[ch];
                    }
                }
                if self.wants(*beta) {
                    let d = acc(grads, *beta, c);
                    for ch in 0..c {
                        d[ch] += sum_g[ch];
                    }
                }
                if self.wants(*x) {
                    let dx = acc(grads, *x, g.len());
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gv[ch] * inv_std[ch];
                            for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                                dx[i] += if *batch_stats {
                                    k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                let dx = acc(grads, *x, g.len());
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        dx[i] += g[i];
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = &self.value(*x).data;
                let dx = acc(grads, *x, g.len());
                for i in 0..g.len() {
                    dx[i] += if xv[i] > 0.0 { g[i] } else { slope * g[i] };
                }
            }
            Op::Prelu { x, slope } => {
                let xv = &self.value(*x).data;
                let a = &self.value(*slope).data;
                let f = *self.shape(*x).last().unwrap();
                let idx = |i: usize| if a.len() == 1 { 0 } else { i % f };
                if self.wants(*slope) {
                    let da = acc(grads, *slope, a.len());
                    for i in 0..g.len() {
                        if xv[i] <= 0.0 {
                            da[idx(i)] += g[i] * xv[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let dx = acc(grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += if xv[i] > 0.0 { g[i] } else { a[idx(i)] * g[i] };
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value.data;
                let dx = acc(grads, *x, g.len());
                for i in 0..g.len() {
                    dx[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        let d = acc(grads, *v, g.len());
                        for i in 0..g.len() {
                            d[i] += g[i];
                        }
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                let d = acc(grads, *x, g.len());
                for i in 0..g.len() {
                    d[i] += g[i];
                }
            }
            Op::MulConst(x, c) => {
                let d = acc(grads, *x, g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * c[i];
                }
            }
            Op::ScaleChannels { x, s } => {
                let xs = self.shape(*x);
                let inner: usize = xs[2..].iter().product();
                let xv = &self.value(*x).data;
                let sv = &self.value(*s).data;
                if self.wants(*x) {
                    let dx = acc(grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * sv[i / inner];
                    }
                }
                if self.wants(*s) {
                    let ds = acc(grads, *s, sv.len());
                    for i in 0..g.len() {
                        ds[i / inner] += g[i] * xv[i];
                    }
                }
            }
            Op::ScaleSpatial { x, s } => {
                let xs = self.shape(*x);
                let c = xs[1];
                let inner: usize = xs[2..].iter().product();
                let xv = &self.value(*x).data;
                let sv = &self.value(*s).data;
                let sidx = |i: usize| (i / (c * inner)) * inner + i % inner;
                if self.wants(*x) {
                    let dx = acc(grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * sv[sidx(i)];
                    }
                }
                if self.wants(*s) {
                    let ds = acc(grads, *s, sv.len());
                    for i in 0..g.len() {
                        ds[sidx(i)] += g[i] * xv[i];
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let inner: usize = xs[2..].iter().product();
                let total: usize = xs.iter().product();
                let dx = acc(grads, *x, total);
                for i in 0..total {
                    dx[i] += g[i / inner] / inner as f64;
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, fin) = (xs[0], xs[1]);
                let fout = self.shape(*w)[0];
                if self.wants(*w) {
                    let dw = acc(grads, *w, fout * fin);
                    gemm(fout, fin, n, g, true, &self.value(*x).data, false, 1.0, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let db = acc(grads, *b, fout);
                        for row in g.chunks(fout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    let dx = acc(grads, *x, n * fin);
                    gemm(n, fin, fout, g, false, &self.value(*w).data, false, 1.0, dx);
                }
            }
            Op::ChannelMeanMax { x, argmax } => {
                let xs = self.shape(*x);
                let (n, c) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let dx = acc(grads, *x, n * c * inner);
                for b in 0..n {
                    for p in 0..inner {
                        let gm = g[b * 2 * inner + p] / c as f64;
                        for ch in 0..c {
                            dx[(b * c + ch) * inner + p] += gm;
                        }
                        dx[(b * c + argmax[b * inner + p]) * inner + p] += g[(b * 2 + 1) * inner + p];
                    }
                }
            }
            Op::Concat { parts, channels } => {
                let xs = &node.value.shape;
                let n = xs[0];
                let total = xs[1];
                let inner: usize = xs[2..].iter().product();
                let mut offset = 0;
                for (p, &c) in parts.iter().zip(channels) {
                    if self.wants(*p) {
                        let d = acc(grads, *p, n * c * inner);
                        for b in 0..n {
                            let src = &g[(b * total + offset) * inner..(b * total + offset + c) * inner];
                            for (dd, s) in d[b * c * inner..(b + 1) * c * inner].iter_mut().zip(src) {
                                *dd += s;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::PixelShuffle(x, r) => {
                let xs = self.shape(*x);
                let (n, cr, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let c = cr / (r * r);
                let dx = acc(grads, *x, g.len());
                for (src, d) in dx.iter_mut().enumerate() {
                    *d += g[shuffle_index(src, n, c, h, w, *r)];
                }
            }
            Op::CropWidth(x, w0) => {
                let width = *node.value.shape.last().unwrap();
                let total = self.value(*x).len();
                let dx = acc(grads, *x, total);
                for (row, grow) in dx.chunks_mut(*w0).zip(g.chunks(width)) {
                    for (d, v) in row.iter_mut().zip(grow) {
                        *d += v;
                    }
                }
            }
            Op::PadWidth(x, extra) => {
                let width = *node.value.shape.last().unwrap();
                let w0 = width - extra;
                let total = self.value(*x).len();
                let dx = acc(grads, *x, total);
                for (row, grow) in dx.chunks_mut(w0).zip(g.chunks(width)) {
                    for (d, v) in row.iter_mut().zip(grow) {
                        *d += v;
                    }
                }
            }
            Op::ToNhwc(x) => {
                let xs = self.shape(*x);
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let dx = acc(grads, *x, g.len());
                for b in 0..n {
                    for ch in 0..c {
                        for p in 0..h * w {
                            dx[(b * c + ch) * h * w + p] += g[(b * h * w + p) * c + ch];
                        }
                    }
                }
            }
            Op::FromNhwc(x) => {
                let xs = self.shape(*x);
                let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
                let dx = acc(grads, *x, g.len());
                for b in 0..n {
                    for ch in 0..c {
                        for p in 0..h * w {
                            dx[(b * h * w + p) * c + ch] += g[(b * c + ch) * h * w + p];
                        }
                    }
                }
            }
            Op::NormalizePower { x, inv_rms } => {
                // y = k x with k = sqrt(t L / |x|²), so dx = k (g - x (g·x) / |x|²).
                let l = self.shape(*x)[1];
                let xv = &self.value(*x).data;
                let dx = acc(grads, *x, g.len());
                for (r, &k) in inv_rms.iter().enumerate() {
                    let row = r * l..(r + 1) * l;
                    let gx: f64 = g[row.clone()].iter().zip(&xv[row.clone()]).map(|(a, b)| a * b).sum();
                    let xx: f64 = xv[row.clone()].iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
                    for i in row {
                        dx[i] += k * (g[i] - xv[i] * gx / xx);
                    }
                }
            }
            Op::Mse { x, target } => {
                let xv = &self.value(*x).data;
                let n = xv.len() as f64;
                let dx = acc(grads, *x, xv.len());
                for i in 0..xv.len() {
                    dx[i] += g[0] * 2.0 * (xv[i] - target[i]) / n;
                }
            }
            Op::WeightedSum { x, weights } => {
                let dx = acc(grads, *x, weights.len());
                for i in 0..weights.len() {
                    dx[i] += g[0] * weights[i];
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Destination of element `src` of the `N × (C·r²) × H × W` input in the
/// shuffled `N × C × H·r × W·r` output.
fn shuffle_index(src: usize, n: usize, c: usize, h: usize, w: usize, r: usize) -> usize {
    let _ = n;
    let x = src % w;
    let y = (src / w) % h;
    let ch = (src / (w * h)) % (c * r * r);
    let b = src / (w * h * c * r * r);
    let oc = ch / (r * r);
    let dy = (ch % (r * r)) / r;
    let dx = ch % r;
    ((b * c + oc) * h * r + y * r + dy) * w * r + x * r + dx
}

/// Gradients from [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}
