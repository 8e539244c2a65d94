//! Dense `f64` arrays and the GEMM / im2col kernels behind convolution.

#[derive(Debug, Clone, PartialEq)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![1], vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `c = op(a) · op(b) + beta · c` on row-major buffers, with `op(a)` of size
/// `m × k` and `op(b)` of size `k × n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // buffers whose lengths are asserted at the top.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution over one sample.
#[derive(Debug, Clone, Copy)]
pub struct Conv2dGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// `cols` is `k × (out_h · out_w)`.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let npix = oh * ow;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into `dx`.
    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let npix = oh * ow;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * npix..(row + 1) * npix];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Geometry of a stride-1, same-padded 3-D convolution over one sample.
#[derive(Debug, Clone, Copy)]
pub struct Conv3dGeom {
    pub cin: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl Conv3dGeom {
    pub fn kvol(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    pub fn npix(&self) -> usize {
        self.d * self.h * self.w
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, Option<usize>)) {
        let p = (self.k / 2) as isize;
        let npix = self.npix();
        for ci in 0..self.cin {
            for kz in 0..self.k {
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let row = ((ci * self.k + kz) * self.k + ky) * self.k + kx;
                        for z in 0..self.d {
                            let iz = z as isize + kz as isize - p;
                            for y in 0..self.h {
                                let iy = y as isize + ky as isize - p;
                                for x in 0..self.w {
                                    let ix = x as isize + kx as isize - p;
                                    let col = (z * self.h + y) * self.w + x;
                                    let inside = iz >= 0
                                        && iz < self.d as isize
                                        && iy >= 0
                                        && iy < self.h as isize
                                        && ix >= 0
                                        && ix < self.w as isize;
                                    let src = inside.then(|| {
                                        ci * npix + (iz as usize * self.h + iy as usize) * self.w + ix as usize
                                    });
                                    f(row * npix + col, 0, src);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        self.for_each(|dst, _, src| cols[dst] = src.map_or(0.0, |s| x[s]));
    }

    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        self.for_each(|dst, _, src| {
            if let Some(s) = src {
                dx[s] += cols[dst];
            }
        });
    }
}
