//! Convolution layers on single (C, H, W) tensors, with explicit backward
//! passes. Batches are handled by the caller one sample at a time.

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Real;

/// `im2col` for a square kernel with zero padding. Rows are (c, ky, kx),
/// columns are output positions in raster order.
pub fn im2col<T: Real>(x: ArrayView3<T>, k: usize, stride: usize, pad: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut col = Array2::zeros((c * k * k, ho * wo));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let cs = col.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = (ci * h + iy as usize) * w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            cs[dst + ox] = xs[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<T: Real>(col: &Array2<T>, shape: (usize, usize, usize), k: usize, stride: usize, pad: usize) -> Array3<T> {
    let (c, h, w) = shape;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut x = Array3::zeros(shape);
    let col = col.as_standard_layout();
    let cs = col.as_slice().expect("standard layout");
    let xs = x.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (ci * h + iy as usize) * w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xs[dst + ix as usize] += cs[src + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn he_normal<T: Real, R: Rng>(rng: &mut R, shape: (usize, usize), fan_in: usize) -> Array2<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_simple_fn(shape, || T::from_f64(normal.sample(rng)).expect("finite"))
}

/// Square convolution, zero padding. Weights are (c_out, c_in·k·k).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Saved activations for a conv backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    col: Array2<T>,
    in_shape: (usize, usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Conv2d { w: Array2::zeros((c_out, c_in * k * k)), b: Array1::zeros(c_out), k, stride, pad: k / 2 }
    }

    pub fn he<R: Rng>(rng: &mut R, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Conv2d { w: he_normal(rng, (c_out, c_in * k * k), c_in * k * k), ..Self::zeros(c_in, c_out, k, stride) }
    }

    pub fn c_in(&self) -> usize {
        self.w.ncols() / (self.k * self.k)
    }

    pub fn c_out(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn forward(&self, x: ArrayView3<T>) -> (Array3<T>, ConvCache<T>) {
        let (_, h, w) = x.dim();
        let (ho, wo) = self.out_size(h, w);
        let col = if self.k == 1 && self.stride == 1 {
            x.as_standard_layout().into_owned().into_shape_with_order((x.dim().0, h * w)).expect("contiguous")
        } else {
            im2col(x, self.k, self.stride, self.pad)
        };
        let mut y = self.w.dot(&col);
        y += &self.b.view().insert_axis(Axis(1));
        let y = y.into_shape_with_order((self.c_out(), ho, wo)).expect("gemm output is contiguous");
        (y, ConvCache { col, in_shape: x.dim() })
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, cache: &ConvCache<T>, dy: &Array3<T>, grad: &mut Conv2d<T>) -> Array3<T> {
        let (c, ho, wo) = dy.dim();
        let dy = dy.view().into_shape_with_order((c, ho * wo)).expect("contiguous gradient");
        ndarray::linalg::general_mat_mul(T::one(), &dy, &cache.col.t(), T::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(1));
        let dcol = self.w.t().dot(&dy);
        if self.k == 1 && self.stride == 1 {
            dcol.into_shape_with_order(cache.in_shape).expect("contiguous")
        } else {
            col2im(&dcol, cache.in_shape, self.k, self.stride, self.pad)
        }
    }
}

/// 2×2 transposed convolution with stride 2 (exact 2× upsampling).
/// Weights are (c_out·4, c_in) with rows ordered (c_out, dy, dx).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2x2<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct UpCache<T> {
    x: Array2<T>,
}

impl<T: Real> ConvTranspose2x2<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        ConvTranspose2x2 { w: Array2::zeros((c_out * 4, c_in)), b: Array1::zeros(c_out) }
    }

    pub fn he<R: Rng>(rng: &mut R, c_in: usize, c_out: usize) -> Self {
        ConvTranspose2x2 { w: he_normal(rng, (c_out * 4, c_in), c_in), b: Array1::zeros(c_out) }
    }

    pub fn c_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn c_out(&self) -> usize {
        self.b.len()
    }

    pub fn forward(&self, x: ArrayView3<T>) -> (Array3<T>, UpCache<T>) {
        let (c, h, w) = x.dim();
        let x2 = x.as_standard_layout().into_owned().into_shape_with_order((c, h * w)).expect("contiguous");
        let z = self.w.dot(&x2);
        let co = self.c_out();
        let mut y = Array3::zeros((co, 2 * h, 2 * w));
        for o in 0..co {
            let bias = self.b[o];
            for dy in 0..2 {
                for dx in 0..2 {
                    let zr = z.row(o * 4 + dy * 2 + dx);
                    let mut plane = y.slice_mut(s![o, dy..;2, dx..;2]);
                    for (p, v) in plane.iter_mut().zip(zr.iter()) {
                        *p = *v + bias;
                    }
                }
            }
        }
        (y, UpCache { x: x2 })
    }

    pub fn backward(&self, cache: &UpCache<T>, dy: &Array3<T>, grad: &mut ConvTranspose2x2<T>) -> Array3<T> {
        let (co, h2, w2) = dy.dim();
        let (h, w) = (h2 / 2, w2 / 2);
        let mut dz = Array2::zeros((co * 4, h * w));
        for o in 0..co {
            let plane_sum = dy.index_axis(Axis(0), o).sum();
            grad.b[o] += plane_sum;
            for sy in 0..2 {
                for sx in 0..2 {
                    let mut zr = dz.row_mut(o * 4 + sy * 2 + sx);
                    for (z, v) in zr.iter_mut().zip(dy.slice(s![o, sy..;2, sx..;2]).iter()) {
                        *z = *v;
                    }
                }
            }
        }
        ndarray::linalg::general_mat_mul(T::one(), &dz, &cache.x.t(), T::one(), &mut grad.w);
        let dx = self.w.t().dot(&dz);
        dx.into_shape_with_order((self.c_in(), h, w)).expect("contiguous")
    }
}

pub fn relu_inplace<T: Real>(x: &mut Array3<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward<T: Real>(out: &Array3<T>, grad: &mut Array3<T>) {
    ndarray::Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

/// 2×2 average pooling with stride 2; spatial sizes must be even.
pub fn avg_pool2<T: Real>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let q = T::from_f64(0.25).expect("representable");
    Array3::from_shape_fn((c, h / 2, w / 2), |(ch, y, xx)| {
        let (y2, x2) = (2 * y, 2 * xx);
        (x[[ch, y2, x2]] + x[[ch, y2, x2 + 1]] + x[[ch, y2 + 1, x2]] + x[[ch, y2 + 1, x2 + 1]]) * q
    })
}

/// Gradient of [`avg_pool2`]: each input pixel receives a quarter of its
/// window's output gradient.
pub fn avg_pool2_backward<T: Real>(dy: &Array3<T>) -> Array3<T> {
    let (c, h, w) = dy.dim();
    let q = T::from_f64(0.25).expect("representable");
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, y, x)| dy[[ch, y / 2, x / 2]] * q)
}

/// Channel concatenation of two tensors with equal spatial size.
pub fn concat<T: Real>(a: &Array3<T>, b: &Array3<T>) -> Array3<T> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial size")
}
