//! Fourier domain adaptation: low-frequency amplitude swap per channel.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{BaselineError, Result};
use crate::rawio::PackedImage;

pub const DEFAULT_BETA: f64 = 0.01;
pub const MAX_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdaConfig {
    pub beta: f64,
}

impl Default for FdaConfig {
    fn default() -> Self {
        FdaConfig { beta: DEFAULT_BETA }
    }
}

impl FdaConfig {
    pub fn new(beta: f64) -> Result<Self> {
        let cfg = FdaConfig { beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_BETA).contains(&self.beta) {
            return Err(BaselineError::Config(format!("beta {} outside [0, {MAX_BETA}]", self.beta)));
        }
        Ok(())
    }

    /// Half-width b of the swap window: frequencies with |k_y| < b and |k_x| < b.
    pub fn half_width(&self, height: usize, width: usize) -> usize {
        (self.beta * height.min(width) as f64).floor() as usize
    }
}

/// True when the signed frequency of index `i` (of `n`) satisfies |k| < b.
pub fn in_window(i: usize, n: usize, b: usize) -> bool {
    i < b || n - i < b
}

struct Fft2 {
    planner: FftPlanner<f64>,
}

impl Fft2 {
    fn new() -> Self {
        Fft2 { planner: FftPlanner::new() }
    }

    fn run(&mut self, data: &mut Array2<Complex64>, inverse: bool) {
        let (h, w) = data.dim();
        let row = if inverse { self.planner.plan_fft_inverse(w) } else { self.planner.plan_fft_forward(w) };
        let col = if inverse { self.planner.plan_fft_inverse(h) } else { self.planner.plan_fft_forward(h) };
        let mut buf = vec![Complex64::default(); w.max(h)];
        for mut r in data.rows_mut() {
            for (b, v) in buf.iter_mut().zip(r.iter()) {
                *b = *v;
            }
            row.process(&mut buf[..w]);
            for (v, b) in r.iter_mut().zip(&buf) {
                *v = *b;
            }
        }
        for mut c in data.columns_mut() {
            for (b, v) in buf.iter_mut().zip(c.iter()) {
                *b = *v;
            }
            col.process(&mut buf[..h]);
            for (v, b) in c.iter_mut().zip(&buf) {
                *v = *b;
            }
        }
        if inverse {
            let scale = 1.0 / (h * w) as f64;
            data.mapv_inplace(|v| v * scale);
        }
    }

    fn forward(&mut self, x: ArrayView2<f64>) -> Array2<Complex64> {
        let mut d = x.mapv(|v| Complex64::new(v, 0.0));
        self.run(&mut d, false);
        d
    }
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize_bilinear(data: &Array3<f64>, height: usize, width: usize) -> Array3<f64> {
    let (h, w, c) = data.dim();
    if (h, w) == (height, width) {
        return data.clone();
    }
    let coord = |o: usize, n_out: usize, n_in: usize| {
        let p = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = p.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), p - i0 as f64)
    };
    Array3::from_shape_fn((height, width, c), |(y, x, ch)| {
        let (y0, y1, fy) = coord(y, height, h);
        let (x0, x1, fx) = coord(x, width, w);
        let top = data[[y0, x0, ch]] * (1.0 - fx) + data[[y0, x1, ch]] * fx;
        let bottom = data[[y1, x0, ch]] * (1.0 - fx) + data[[y1, x1, ch]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// The amplitude swap before clipping: src phase everywhere, target
/// amplitude inside the window, real part of the inverse transform.
pub fn fda_swap(src: &Array3<f64>, target: &Array3<f64>, cfg: &FdaConfig) -> Result<Array3<f64>> {
    cfg.validate()?;
    let (h, w, c) = src.dim();
    if target.dim().2 != c {
        return Err(BaselineError::Shape(format!("channel count {} vs {}", c, target.dim().2)));
    }
    let target = resize_bilinear(target, h, w);
    let b = cfg.half_width(h, w);
    let mut out = src.clone();
    if b == 0 {
        return Ok(out);
    }
    let mut fft = Fft2::new();
    for ch in 0..c {
        let mut fs = fft.forward(src.index_axis(Axis(2), ch));
        let ft = fft.forward(target.index_axis(Axis(2), ch));
        for ((i, j), v) in fs.indexed_iter_mut() {
            if in_window(i, h, b) && in_window(j, w, b) {
                let amp = ft[[i, j]].norm();
                let phase = v.arg();
                *v = Complex64::from_polar(amp, phase);
            }
        }
        fft.run(&mut fs, true);
        out.slice_mut(s![.., .., ch]).assign(&fs.mapv(|v| v.re));
    }
    Ok(out)
}

/// FDA mapping of `src` toward `target`'s low-frequency appearance.
pub fn fda_map(src: &PackedImage, target: &PackedImage, cfg: &FdaConfig) -> Result<PackedImage> {
    let swapped = fda_swap(&src.data, &target.data, cfg)?;
    Ok(PackedImage::from_clipped(swapped, target.camera_id.clone()))
}
