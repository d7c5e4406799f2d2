//! Full-reference image metrics on images with peak value 1.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::{EvalError, Result};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_shape(x: &Array3<f64>, y: &Array3<f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(EvalError::Shape(format!("{:?} vs {:?}", x.dim(), y.dim())));
    }
    if x.is_empty() {
        return Err(EvalError::Shape("empty image".into()));
    }
    Ok(())
}

pub fn mse(x: &Array3<f64>, y: &Array3<f64>) -> Result<f64> {
    same_shape(x, y)?;
    Ok(x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// 10·log10(1 / MSE); identical inputs give +∞.
pub fn psnr(x: &Array3<f64>, y: &Array3<f64>) -> Result<f64> {
    let m = mse(x, y)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub fn mae(x: &Array3<f64>, y: &Array3<f64>) -> Result<f64> {
    same_shape(x, y)?;
    Ok(x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering with a normalized 1-D kernel.
fn filter_valid(img: ArrayView2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = (0..n).map(|i| k[i] * img[[y, x + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..n).map(|i| k[i] * rows[[y + i, x]]).sum();
        }
    }
    out
}

fn ssim_channel(x: ArrayView2<f64>, y: ArrayView2<f64>, k: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mx = filter_valid(x, k);
    let my = filter_valid(y, k);
    let xx = filter_valid((&x * &x).view(), k);
    let yy = filter_valid((&y * &y).view(), k);
    let xy = filter_valid((&x * &y).view(), k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
        let sxx = xx.as_slice().unwrap()[i] - ux * ux;
        let syy = yy.as_slice().unwrap()[i] - uy * uy;
        let sxy = xy.as_slice().unwrap()[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sxx + syy + c2));
    }
    total / mx.len() as f64
}

/// Mean SSIM over an 11×11 Gaussian window (σ = 1.5, valid region), averaged
/// over channels. Images smaller than the window use the largest odd window
/// that fits.
pub fn ssim(x: &Array3<f64>, y: &Array3<f64>) -> Result<f64> {
    same_shape(x, y)?;
    let (h, w, c) = x.dim();
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, SSIM_SIGMA);
    let total: f64 = (0..c).map(|ch| ssim_channel(x.index_axis(Axis(2), ch), y.index_axis(Axis(2), ch), &k)).sum();
    Ok(total / c as f64)
}
