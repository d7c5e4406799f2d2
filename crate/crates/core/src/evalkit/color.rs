//! Illuminant estimation and camera raw → XYZ → Lab conversion.

use std::path::Path;

use nalgebra::Matrix3;
use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result, D65_WHITE};
use crate::rawio::{PackedImage, Patch};

/// Camera raw (white-balanced) → CIE XYZ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraColorProfile {
    pub camera_id: String,
    pub xyz_matrix: [[f64; 3]; 3],
}

impl CameraColorProfile {
    pub fn new(camera_id: impl Into<String>, xyz_matrix: [[f64; 3]; 3]) -> Result<Self> {
        let p = CameraColorProfile { camera_id: camera_id.into(), xyz_matrix };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.xyz_matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EvalError::Profile(format!("{}: non-finite xyz_matrix entry", self.camera_id)));
        }
        let m = Matrix3::from_fn(|r, c| self.xyz_matrix[r][c]);
        let scale = m.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if scale == 0.0 || m.determinant().abs() <= 1e-12 * scale.powi(3) {
            return Err(EvalError::Profile(format!("{}: xyz_matrix is singular", self.camera_id)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: CameraColorProfile = serde_json::from_str(&text).map_err(|e| EvalError::Profile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("profile serializes"))?;
        Ok(())
    }
}

fn normalized(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(EvalError::DegenerateIlluminant(format!("estimate {v:?} has no direction")));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// Unit-norm illuminant color. With `achromatic` patches the estimate is the
/// mean of their colors; without, it is the gray-world channel mean.
/// Four-channel images are reduced to RGB first.
pub fn estimate_illuminant(img: &PackedImage, achromatic: Option<&[Patch]>) -> Result<[f64; 3]> {
    let rgb = img.to_rgb();
    let (h, w, _) = rgb.dim();
    let mut acc = [0.0; 3];
    match achromatic {
        Some(patches) if !patches.is_empty() => {
            for p in patches {
                if !p.fits(h, w) || p.size == 0 {
                    return Err(EvalError::Shape(format!("patch {p:?} outside {h}x{w} image")));
                }
                let region = rgb.slice(s![p.y..p.y + p.size, p.x..p.x + p.size, ..]);
                let n = (p.size * p.size) as f64;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += region.slice(s![.., .., c]).sum() / n;
                }
            }
        }
        _ => {
            let n = (h * w) as f64;
            for (c, a) in acc.iter_mut().enumerate() {
                *a = rgb.slice(s![.., .., c]).sum() / n;
            }
        }
    }
    normalized(acc)
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIE XYZ → Lab relative to `white`.
pub fn xyz_to_lab(xyz: [f64; 3], white: [f64; 3]) -> [f64; 3] {
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// `raw_to_lab_with_white` under D65.
pub fn raw_to_lab(img: &PackedImage, illum: [f64; 3], profile: &CameraColorProfile) -> Result<Array3<f64>> {
    raw_to_lab_with_white(img, illum, profile, D65_WHITE)
}

/// White-balances by `illum` (channel c divided by illum_c / max illum), maps
/// through the profile matrix and converts to Lab. Output is (h, w, 3).
pub fn raw_to_lab_with_white(
    img: &PackedImage,
    illum: [f64; 3],
    profile: &CameraColorProfile,
    white: [f64; 3],
) -> Result<Array3<f64>> {
    if illum.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(EvalError::DegenerateIlluminant(format!("illuminant {illum:?} has a non-positive component")));
    }
    let peak = illum.iter().cloned().fold(0.0, f64::max);
    let gains = [peak / illum[0], peak / illum[1], peak / illum[2]];
    let m = &profile.xyz_matrix;
    let rgb = img.to_rgb();
    let (h, w, _) = rgb.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let v = [rgb[[y, x, 0]] * gains[0], rgb[[y, x, 1]] * gains[1], rgb[[y, x, 2]] * gains[2]];
            let mut xyz = [0.0; 3];
            for (r, o) in xyz.iter_mut().enumerate() {
                *o = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
            }
            let lab = xyz_to_lab(xyz, white);
            for c in 0..3 {
                out[[y, x, c]] = lab[c];
            }
        }
    }
    Ok(out)
}
