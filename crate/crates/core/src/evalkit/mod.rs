//! Quantitative evaluation: PSNR, SSIM and MAE on raw values, ΔE2000 in Lab
//! after mapping white-balanced raw to XYZ.

pub mod ciede2000;
mod color;
pub mod metrics;
mod report;

use ndarray::{Array3, Axis};
use thiserror::Error;

use crate::rawio::{PackedImage, Patch};

pub use ciede2000::ciede2000;
pub use color::{estimate_illuminant, raw_to_lab, raw_to_lab_with_white, xyz_to_lab, CameraColorProfile};
pub use metrics::{mae, mse, psnr, ssim};
pub use report::{comparison_table, mean_std, Aggregates, MetricsReport, MetricsRow, Stat, PSNR_CAP, TABLE_HEADER};

/// CIE D65 reference white, Y normalized to 1.
pub const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate illuminant: {0}")]
    DegenerateIlluminant(String),
    #[error("invalid color profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mean CIEDE2000 over the pixels of two (h, w, 3) Lab images.
pub fn delta_e_2000(lab1: &Array3<f64>, lab2: &Array3<f64>) -> Result<f64> {
    if lab1.dim() != lab2.dim() || lab1.dim().2 != 3 || lab1.is_empty() {
        return Err(EvalError::Shape(format!("{:?} vs {:?}", lab1.dim(), lab2.dim())));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, q) in lab1.lanes(Axis(2)).into_iter().zip(lab2.lanes(Axis(2))) {
        total += ciede2000([p[0], p[1], p[2]], [q[0], q[1], q[2]]);
        n += 1;
    }
    Ok(total / n as f64)
}

/// Where the white-balance illuminant for ΔE comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IlluminantSource {
    /// One illuminant per pair, taken from the ground truth: its recorded
    /// illuminant, else its achromatic chart patches, else gray world. Both
    /// images are balanced with it, so ΔE measures the mapping alone.
    #[default]
    Reference,
    /// Each image balanced by its own chart or gray-world estimate.
    Separate,
    /// Gray world on the ground truth, applied to both images.
    GrayWorld,
}

/// One mapped image with its ground truth and optional illuminant hints.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub name: String,
    pub mapped: PackedImage,
    pub gt: PackedImage,
    pub illuminant: Option<[f64; 3]>,
    /// Achromatic chart patches in the ground-truth image.
    pub achromatic: Option<Vec<Patch>>,
}

impl EvalPair {
    pub fn new(name: impl Into<String>, mapped: PackedImage, gt: PackedImage) -> Self {
        EvalPair { name: name.into(), mapped, gt, illuminant: None, achromatic: None }
    }
}

fn reference_illuminant(pair: &EvalPair) -> Result<[f64; 3]> {
    if let Some(e) = pair.illuminant {
        return Ok(e);
    }
    estimate_illuminant(&pair.gt, pair.achromatic.as_deref())
}

/// All four metrics for one pair.
pub fn evaluate_pair(pair: &EvalPair, profile: &CameraColorProfile, source: IlluminantSource) -> Result<MetricsRow> {
    let (x, y) = (&pair.mapped.data, &pair.gt.data);
    let (illum_mapped, illum_gt) = match source {
        IlluminantSource::Reference => {
            let e = reference_illuminant(pair)?;
            (e, e)
        }
        IlluminantSource::GrayWorld => {
            let e = estimate_illuminant(&pair.gt, None)?;
            (e, e)
        }
        IlluminantSource::Separate => {
            let chart = pair.achromatic.as_deref();
            (estimate_illuminant(&pair.mapped, chart)?, estimate_illuminant(&pair.gt, chart)?)
        }
    };
    let lab_m = raw_to_lab(&pair.mapped, illum_mapped, profile)?;
    let lab_g = raw_to_lab(&pair.gt, illum_gt, profile)?;
    Ok(MetricsRow {
        name: pair.name.clone(),
        psnr: psnr(x, y)?,
        ssim: ssim(x, y)?,
        mae: mae(x, y)?,
        delta_e: delta_e_2000(&lab_m, &lab_g)?,
    })
}

/// Evaluates every pair in order; aggregation is order independent.
pub fn evaluate(
    pairs: &[EvalPair],
    profile: &CameraColorProfile,
    source: IlluminantSource,
    method: impl Into<String>,
    direction: impl Into<String>,
) -> Result<MetricsReport> {
    let rows = pairs.iter().map(|p| evaluate_pair(p, profile, source)).collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(method, direction, rows))
}
