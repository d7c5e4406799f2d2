//! Annotation records: chart patch coordinates for both cameras plus
//! hand-picked corresponding homogeneous regions.

use ndarray::s;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rawio::{PackedImage, Patch};

/// Default coefficient-of-variation threshold for a homogeneous patch.
pub const HOMOGENEITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("patch {patch:?} out of bounds for {height}x{width} image")]
    OutOfBounds { patch: Patch, height: usize, width: usize },
    #[error("patch size {0} below the minimum of 2")]
    TooSmall(usize),
    #[error("patch at ({x}, {y}) is not homogeneous (cv {cv:.4} >= {threshold})")]
    NotHomogeneous { x: usize, y: usize, cv: f64, threshold: f64 },
    #[error("chart patch lists differ in length: {a} vs {b}")]
    ChartMismatch { a: usize, b: usize },
    #[error("no region at index {0}")]
    NoSuchRegion(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationStatus {
    #[serde(rename = "DRAFT")]
    Draft,
    #[serde(rename = "COMMITTED")]
    Committed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPair {
    pub patch_a: Patch,
    pub patch_b: Patch,
}

/// The four captures of one scene: each camera with and without the chart.
#[derive(Debug, Clone, Copy)]
pub struct PairImages<'a> {
    pub a_chart: &'a PackedImage,
    pub a_free: &'a PackedImage,
    pub b_chart: &'a PackedImage,
    pub b_free: &'a PackedImage,
}

/// Chart patches index the chart captures; region patches index the
/// chart-free captures. Coordinates are packed-image pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub pair_id: String,
    #[serde(default)]
    pub chart_a: Vec<Patch>,
    #[serde(default)]
    pub chart_b: Vec<Patch>,
    #[serde(default)]
    pub regions: Vec<RegionPair>,
    pub status: AnnotationStatus,
}

impl AnnotationRecord {
    pub fn new(pair_id: impl Into<String>) -> Self {
        AnnotationRecord {
            pair_id: pair_id.into(),
            chart_a: Vec::new(),
            chart_b: Vec::new(),
            regions: Vec::new(),
            status: AnnotationStatus::Draft,
        }
    }

    /// Number of color correspondences the record yields.
    pub fn sample_count(&self) -> usize {
        self.chart_a.len().min(self.chart_b.len()) + self.regions.len()
    }

    /// Checks sizes and bounds of every patch, and homogeneity of region patches.
    pub fn validate(&self, images: PairImages<'_>, threshold: f64) -> Result<(), AnnotationError> {
        if self.chart_a.len() != self.chart_b.len() {
            return Err(AnnotationError::ChartMismatch { a: self.chart_a.len(), b: self.chart_b.len() });
        }
        for p in &self.chart_a {
            check_patch(p, images.a_chart)?;
        }
        for p in &self.chart_b {
            check_patch(p, images.b_chart)?;
        }
        for r in &self.regions {
            validate_region(r, images.a_free, images.b_free, threshold)?;
        }
        Ok(())
    }
}

/// Bounds and size check for one patch.
pub fn check_patch(p: &Patch, img: &PackedImage) -> Result<(), AnnotationError> {
    if p.size < 2 {
        return Err(AnnotationError::TooSmall(p.size));
    }
    if !p.fits(img.height(), img.width()) {
        return Err(AnnotationError::OutOfBounds { patch: p.clone(), height: img.height(), width: img.width() });
    }
    Ok(())
}

/// Bounds plus homogeneity of both sides of a region correspondence.
pub fn validate_region(
    r: &RegionPair,
    image_a: &PackedImage,
    image_b: &PackedImage,
    threshold: f64,
) -> Result<(), AnnotationError> {
    for (p, img) in [(&r.patch_a, image_a), (&r.patch_b, image_b)] {
        check_patch(p, img)?;
        let h = homogeneity_check_with(img, p, threshold)?;
        if !h.pass {
            return Err(AnnotationError::NotHomogeneous { x: p.x, y: p.y, cv: h.cv, threshold });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homogeneity {
    pub pass: bool,
    /// Largest per-channel coefficient of variation (σ/μ) inside the patch.
    pub cv: f64,
}

/// Homogeneity test with the default threshold.
pub fn homogeneity_check(img: &PackedImage, patch: &Patch) -> Result<Homogeneity, AnnotationError> {
    homogeneity_check_with(img, patch, HOMOGENEITY_THRESHOLD)
}

/// Passes iff the maximum per-channel σ/μ is below `threshold`. A channel with
/// zero mean counts as cv 0 when constant and +∞ otherwise.
pub fn homogeneity_check_with(img: &PackedImage, patch: &Patch, threshold: f64) -> Result<Homogeneity, AnnotationError> {
    check_patch(patch, img)?;
    let region = img.data.slice(s![patch.y..patch.y + patch.size, patch.x..patch.x + patch.size, ..]);
    let n = (patch.size * patch.size) as f64;
    let mut worst: f64 = 0.0;
    for c in 0..img.channels() {
        let ch = region.slice(s![.., .., c]);
        let mean = ch.sum() / n;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let cv = if mean > 0.0 {
            sd / mean
        } else if sd == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(cv);
    }
    Ok(Homogeneity { pass: worst < threshold, cv: worst })
}
