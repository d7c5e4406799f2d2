//! Pairwise color calibration `Î_B = M φ(I_A)` fitted from corresponding
//! color samples, and generation of aligned anchor pairs from chart captures.

use nalgebra::{DMatrix, SVD};
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotationError, AnnotationRecord, PairImages};
use crate::rawio::{merge_greens, PackedImage, Patch};

/// Relative ridge added to the normal equations, scaled by trace / k.
pub const RIDGE: f64 = 1e-8;

/// Refinement passes applied after the ridge-regularized solve.
pub const REFINE_STEPS: usize = 2;
/// Singular values below this fraction of the largest count as rank loss.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("singular fit: {detail}")]
    SingularFit { samples: usize, required: usize, rank: usize, detail: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

pub type Result<T> = std::result::Result<T, CalibError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kernel {
    #[serde(rename = "IDENTITY")]
    Identity,
    #[serde(rename = "POLY11")]
    Poly11,
}

impl Kernel {
    /// Number of expanded terms.
    pub fn terms(self) -> usize {
        match self {
            Kernel::Identity => 3,
            Kernel::Poly11 => 11,
        }
    }
}

/// φ(rgb). POLY11 is (R, G, B, RG, RB, GB, R², G², B², RGB, 1).
pub fn expand_kernel(rgb: [f64; 3], kernel: Kernel) -> Vec<f64> {
    let [r, g, b] = rgb;
    match kernel {
        Kernel::Identity => vec![r, g, b],
        Kernel::Poly11 => vec![r, g, b, r * g, r * b, g * b, r * r, g * g, b * b, r * g * b, 1.0],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SampleOrigin {
    #[serde(rename = "CHART")]
    Chart,
    #[serde(rename = "ANNOTATED_REGION")]
    AnnotatedRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorSamplePair {
    pub src: [f64; 3],
    pub dst: [f64; 3],
    pub origin: SampleOrigin,
    pub weight: f64,
}

impl ColorSamplePair {
    pub fn new(src: [f64; 3], dst: [f64; 3], origin: SampleOrigin) -> Self {
        ColorSamplePair { src, dst, origin, weight: 1.0 }
    }

    fn check(&self, index: usize) -> Result<()> {
        let in_range = |v: &[f64; 3]| v.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x));
        if !in_range(&self.src) || !in_range(&self.dst) {
            return Err(CalibError::InvalidSample { index, reason: "colors must be finite and in [0, 1]".into() });
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(CalibError::InvalidSample { index, reason: format!("weight {} not positive", self.weight) });
        }
        Ok(())
    }

    fn sort_key(&self) -> ([u64; 3], [u64; 3], u64, SampleOrigin) {
        (self.src.map(f64::to_bits), self.dst.map(f64::to_bits), self.weight.to_bits(), self.origin)
    }
}

/// Fitted mapping `dst ≈ M φ(src)` with M of shape 3 × k.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMap {
    pub kernel: Kernel,
    pub matrix: Array2<f64>,
    pub src_camera: String,
    pub dst_camera: String,
    pub fit_residual_rms: f64,
}

#[derive(Serialize, Deserialize)]
struct CalibrationMapJson {
    kernel: Kernel,
    #[serde(rename = "M")]
    m: Vec<f64>,
    src_camera: String,
    dst_camera: String,
    fit_residual_rms: f64,
}

impl Serialize for CalibrationMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CalibrationMapJson {
            kernel: self.kernel,
            m: self.matrix.iter().copied().collect(),
            src_camera: self.src_camera.clone(),
            dst_camera: self.dst_camera.clone(),
            fit_residual_rms: self.fit_residual_rms,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CalibrationMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = CalibrationMapJson::deserialize(d)?;
        let k = j.kernel.terms();
        if j.m.len() != 3 * k || j.m.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom(format!(
                "M must hold 3x{k} finite values for {:?}, got {}",
                j.kernel,
                j.m.len()
            )));
        }
        Ok(CalibrationMap {
            kernel: j.kernel,
            matrix: Array2::from_shape_vec((3, k), j.m).expect("length checked"),
            src_camera: j.src_camera,
            dst_camera: j.dst_camera,
            fit_residual_rms: j.fit_residual_rms,
        })
    }
}

impl CalibrationMap {
    pub fn identity() -> Self {
        CalibrationMap {
            kernel: Kernel::Identity,
            matrix: Array2::eye(3),
            src_camera: String::new(),
            dst_camera: String::new(),
            fit_residual_rms: 0.0,
        }
    }

    pub fn with_cameras(mut self, src: impl Into<String>, dst: impl Into<String>) -> Self {
        self.src_camera = src.into();
        self.dst_camera = dst.into();
        self
    }

    fn check(&self) -> Result<()> {
        let k = self.kernel.terms();
        if self.matrix.dim() != (3, k) {
            return Err(CalibError::Shape(format!(
                "matrix is {:?}, kernel {:?} needs (3, {k})",
                self.matrix.dim(),
                self.kernel
            )));
        }
        Ok(())
    }

    /// M φ(rgb), unclipped.
    pub fn map_color(&self, rgb: [f64; 3]) -> [f64; 3] {
        let phi = expand_kernel(rgb, self.kernel);
        std::array::from_fn(|r| phi.iter().enumerate().map(|(j, p)| self.matrix[[r, j]] * p).sum())
    }
}

/// Weighted least squares with a small trace-scaled ridge. Samples are put in
/// a canonical order first, so the result does not depend on input order.
pub fn fit_map(samples: &[ColorSamplePair], kernel: Kernel) -> Result<CalibrationMap> {
    for (i, s) in samples.iter().enumerate() {
        s.check(i)?;
    }
    let k = kernel.terms();
    let n = samples.len();
    if n < k {
        return Err(CalibError::SingularFit {
            samples: n,
            required: k,
            rank: n,
            detail: format!("{n} samples cannot determine the {k} terms of {kernel:?}"),
        });
    }
    let mut ordered: Vec<&ColorSamplePair> = samples.iter().collect();
    ordered.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let design = DMatrix::from_fn(n, k, |i, j| ordered[i].weight.sqrt() * expand_kernel(ordered[i].src, kernel)[j]);
    let sv = SVD::new(design.clone(), false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&v| v > smax * RANK_TOLERANCE).count();
    if rank < k {
        return Err(CalibError::SingularFit {
            samples: n,
            required: k,
            rank,
            detail: format!(
                "design matrix has rank {rank} < {k}; the sample colors are too collinear for {kernel:?}"
            ),
        });
    }
    let target = DMatrix::from_fn(n, 3, |i, c| ordered[i].weight.sqrt() * ordered[i].dst[c]);
    let mut gram = design.transpose() * &design;
    let ridge = RIDGE * gram.trace() / k as f64;
    for j in 0..k {
        gram[(j, j)] += ridge;
    }
    let rhs = design.transpose() * &target;
    let chol = gram.cholesky().ok_or_else(|| CalibError::SingularFit {
        samples: n,
        required: k,
        rank,
        detail: "normal equations are not positive definite".into(),
    })?;
    // Iterated Tikhonov: each refinement step shrinks the ridge bias along
    // well-conditioned directions by λ/(σ²+λ) while nearly collinear
    // directions stay damped.
    let mut solution = chol.solve(&rhs); // k × 3
    let plain = design.transpose() * &design;
    for _ in 0..REFINE_STEPS {
        let correction = chol.solve(&(&rhs - &plain * &solution));
        solution += correction;
    }
    let matrix = Array2::from_shape_fn((3, k), |(r, j)| solution[(j, r)]);
    let mut map = CalibrationMap {
        kernel,
        matrix,
        src_camera: String::new(),
        dst_camera: String::new(),
        fit_residual_rms: 0.0,
    };
    map.fit_residual_rms = residual_rms(&map, samples);
    Ok(map)
}

/// sqrt(Σ w‖dst − Mφ(src)‖² / (3 Σ w)).
pub fn residual_rms(map: &CalibrationMap, samples: &[ColorSamplePair]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let p = map.map_color(s.src);
        num += s.weight * (0..3).map(|c| (s.dst[c] - p[c]).powi(2)).sum::<f64>();
        den += 3.0 * s.weight;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct MappedImage {
    pub image: PackedImage,
    /// Fraction of pixels with at least one component outside [0, 1] before clipping.
    pub out_of_gamut_fraction: f64,
}

/// Applies `map` per pixel and clips. Packed 4-channel images are mapped in
/// (R, mean(G1, G2), B) and the mapped G is written to both greens.
pub fn apply_map(img: &PackedImage, map: &CalibrationMap) -> Result<MappedImage> {
    map.check()?;
    let (h, w, c) = img.data.dim();
    if c != 3 && c != 4 {
        return Err(CalibError::Shape(format!("expected 3 or 4 channels, got {c}")));
    }
    let rgb = merge_greens(&img.data);
    let mut out = Array3::zeros((h, w, c));
    let mut outside = 0usize;
    for y in 0..h {
        for x in 0..w {
            let v = map.map_color([rgb[[y, x, 0]], rgb[[y, x, 1]], rgb[[y, x, 2]]]);
            if v.iter().any(|t| !(0.0..=1.0).contains(t)) {
                outside += 1;
            }
            let v = v.map(crate::rawio::clip01);
            if c == 4 {
                out[[y, x, 0]] = v[0];
                out[[y, x, 1]] = v[1];
                out[[y, x, 2]] = v[1];
                out[[y, x, 3]] = v[2];
            } else {
                for ch in 0..3 {
                    out[[y, x, ch]] = v[ch];
                }
            }
        }
    }
    let camera = if map.dst_camera.is_empty() { img.camera_id.clone() } else { map.dst_camera.clone() };
    Ok(MappedImage {
        image: PackedImage { data: out, camera_id: camera },
        out_of_gamut_fraction: outside as f64 / (h * w).max(1) as f64,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean of the values within 2 MAD of the median.
pub fn robust_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    let med = median(&mut sorted);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let kept: Vec<f64> = values.iter().copied().filter(|v| (v - med).abs() <= 2.0 * mad).collect();
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Robust per-channel mean color of each patch (greens merged for packed data).
pub fn extract_chart_colors(frame: &PackedImage, patches: &[Patch]) -> Result<Vec<[f64; 3]>> {
    let rgb = merge_greens(&frame.data);
    patches
        .iter()
        .map(|p| {
            crate::annotation::check_patch(p, frame)?;
            let region = rgb.slice(s![p.y..p.y + p.size, p.x..p.x + p.size, ..]);
            Ok(std::array::from_fn(|c| {
                let v: Vec<f64> = region.slice(s![.., .., c]).iter().copied().collect();
                robust_mean(&v)
            }))
        })
        .collect()
}

/// Relative weights of chart and annotated-region samples in the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    pub chart: f64,
    pub region: f64,
}

impl Default for SampleWeights {
    fn default() -> Self {
        SampleWeights { chart: 1.0, region: 1.0 }
    }
}

/// Correspondences for the A→B direction: chart patches matched by index,
/// then every annotated region.
pub fn collect_samples(
    images: PairImages<'_>,
    record: &AnnotationRecord,
    weights: SampleWeights,
) -> Result<Vec<ColorSamplePair>> {
    if record.chart_a.len() != record.chart_b.len() {
        return Err(AnnotationError::ChartMismatch { a: record.chart_a.len(), b: record.chart_b.len() }.into());
    }
    let ca = extract_chart_colors(images.a_chart, &record.chart_a)?;
    let cb = extract_chart_colors(images.b_chart, &record.chart_b)?;
    let mut out: Vec<ColorSamplePair> = ca
        .into_iter()
        .zip(cb)
        .map(|(a, b)| ColorSamplePair { src: a, dst: b, origin: SampleOrigin::Chart, weight: weights.chart })
        .collect();
    let ra = extract_chart_colors(images.a_free, &record.regions.iter().map(|r| r.patch_a.clone()).collect::<Vec<_>>())?;
    let rb = extract_chart_colors(images.b_free, &record.regions.iter().map(|r| r.patch_b.clone()).collect::<Vec<_>>())?;
    out.extend(ra.into_iter().zip(rb).map(|(a, b)| ColorSamplePair {
        src: a,
        dst: b,
        origin: SampleOrigin::AnnotatedRegion,
        weight: weights.region,
    }));
    Ok(out)
}

fn reversed(samples: &[ColorSamplePair]) -> Vec<ColorSamplePair> {
    samples.iter().map(|s| ColorSamplePair { src: s.dst, dst: s.src, ..*s }).collect()
}

#[derive(Debug, Clone)]
pub struct AnchorProvenance {
    pub map: CalibrationMap,
    pub scene_id: String,
}

/// Pixel-aligned pair: `image_a` in camera A's space, `image_b` in camera B's.
#[derive(Debug, Clone)]
pub struct AnchorPair {
    pub image_a: PackedImage,
    pub image_b: PackedImage,
    pub provenance: AnchorProvenance,
}

/// Fits POLY11 maps in both directions from the record's chart and region
/// samples and applies each to the chart-free capture of its source camera.
/// The first pair holds A's capture with its mapping into B; the second holds
/// B's capture with its mapping into A.
pub fn build_anchor_pair(
    images: PairImages<'_>,
    record: &AnnotationRecord,
    weights: SampleWeights,
) -> Result<(AnchorPair, AnchorPair)> {
    let a_to_b = collect_samples(images, record, weights)?;
    let cam_a = images.a_free.camera_id.clone();
    let cam_b = images.b_free.camera_id.clone();
    let map_ab = fit_map(&a_to_b, Kernel::Poly11)?.with_cameras(&cam_a, &cam_b);
    let map_ba = fit_map(&reversed(&a_to_b), Kernel::Poly11)?.with_cameras(&cam_b, &cam_a);
    let mapped_a = apply_map(images.a_free, &map_ab)?.image;
    let mapped_b = apply_map(images.b_free, &map_ba)?.image;
    Ok((
        AnchorPair {
            image_a: images.a_free.clone(),
            image_b: mapped_a,
            provenance: AnchorProvenance { map: map_ab, scene_id: record.pair_id.clone() },
        },
        AnchorPair {
            image_a: mapped_b,
            image_b: images.b_free.clone(),
            provenance: AnchorProvenance { map: map_ba, scene_id: record.pair_id.clone() },
        },
    ))
}
