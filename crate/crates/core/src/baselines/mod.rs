//! Comparison methods: global per-pair calibration and Fourier domain
//! adaptation, each repeated over every available anchor.

mod fda;

use thiserror::Error;

use crate::calibfit::{apply_map, fit_map, CalibError, ColorSamplePair, Kernel};
use crate::evalkit::{evaluate, CameraColorProfile, EvalError, EvalPair, IlluminantSource, MetricsReport};
use crate::rawio::{PackedImage, Patch};

pub use fda::{fda_map, fda_swap, in_window, resize_bilinear, FdaConfig, DEFAULT_BETA, MAX_BETA};

pub const LABEL_GLOBAL_3X3: &str = "global-3x3";
pub const LABEL_GLOBAL_POLY: &str = "global-poly";
pub const LABEL_FDA: &str = "fda";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Empty(String),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

pub fn kernel_label(kernel: Kernel) -> &'static str {
    match kernel {
        Kernel::Identity => LABEL_GLOBAL_3X3,
        Kernel::Poly11 => LABEL_GLOBAL_POLY,
    }
}

/// Color correspondences from one annotated anchor pair, source → target.
#[derive(Debug, Clone)]
pub struct CalibrationAnchor {
    pub name: String,
    pub samples: Vec<ColorSamplePair>,
}

/// A test scene: the source-camera capture and its target-camera ground truth.
#[derive(Debug, Clone)]
pub struct TestPair {
    pub name: String,
    pub src: PackedImage,
    pub gt: PackedImage,
    pub illuminant: Option<[f64; 3]>,
    pub achromatic: Option<Vec<Patch>>,
}

impl TestPair {
    pub fn new(name: impl Into<String>, src: PackedImage, gt: PackedImage) -> Self {
        TestPair { name: name.into(), src, gt, illuminant: None, achromatic: None }
    }

    fn eval_pair(&self, mapped: PackedImage) -> EvalPair {
        EvalPair {
            name: self.name.clone(),
            mapped,
            gt: self.gt.clone(),
            illuminant: self.illuminant,
            achromatic: self.achromatic.clone(),
        }
    }
}

/// Shared evaluation settings for baseline runs.
#[derive(Debug, Clone)]
pub struct RunContext<'a> {
    pub profile: &'a CameraColorProfile,
    pub illuminant: IlluminantSource,
    pub direction: String,
}

/// Result of repeating a method over anchors: one row per anchor holding that
/// repetition's mean metrics, plus the per-image detail of each repetition.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub report: MetricsReport,
    pub repetitions: Vec<MetricsReport>,
}

fn collect(label: &str, ctx: &RunContext<'_>, repetitions: Vec<(String, MetricsReport)>) -> BaselineRun {
    let rows = repetitions.iter().map(|(name, r)| r.summary_row(name.clone())).collect();
    BaselineRun {
        report: MetricsReport::new(label, ctx.direction.clone(), rows),
        repetitions: repetitions.into_iter().map(|(_, r)| r).collect(),
    }
}

/// Fits one map per anchor, applies it to every test image and evaluates.
pub fn global_calibration_run(
    anchors: &[CalibrationAnchor],
    tests: &[TestPair],
    kernel: Kernel,
    ctx: &RunContext<'_>,
) -> Result<BaselineRun> {
    if anchors.is_empty() {
        return Err(BaselineError::Empty("global calibration needs at least one anchor pair".into()));
    }
    let label = kernel_label(kernel);
    let mut reps = Vec::with_capacity(anchors.len());
    for anchor in anchors {
        let map = fit_map(&anchor.samples, kernel)?;
        let pairs = tests
            .iter()
            .map(|t| Ok(t.eval_pair(apply_map(&t.src, &map)?.image)))
            .collect::<Result<Vec<_>>>()?;
        reps.push((anchor.name.clone(), evaluate(&pairs, ctx.profile, ctx.illuminant, label, ctx.direction.clone())?));
    }
    Ok(collect(label, ctx, reps))
}

/// Uses each target-camera anchor image in turn as the FDA style target.
pub fn fda_run(
    anchors: &[(String, PackedImage)],
    tests: &[TestPair],
    cfg: &FdaConfig,
    ctx: &RunContext<'_>,
) -> Result<BaselineRun> {
    cfg.validate()?;
    if anchors.is_empty() {
        return Err(BaselineError::Empty("FDA needs at least one target-camera anchor image".into()));
    }
    let mut reps = Vec::with_capacity(anchors.len());
    for (name, target) in anchors {
        let pairs =
            tests.iter().map(|t| Ok(t.eval_pair(fda_map(&t.src, target, cfg)?))).collect::<Result<Vec<_>>>()?;
        reps.push((name.clone(), evaluate(&pairs, ctx.profile, ctx.illuminant, LABEL_FDA, ctx.direction.clone())?));
    }
    Ok(collect(LABEL_FDA, ctx, reps))
}
