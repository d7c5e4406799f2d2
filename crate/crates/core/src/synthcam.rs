//! Discrete spectral image formation and a synthetic two-sensor dataset.
//!
//! A pixel's response in channel c is `Σ_λ ρ(λ) R(x, λ) S_c(λ) Δλ`, followed
//! by a per-scene exposure scale and clipping to [0, 1]. Scenes are built from
//! smooth random reflectance spectra laid out as soft-edged Voronoi regions and
//! lit by blackbody illuminants, so both sensors see exactly the same physics.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rawio::{CfaPattern, FrameMeta, Patch, PackedImage, RawFrame};

/// Value the 99th percentile of a rendered scene is scaled to.
pub const EXPOSURE_TARGET: f64 = 0.9;
/// Brightest chart patch is kept at or below this value so chart samples never clip.
pub const CHART_CEILING: f64 = 0.98;
/// Neutral chart patch reflectances (white to black).
pub const NEUTRAL_REFLECTANCES: [f64; 6] = [0.9, 0.59, 0.36, 0.19, 0.09, 0.031];
/// Seed of the fixed chart spectra; the chart is the same physical object in every scene.
const CHART_SEED: u64 = 0x5EED_C4A7;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("wavelength grid mismatch: {0}")]
    Grid(String),
    #[error("invalid sensor: {0}")]
    Sensor(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error(transparent)]
    RawIo(#[from] crate::rawio::RawIoError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Uniform wavelength grid, 400–700 nm at 10 nm.
pub fn default_grid() -> Vec<f64> {
    (0..31).map(|i| 400.0 + 10.0 * i as f64).collect()
}

/// Rectangle-rule weights: Δλ_i = λ_{i+1} − λ_i, the last point reusing the
/// previous spacing.
pub fn grid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|i| if i + 1 < n { grid[i + 1] - grid[i] } else { grid[n - 1] - grid[n - 2] })
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(SynthError::Grid("need at least two wavelengths".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SynthError::Grid("wavelengths must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSensor {
    pub name: String,
    pub wavelengths: Vec<f64>,
    /// Sensitivity curves S_R, S_G, S_B sampled on `wavelengths`.
    pub sensitivity: [Vec<f64>; 3],
}

impl SpectralSensor {
    pub fn new(name: impl Into<String>, wavelengths: Vec<f64>, sensitivity: [Vec<f64>; 3]) -> Result<Self> {
        check_grid(&wavelengths)?;
        for (c, s) in sensitivity.iter().enumerate() {
            if s.len() != wavelengths.len() {
                return Err(SynthError::Sensor(format!("channel {c} has {} samples", s.len())));
            }
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(SynthError::Sensor(format!("channel {c} has a negative or non-finite value")));
            }
        }
        Ok(SpectralSensor { name: name.into(), wavelengths, sensitivity })
    }

    /// Gaussian-shaped sensitivities with the given peaks and standard deviations (nm).
    pub fn gaussian(name: impl Into<String>, grid: &[f64], peaks: [f64; 3], widths: [f64; 3]) -> Result<Self> {
        let curve = |mu: f64, sigma: f64| -> Vec<f64> {
            grid.iter().map(|&l| (-0.5 * ((l - mu) / sigma).powi(2)).exp()).collect()
        };
        Self::new(
            name,
            grid.to_vec(),
            [curve(peaks[0], widths[0]), curve(peaks[1], widths[1]), curve(peaks[2], widths[2])],
        )
    }

    /// Reference sensor used as camera A in the synthetic experiments.
    pub fn reference(grid: &[f64]) -> Self {
        Self::gaussian("synthA", grid, [605.0, 540.0, 455.0], [38.0, 40.0, 28.0]).expect("valid preset")
    }

    /// Sensor whose curves are `mix · self`; the two sensors are related by an
    /// exact 3×3 linear map. `mix` must be non-negative.
    pub fn mixed(&self, name: impl Into<String>, mix: [[f64; 3]; 3]) -> Result<Self> {
        let n = self.wavelengths.len();
        let sens = std::array::from_fn(|c| {
            (0..n).map(|i| (0..3).map(|j| mix[c][j] * self.sensitivity[j][i]).sum()).collect()
        });
        Self::new(name, self.wavelengths.clone(), sens)
    }

    /// Sensitivities shifted by `shift` nm per channel and narrowed by `narrow`
    /// (σ multiplied), i.e. a sensor not linearly related to a Gaussian reference.
    pub fn shifted_gaussian(
        name: impl Into<String>,
        grid: &[f64],
        peaks: [f64; 3],
        widths: [f64; 3],
        shift: [f64; 3],
        narrow: f64,
    ) -> Result<Self> {
        Self::gaussian(
            name,
            grid,
            std::array::from_fn(|c| peaks[c] + shift[c]),
            std::array::from_fn(|c| widths[c] * narrow),
        )
    }
}

/// Camera B for the nonlinear regime: shifted, narrowed curves relative to [`SpectralSensor::reference`].
pub fn nonlinear_partner(grid: &[f64]) -> SpectralSensor {
    SpectralSensor::shifted_gaussian(
        "synthB",
        grid,
        [605.0, 540.0, 455.0],
        [38.0, 40.0, 28.0],
        [-22.0, 18.0, 20.0],
        0.6,
    )
    .expect("valid preset")
}

/// Camera B for the linear regime.
pub fn linear_partner(reference: &SpectralSensor) -> SpectralSensor {
    reference.mixed("synthB", LINEAR_MIX).expect("non-negative mix")
}

/// Channel mixing relating the linear-regime sensors.
pub const LINEAR_MIX: [[f64; 3]; 3] = [[0.85, 0.2, 0.0], [0.1, 0.8, 0.15], [0.0, 0.12, 0.9]];

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralScene {
    pub wavelengths: Vec<f64>,
    /// Illuminant spectral power ρ(λ).
    pub illuminant: Vec<f64>,
    /// Reflectance R(x, λ), shape (h, w, |λ|), values in [0, 1].
    pub reflectance: Array3<f64>,
}

impl SpectralScene {
    pub fn new(wavelengths: Vec<f64>, illuminant: Vec<f64>, reflectance: Array3<f64>) -> Result<Self> {
        check_grid(&wavelengths)?;
        if illuminant.len() != wavelengths.len() || reflectance.dim().2 != wavelengths.len() {
            return Err(SynthError::Grid("scene arrays do not match the wavelength grid".into()));
        }
        if illuminant.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SynthError::Scene("illuminant must be non-negative".into()));
        }
        if reflectance.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SynthError::Scene("reflectance must lie in [0, 1]".into()));
        }
        Ok(SpectralScene { wavelengths, illuminant, reflectance })
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.reflectance.dim().0, self.reflectance.dim().1)
    }
}

fn check_shared_grid(scene: &SpectralScene, sensor: &SpectralSensor) -> Result<()> {
    if scene.wavelengths != sensor.wavelengths {
        return Err(SynthError::Grid(format!(
            "scene has {} wavelengths, sensor {} has {}",
            scene.wavelengths.len(),
            sensor.name,
            sensor.wavelengths.len()
        )));
    }
    Ok(())
}

/// Unscaled, unclipped linear response, shape (h, w, 3).
pub fn render_linear(scene: &SpectralScene, sensor: &SpectralSensor) -> Result<Array3<f64>> {
    check_shared_grid(scene, sensor)?;
    let dl = grid_weights(&scene.wavelengths);
    // Fold illuminant, sensitivity and Δλ into one weight per (channel, λ).
    let kernel: Vec<[f64; 3]> = (0..dl.len())
        .map(|i| std::array::from_fn(|c| scene.illuminant[i] * sensor.sensitivity[c][i] * dl[i]))
        .collect();
    let (h, w) = scene.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let r = scene.reflectance.slice(ndarray::s![y, x, ..]);
            let mut acc = [0.0; 3];
            for (rv, k) in r.iter().zip(&kernel) {
                for c in 0..3 {
                    acc[c] += rv * k[c];
                }
            }
            for c in 0..3 {
                out[[y, x, c]] = acc[c];
            }
        }
    }
    Ok(out)
}

/// Response of the sensor to a perfect white reflector under the scene's illuminant.
pub fn white_response(illuminant: &[f64], sensor: &SpectralSensor) -> [f64; 3] {
    let dl = grid_weights(&sensor.wavelengths);
    std::array::from_fn(|c| (0..dl.len()).map(|i| illuminant[i] * sensor.sensitivity[c][i] * dl[i]).sum())
}

/// Response of the sensor to a flat patch of the given reflectance spectrum.
pub fn patch_response(illuminant: &[f64], reflectance: &[f64], sensor: &SpectralSensor) -> [f64; 3] {
    let dl = grid_weights(&sensor.wavelengths);
    std::array::from_fn(|c| {
        (0..dl.len()).map(|i| illuminant[i] * reflectance[i] * sensor.sensitivity[c][i] * dl[i]).sum()
    })
}

/// Nearest-rank 99th percentile of all values.
pub fn percentile99(values: &Array3<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((0.99 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Exposure constant mapping the given 99th-percentile value onto [`EXPOSURE_TARGET`].
pub fn exposure_for(p99: f64) -> f64 {
    if p99 > 0.0 {
        EXPOSURE_TARGET / p99
    } else {
        1.0
    }
}

/// Output of [`render`]: the clipped image plus the exposure that produced it.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: PackedImage,
    pub exposure: f64,
}

/// Renders with a caller-chosen exposure.
pub fn render_with_exposure(scene: &SpectralScene, sensor: &SpectralSensor, exposure: f64) -> Result<PackedImage> {
    let lin = render_linear(scene, sensor)?;
    Ok(PackedImage::from_clipped(lin * exposure, sensor.name.clone()))
}

/// Renders and scales so the 99th percentile sits at [`EXPOSURE_TARGET`].
pub fn render(scene: &SpectralScene, sensor: &SpectralSensor) -> Result<Rendered> {
    let lin = render_linear(scene, sensor)?;
    let exposure = exposure_for(percentile99(&lin));
    Ok(Rendered { image: PackedImage::from_clipped(lin * exposure, sensor.name.clone()), exposure })
}

/// Relative spectral power of a blackbody at `kelvin`, normalized to peak 1 on the grid.
pub fn blackbody(grid: &[f64], kelvin: f64) -> Vec<f64> {
    const C2: f64 = 1.4388e7; // nm·K
    let raw: Vec<f64> = grid.iter().map(|&l| l.powi(-5) / ((C2 / (l * kelvin)).exp() - 1.0)).collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    raw.into_iter().map(|v| v / peak).collect()
}

/// Smooth reflectance spectrum: a base level plus 1–3 Gaussian bumps, clipped to [0.02, 0.95].
pub fn random_reflectance<R: Rng>(rng: &mut R, grid: &[f64]) -> Vec<f64> {
    let base = rng.random_range(0.03..0.35);
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| (rng.random_range(380.0..720.0), rng.random_range(20.0..70.0), rng.random_range(-0.2..0.7)))
        .collect();
    grid.iter()
        .map(|&l| {
            let v = base + bumps.iter().map(|&(mu, s, a)| a * (-0.5 * ((l - mu) / s).powi(2)).exp()).sum::<f64>();
            v.clamp(0.02, 0.95)
        })
        .collect()
}

/// Random scene: 4–8 materials on soft-edged Voronoi cells with a gentle shading gradient.
pub fn random_scene<R: Rng>(rng: &mut R, height: usize, width: usize, grid: &[f64]) -> SpectralScene {
    let n_materials = rng.random_range(4..=8);
    let materials: Vec<Vec<f64>> = (0..n_materials).map(|_| random_reflectance(rng, grid)).collect();
    let n_cells = rng.random_range(6..=12);
    let cells: Vec<(f64, f64, usize)> = (0..n_cells)
        .map(|i| {
            (
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                if i < n_materials { i } else { rng.random_range(0..n_materials) },
            )
        })
        .collect();
    let (gy, gx) = (rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25));
    let softness = 1.5;
    let illuminant = blackbody(grid, rng.random_range(2800.0..7500.0));
    let l = grid.len();
    let mut reflectance = Array3::zeros((height, width, l));
    let mut weights = vec![0.0; n_cells];
    for y in 0..height {
        for x in 0..width {
            let d: Vec<f64> =
                cells.iter().map(|&(cy, cx, _)| ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt()).collect();
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut total = 0.0;
            for (wgt, di) in weights.iter_mut().zip(&d) {
                *wgt = (-(di - dmin) / softness).exp();
                total += *wgt;
            }
            let shade = 0.75 + gy * (y as f64 / height as f64 - 0.5) + gx * (x as f64 / width as f64 - 0.5);
            for k in 0..l {
                let mut v = 0.0;
                for (wgt, &(_, _, m)) in weights.iter().zip(&cells) {
                    v += wgt * materials[m][k];
                }
                reflectance[[y, x, k]] = (shade * v / total).clamp(0.0, 1.0);
            }
        }
    }
    SpectralScene { wavelengths: grid.to_vec(), illuminant, reflectance }
}

/// The 24 chart reflectances: 18 fixed chromatic spectra followed by 6 neutrals.
pub fn chart_reflectances(grid: &[f64]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CHART_SEED);
    let mut out: Vec<Vec<f64>> = (0..18).map(|_| random_reflectance(&mut rng, grid)).collect();
    out.extend(NEUTRAL_REFLECTANCES.iter().map(|&r| vec![r; grid.len()]));
    out
}

/// Labels of the chart patches; neutral ones start with `neutral`.
pub fn chart_labels() -> Vec<String> {
    (0..18)
        .map(|i| format!("chroma{i:02}"))
        .chain((0..6).map(|i| format!("neutral{i}")))
        .collect()
}

/// Geometry of the 4×6 chart pasted into the bottom-right of a scene.
#[derive(Debug, Clone, Copy)]
pub struct ChartLayout {
    pub origin_y: usize,
    pub origin_x: usize,
    pub cell: usize,
}

impl ChartLayout {
    pub fn for_size(height: usize, width: usize) -> Self {
        let cell = (height.min(width) / 12).max(4);
        ChartLayout { origin_y: height - 4 * cell - 1, origin_x: width - 6 * cell - 1, cell }
    }

    /// Sampling patches inset inside each chart cell: two pixels for cells of
    /// 10 pixels or more, one below that, so every patch is at least 2 wide.
    pub fn patches(&self) -> Vec<Patch> {
        let labels = chart_labels();
        let inset = (self.cell / 5).clamp(1, 2);
        (0..24)
            .map(|i| {
                let (r, c) = (i / 6, i % 6);
                Patch::labeled(
                    self.origin_x + c * self.cell + inset,
                    self.origin_y + r * self.cell + inset,
                    self.cell - 2 * inset,
                    labels[i].clone(),
                )
            })
            .collect()
    }
}

/// Copy of `scene` with the chart pasted in (cells separated by a dark border).
pub fn with_chart(scene: &SpectralScene) -> SpectralScene {
    let (h, w) = scene.dim();
    let layout = ChartLayout::for_size(h, w);
    let spectra = chart_reflectances(&scene.wavelengths);
    let mut out = scene.clone();
    let border = 0.04;
    for y in layout.origin_y..layout.origin_y + 4 * layout.cell {
        for x in layout.origin_x..layout.origin_x + 6 * layout.cell {
            let (ry, rx) = ((y - layout.origin_y) % layout.cell, (x - layout.origin_x) % layout.cell);
            let inside = ry >= 1 && rx >= 1 && ry + 1 < layout.cell && rx + 1 < layout.cell;
            let idx = (y - layout.origin_y) / layout.cell * 6 + (x - layout.origin_x) / layout.cell;
            for k in 0..scene.wavelengths.len() {
                out.reflectance[[y, x, k]] = if inside { spectra[idx][k] } else { border };
            }
        }
    }
    out
}

/// Scene with a spatially flat reflectance everywhere.
pub fn flat_scene(grid: &[f64], illuminant: Vec<f64>, reflectance: &[f64], height: usize, width: usize) -> SpectralScene {
    let r = Array3::from_shape_fn((height, width, grid.len()), |(_, _, k)| reflectance[k]);
    SpectralScene { wavelengths: grid.to_vec(), illuminant, reflectance: r }
}

/// Least-squares 3×3 matrix taking sensor responses to CIE XYZ, scaled so
/// that (1, 1, 1) maps to the D65 white. Colour matching functions use the
/// multi-lobe Gaussian fit of the CIE 1931 2° observer.
pub fn xyz_profile(sensor: &SpectralSensor) -> [[f64; 3]; 3] {
    let g = |l: f64, mu: f64, s1: f64, s2: f64| {
        let t = (l - mu) / if l < mu { s1 } else { s2 };
        (-0.5 * t * t).exp()
    };
    let cmf = |l: f64| -> [f64; 3] {
        [
            1.056 * g(l, 599.8, 37.9, 31.0) + 0.362 * g(l, 442.0, 16.0, 26.7) - 0.065 * g(l, 501.1, 20.4, 26.2),
            0.821 * g(l, 568.8, 46.9, 40.5) + 0.286 * g(l, 530.9, 16.3, 31.1),
            1.217 * g(l, 437.0, 11.8, 36.0) + 0.681 * g(l, 459.0, 26.0, 13.8),
        ]
    };
    let n = sensor.wavelengths.len();
    let s = nalgebra::DMatrix::from_fn(n, 3, |i, c| sensor.sensitivity[c][i]);
    let t = nalgebra::DMatrix::from_fn(n, 3, |i, c| cmf(sensor.wavelengths[i])[c]);
    let sts = s.transpose() * &s;
    let stt = s.transpose() * t;
    // Solve S·Mᵀ ≈ T in the least-squares sense.
    let mt = sts.lu().solve(&stt).expect("sensor curves are linearly independent");
    let m = nalgebra::Matrix3::from_fn(|r, c| mt[(c, r)]);
    let white = nalgebra::Vector3::new(crate::evalkit::D65_WHITE[0], crate::evalkit::D65_WHITE[1], crate::evalkit::D65_WHITE[2]);
    let d = m.lu().solve(&white).expect("invertible profile");
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)] * d[c]))
}

// ---------------------------------------------------------------------------
// Paired dataset

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "unpaired_A")]
    UnpairedA,
    #[serde(rename = "unpaired_B")]
    UnpairedB,
    #[serde(rename = "anchor")]
    Anchor,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::UnpairedA => "ua",
            Split::UnpairedB => "ub",
            Split::Anchor => "anchor",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Chart-free capture.
    Free,
    /// The same scene with the calibration chart present.
    Chart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Frame stem relative to the dataset root.
    pub path: String,
    pub camera_id: String,
    pub split: Split,
    pub scene_id: String,
    pub variant: Variant,
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub camera_a: String,
    pub camera_b: String,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn entries_for<'a>(
        &'a self,
        split: Split,
        camera: &'a str,
        variant: Variant,
    ) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.split == split && e.camera_id == camera && e.variant == variant)
    }

    /// Scene ids of a split in manifest order, deduplicated.
    pub fn scenes(&self, split: Split) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            if !out.contains(&e.scene_id) {
                out.push(e.scene_id.clone());
            }
        }
        out
    }

    pub fn find(&self, split: Split, scene: &str, camera: &str, variant: Variant) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.split == split && e.scene_id == scene && e.camera_id == camera && e.variant == variant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPlan {
    /// Unpaired scenes per camera (distinct scenes for A and B).
    pub n_unpaired: usize,
    pub n_anchor: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
}

impl DatasetPlan {
    pub fn uniform(n_scenes: usize, height: usize, width: usize) -> Self {
        DatasetPlan { n_unpaired: n_scenes, n_anchor: n_scenes, n_test: n_scenes, height, width }
    }
}

/// In-memory dataset; `frames[i]` belongs to `manifest.entries[i]`.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub frames: Vec<RawFrame>,
}

impl SyntheticDataset {
    pub fn frame(&self, entry: &ManifestEntry) -> &RawFrame {
        let idx = self.manifest.entries.iter().position(|e| e == entry).expect("entry from this manifest");
        &self.frames[idx]
    }

    /// Normalized image for an entry.
    pub fn image(&self, entry: &ManifestEntry) -> PackedImage {
        crate::rawio::normalize(self.frame(entry)).expect("synthetic frames have a valid range")
    }

    pub fn images(&self, split: Split, camera: &str, variant: Variant) -> Vec<PackedImage> {
        self.manifest.entries_for(split, camera, variant).map(|e| self.image(e)).collect()
    }

    /// Writes frames under `root/frames/` and the manifest to `root/manifest.json`.
    pub fn write(&self, root: impl AsRef<std::path::Path>) -> Result<()> {
        let root = root.as_ref();
        std::fs::create_dir_all(root.join("frames"))?;
        for (entry, frame) in self.manifest.entries.iter().zip(&self.frames) {
            crate::rawio::save_frame(frame, root.join(&entry.path))?;
        }
        std::fs::write(root.join("manifest.json"), self.manifest.to_json())?;
        Ok(())
    }

    /// Loads a dataset written by [`SyntheticDataset::write`].
    pub fn read(root: impl AsRef<std::path::Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = Manifest::load(root.join("manifest.json"))?;
        let frames = manifest
            .entries
            .iter()
            .map(|e| crate::rawio::load_frame(root.join(&e.path)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(SyntheticDataset { manifest, frames })
    }
}

fn scene_seed(seed: u64, split: Split, index: usize) -> u64 {
    let mut h = DefaultHasher::new();
    (seed, split.prefix(), index).hash(&mut h);
    h.finish()
}

/// 16-bit NONE_3CH frame from a clipped image.
pub fn to_frame(img: &PackedImage, illuminant: Option<[f64; 3]>, chart: Option<Vec<Patch>>) -> RawFrame {
    let (h, w, _) = img.data.dim();
    let meta = FrameMeta {
        width: w,
        height: h,
        cfa_pattern: CfaPattern::None3Ch,
        black_level: [0.0; 4],
        white_level: 65535.0,
        bit_depth: 16,
        camera_id: img.camera_id.clone(),
        illuminant,
        chart_patches: chart,
    };
    let pixels = img.data.mapv(|v| (v * 65535.0).round() as u16);
    RawFrame::new(meta, pixels).expect("quantized image is a valid frame")
}

/// Generates the paired dataset described by `plan`. Every scene is rendered
/// by both sensors with one shared exposure; unpaired splits keep a single
/// camera's render. Anchor and test scenes also get a chart variant.
pub fn generate_dataset(
    plan: &DatasetPlan,
    sensor_a: &SpectralSensor,
    sensor_b: &SpectralSensor,
    seed: u64,
) -> Result<SyntheticDataset> {
    if sensor_a.wavelengths != sensor_b.wavelengths {
        return Err(SynthError::Grid("sensors use different wavelength grids".into()));
    }
    let grid = sensor_a.wavelengths.clone();
    let mut entries = Vec::new();
    let mut frames = Vec::new();
    let splits = [
        (Split::UnpairedA, plan.n_unpaired),
        (Split::UnpairedB, plan.n_unpaired),
        (Split::Anchor, plan.n_anchor),
        (Split::Test, plan.n_test),
    ];
    for (split, count) in splits {
        for index in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(seed, split, index));
            let scene = random_scene(&mut rng, plan.height, plan.width, &grid);
            let scene_id = format!("{}-{index:03}", split.prefix());
            let lin_a = render_linear(&scene, sensor_a)?;
            let lin_b = render_linear(&scene, sensor_b)?;
            let with_chart_variant = matches!(split, Split::Anchor | Split::Test);
            let chart_scene = with_chart_variant.then(|| with_chart(&scene));
            let mut exposure = exposure_for(percentile99(&lin_a).max(percentile99(&lin_b)));
            if let Some(cs) = &chart_scene {
                let brightest = chart_reflectances(&grid)
                    .iter()
                    .flat_map(|r| [patch_response(&cs.illuminant, r, sensor_a), patch_response(&cs.illuminant, r, sensor_b)])
                    .flatten()
                    .fold(0.0, f64::max);
                exposure = exposure.min(CHART_CEILING / brightest);
            }
            let cameras: Vec<(&SpectralSensor, &Array3<f64>)> = match split {
                Split::UnpairedA => vec![(sensor_a, &lin_a)],
                Split::UnpairedB => vec![(sensor_b, &lin_b)],
                _ => vec![(sensor_a, &lin_a), (sensor_b, &lin_b)],
            };
            for (sensor, lin) in cameras {
                let white = white_response(&scene.illuminant, sensor).map(|v| v * exposure);
                let img = PackedImage::from_clipped(lin * exposure, sensor.name.clone());
                let path = format!("frames/{scene_id}_{}_free", sensor.name);
                entries.push(ManifestEntry {
                    path,
                    camera_id: sensor.name.clone(),
                    split,
                    scene_id: scene_id.clone(),
                    variant: Variant::Free,
                    exposure,
                });
                frames.push(to_frame(&img, Some(white), None));
                if let Some(cs) = &chart_scene {
                    let img = render_with_exposure(cs, sensor, exposure)?;
                    let patches = ChartLayout::for_size(plan.height, plan.width).patches();
                    entries.push(ManifestEntry {
                        path: format!("frames/{scene_id}_{}_chart", sensor.name),
                        camera_id: sensor.name.clone(),
                        split,
                        scene_id: scene_id.clone(),
                        variant: Variant::Chart,
                        exposure,
                    });
                    frames.push(to_frame(&img, Some(white), Some(patches)));
                }
            }
        }
    }
    Ok(SyntheticDataset {
        manifest: Manifest {
            seed,
            camera_a: sensor_a.name.clone(),
            camera_b: sensor_b.name.clone(),
            height: plan.height,
            width: plan.width,
            entries,
        },
        frames,
    })
}

/// Convenience wrapper: `n_scenes` scenes in every split at 64×64.
pub fn make_paired_dataset(
    n_scenes: usize,
    sensor_a: &SpectralSensor,
    sensor_b: &SpectralSensor,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_scenes == 0 {
        return Err(SynthError::Scene("n_scenes must be at least 1".into()));
    }
    generate_dataset(&DatasetPlan::uniform(n_scenes, 64, 64), sensor_a, sensor_b, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spike_sensor(grid: &[f64], at: usize) -> SpectralSensor {
        let s: Vec<f64> = (0..grid.len()).map(|i| if i == at { 1.0 } else { 0.0 }).collect();
        SpectralSensor::new("spike", grid.to_vec(), [s.clone(), s.clone(), s]).unwrap()
    }

    #[test]
    fn zero_reflectance_renders_black() {
        let grid = default_grid();
        let scene = flat_scene(&grid, vec![1.0; grid.len()], &vec![0.0; grid.len()], 4, 5);
        let r = render(&scene, &SpectralSensor::reference(&grid)).unwrap();
        assert!(r.image.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_spike_sum() {
        let grid = default_grid();
        let scene = flat_scene(&grid, vec![1.0; grid.len()], &vec![1.0; grid.len()], 3, 3);
        let sensor = spike_sensor(&grid, 7);
        let exposure = 0.05;
        let img = render_with_exposure(&scene, &sensor, exposure).unwrap();
        assert!(img.data.iter().all(|&v| (v - 10.0 * exposure).abs() < 1e-12));
        let r = render(&scene, &sensor).unwrap();
        assert!(r.image.data.iter().all(|&v| (v - 10.0 * r.exposure).abs() < 1e-12));
    }

    #[test]
    fn grid_mismatch() {
        let grid = default_grid();
        let scene = flat_scene(&grid[..10], vec![1.0; 10], &[0.5; 10], 2, 2);
        assert!(matches!(render(&scene, &SpectralSensor::reference(&grid)), Err(SynthError::Grid(_))));
    }

    #[test]
    fn equal_sensors_render_identically() {
        let grid = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = random_scene(&mut rng, 16, 16, &grid);
        let a = SpectralSensor::reference(&grid);
        let b = SpectralSensor { name: "copy".into(), ..a.clone() };
        assert_eq!(render(&scene, &a).unwrap().image.data, render(&scene, &b).unwrap().image.data);
    }

    #[test]
    fn gain_covariance_matches_direct_sum() {
        let grid = default_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scene = random_scene(&mut rng, 6, 7, &grid);
        let a = SpectralSensor::reference(&grid);
        let gain = [1.3, 0.7, 2.0];
        let b = a.mixed("gain", [[gain[0], 0.0, 0.0], [0.0, gain[1], 0.0], [0.0, 0.0, gain[2]]]).unwrap();
        let la = render_linear(&scene, &a).unwrap();
        let lb = render_linear(&scene, &b).unwrap();
        for ((y, x, c), v) in lb.indexed_iter() {
            // Direct per-pixel evaluation of the rendering sum.
            let direct: f64 = (0..grid.len())
                .map(|k| scene.illuminant[k] * scene.reflectance[[y, x, k]] * gain[c] * a.sensitivity[c][k] * 10.0)
                .sum();
            assert!((v - direct).abs() < 1e-9 * direct.abs().max(1.0));
            assert!((v - gain[c] * la[[y, x, c]]).abs() < 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn blackbody_peaks_at_one() {
        let grid = default_grid();
        let b = blackbody(&grid, 5000.0);
        assert!((b.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        // Warm light rises toward red.
        let warm = blackbody(&grid, 3000.0);
        assert!(warm[30] > warm[0]);
    }

    #[test]
    fn dataset_is_deterministic_and_counts() {
        let grid = default_grid();
        let a = SpectralSensor::reference(&grid);
        let b = nonlinear_partner(&grid);
        let plan = DatasetPlan::uniform(1, 32, 32);
        let d1 = generate_dataset(&plan, &a, &b, 9).unwrap();
        let d2 = generate_dataset(&plan, &a, &b, 9).unwrap();
        assert_eq!(d1.manifest.to_json(), d2.manifest.to_json());
        assert_eq!(d1.frames, d2.frames);
        assert_eq!(d1.manifest.entries_for(Split::UnpairedA, "synthA", Variant::Free).count(), 1);
        assert_eq!(d1.manifest.entries_for(Split::UnpairedB, "synthB", Variant::Free).count(), 1);
        assert_eq!(d1.manifest.entries_for(Split::UnpairedA, "synthB", Variant::Free).count(), 0);
        assert_eq!(d1.manifest.scenes(Split::Anchor).len(), 1);
        assert_eq!(d1.manifest.scenes(Split::Test).len(), 1);
        let d3 = generate_dataset(&plan, &a, &b, 10).unwrap();
        assert_ne!(d1.frames, d3.frames);
    }

    #[test]
    fn chart_patches_never_clip() {
        let grid = default_grid();
        let a = SpectralSensor::reference(&grid);
        let b = nonlinear_partner(&grid);
        let d = generate_dataset(&DatasetPlan { n_unpaired: 0, n_anchor: 3, n_test: 0, height: 48, width: 48 }, &a, &b, 1)
            .unwrap();
        for e in d.manifest.entries.iter().filter(|e| e.variant == Variant::Chart) {
            let img = d.image(e);
            for p in d.frame(e).meta.chart_patches.as_ref().unwrap() {
                for y in p.y..p.y + p.size {
                    for x in p.x..p.x + p.size {
                        assert!(img.data.slice(ndarray::s![y, x, ..]).iter().all(|&v| v < 1.0), "{} at {y},{x}", e.path);
                    }
                }
            }
        }
    }

    #[test]
    fn profile_maps_unit_to_white() {
        let grid = default_grid();
        let m = xyz_profile(&SpectralSensor::reference(&grid));
        for r in 0..3 {
            let s: f64 = m[r].iter().sum();
            assert!((s - crate::evalkit::D65_WHITE[r]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_scene_count_rejected() {
        let grid = default_grid();
        let a = SpectralSensor::reference(&grid);
        assert!(make_paired_dataset(0, &a, &a, 1).is_err());
    }
}
