//! Raw sensor frames: a portable container, black/white-level normalization,
//! RGGB packing and gamma previews.
//!
//! A frame on disk is a pair of files sharing a stem: `<stem>.raw16` holds the
//! row-major 16-bit little-endian payload (channel-interleaved for 3-channel
//! frames) and `<stem>.json` holds the metadata sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Encoding gamma used for raw visualization.
pub const PREVIEW_GAMMA: f64 = 1.0 / 1.6;

#[derive(Debug, Error)]
pub enum RawIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("degenerate range: white level {white} equals black level {black} on channel {channel}")]
    DegenerateRange { channel: usize, black: f64, white: f64 },
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, RawIoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CfaPattern {
    #[serde(rename = "RGGB")]
    Rggb,
    #[serde(rename = "BGGR")]
    Bggr,
    #[serde(rename = "GRBG")]
    Grbg,
    #[serde(rename = "GBRG")]
    Gbrg,
    #[serde(rename = "NONE_3CH")]
    None3Ch,
}

impl CfaPattern {
    /// Packed channel index (R, G1, G2, B) of each site in the 2×2 tile,
    /// indexed `[row % 2][col % 2]`. `None` for 3-channel frames.
    pub fn tile(self) -> Option<[[usize; 2]; 2]> {
        match self {
            CfaPattern::Rggb => Some([[0, 1], [2, 3]]),
            CfaPattern::Bggr => Some([[3, 1], [2, 0]]),
            CfaPattern::Grbg => Some([[1, 0], [3, 2]]),
            CfaPattern::Gbrg => Some([[1, 3], [0, 2]]),
            CfaPattern::None3Ch => None,
        }
    }

    pub fn is_mosaic(self) -> bool {
        self != CfaPattern::None3Ch
    }

    /// Number of channels stored per pixel in the payload.
    pub fn payload_channels(self) -> usize {
        if self.is_mosaic() {
            1
        } else {
            3
        }
    }
}

/// A square patch in packed-image coordinates (top-left corner and edge length).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Patch {
    pub fn new(x: usize, y: usize, size: usize) -> Self {
        Patch { x, y, size, label: None }
    }

    pub fn labeled(x: usize, y: usize, size: usize, label: impl Into<String>) -> Self {
        Patch { x, y, size, label: Some(label.into()) }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.size > 0 && self.x + self.size <= width && self.y + self.size <= height
    }
}

/// Black level as written in the sidecar: a scalar broadcast to all channels
/// or one value per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum BlackLevelSpec {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    cfa_pattern: CfaPattern,
    black_level: BlackLevelSpec,
    white_level: f64,
    bit_depth: u32,
    camera_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    illuminant: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chart_patches: Option<Vec<Patch>>,
}

/// Everything about a frame except its pixel payload.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub width: usize,
    pub height: usize,
    pub cfa_pattern: CfaPattern,
    /// Black level per packed channel, in (R, G1, G2, B) order. For 3-channel
    /// frames the G entry is read from G1.
    pub black_level: [f64; 4],
    pub white_level: f64,
    pub bit_depth: u32,
    pub camera_id: String,
    pub illuminant: Option<[f64; 3]>,
    pub chart_patches: Option<Vec<Patch>>,
}

impl FrameMeta {
    pub fn max_count(&self) -> u32 {
        ((1u64 << self.bit_depth) - 1) as u32
    }

    fn black_for(&self, packed_channel: usize, channels: usize) -> f64 {
        if channels == 3 {
            [self.black_level[0], self.black_level[1], self.black_level[3]][packed_channel]
        } else {
            self.black_level[packed_channel]
        }
    }

    /// Checks the invariants shared by every frame.
    pub fn validate(&self) -> Result<()> {
        if self.bit_depth == 0 || self.bit_depth > 16 {
            return Err(RawIoError::Metadata(format!(
                "bit_depth {} outside 1..=16",
                self.bit_depth
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RawIoError::Metadata("zero-sized frame".into()));
        }
        if self.cfa_pattern.is_mosaic() && (self.width % 2 != 0 || self.height % 2 != 0) {
            return Err(RawIoError::Metadata(format!(
                "mosaic frame must have even dimensions, got {}x{}",
                self.width, self.height
            )));
        }
        let max = self.max_count() as f64;
        if !(self.white_level.is_finite() && self.white_level > 0.0 && self.white_level <= max) {
            return Err(RawIoError::Metadata(format!(
                "white_level {} outside (0, {max}]",
                self.white_level
            )));
        }
        for (c, &b) in self.black_level.iter().enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(RawIoError::Metadata(format!("invalid black level {b} on channel {c}")));
            }
            if b > self.white_level {
                return Err(RawIoError::Metadata(format!(
                    "black level {b} above white level {} on channel {c}",
                    self.white_level
                )));
            }
        }
        Ok(())
    }

    /// The sidecar JSON form of this metadata.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_sidecar()).expect("sidecar serializes")
    }

    fn from_sidecar(s: Sidecar) -> Result<Self> {
        let black_level = match s.black_level {
            BlackLevelSpec::Scalar(v) => [v; 4],
            BlackLevelSpec::PerChannel(v) => match v.len() {
                1 => [v[0]; 4],
                3 => [v[0], v[1], v[1], v[2]],
                4 => [v[0], v[1], v[2], v[3]],
                n => {
                    return Err(RawIoError::Metadata(format!(
                        "black_level must be a scalar or have 3 or 4 entries, got {n}"
                    )))
                }
            },
        };
        let meta = FrameMeta {
            width: s.width,
            height: s.height,
            cfa_pattern: s.cfa_pattern,
            black_level,
            white_level: s.white_level,
            bit_depth: s.bit_depth,
            camera_id: s.camera_id,
            illuminant: s.illuminant,
            chart_patches: s.chart_patches,
        };
        meta.validate()?;
        Ok(meta)
    }

    fn to_sidecar(&self) -> Sidecar {
        let b = self.black_level;
        let black_level = if b.iter().all(|&v| v == b[0]) {
            BlackLevelSpec::Scalar(b[0])
        } else {
            BlackLevelSpec::PerChannel(b.to_vec())
        };
        Sidecar {
            width: self.width,
            height: self.height,
            cfa_pattern: self.cfa_pattern,
            black_level,
            white_level: self.white_level,
            bit_depth: self.bit_depth,
            camera_id: self.camera_id.clone(),
            illuminant: self.illuminant,
            chart_patches: self.chart_patches.clone(),
        }
    }
}

/// A sensor image in counts. `pixels` has shape (height, width, 1) for mosaic
/// frames and (height, width, 3) for `NONE_3CH`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub meta: FrameMeta,
    pub pixels: Array3<u16>,
}

impl RawFrame {
    pub fn new(meta: FrameMeta, pixels: Array3<u16>) -> Result<Self> {
        meta.validate()?;
        let expected = (meta.height, meta.width, meta.cfa_pattern.payload_channels());
        if pixels.dim() != expected {
            return Err(RawIoError::Shape(format!(
                "payload shape {:?} does not match metadata {:?}",
                pixels.dim(),
                expected
            )));
        }
        let max = meta.max_count();
        if let Some(v) = pixels.iter().find(|&&v| v as u32 > max) {
            return Err(RawIoError::CorruptPayload(format!(
                "pixel value {v} exceeds {max} for bit depth {}",
                meta.bit_depth
            )));
        }
        Ok(RawFrame { meta, pixels })
    }
}

/// Normalized image in [0, 1], shape (h, w, c) with c = 4 (R, G1, G2, B) for
/// packed Bayer data or c = 3 for RGB data.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedImage {
    pub data: Array3<f64>,
    pub camera_id: String,
}

impl PackedImage {
    /// Wraps data after checking that every value is finite and inside [0, 1].
    pub fn new(data: Array3<f64>, camera_id: impl Into<String>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RawIoError::Shape(format!("value {v} outside [0, 1]")));
        }
        check_channels(data.dim().2)?;
        Ok(PackedImage { data, camera_id: camera_id.into() })
    }

    /// Wraps data, clipping every value into [0, 1]. NaN becomes 0.
    pub fn from_clipped(mut data: Array3<f64>, camera_id: impl Into<String>) -> Self {
        data.mapv_inplace(clip01);
        PackedImage { data, camera_id: camera_id.into() }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Three-channel view of the data: packed Bayer images have their greens
    /// averaged, RGB images are copied.
    pub fn to_rgb(&self) -> Array3<f64> {
        merge_greens(&self.data)
    }
}

fn check_channels(c: usize) -> Result<()> {
    if c == 3 || c == 4 {
        Ok(())
    } else {
        Err(RawIoError::Shape(format!("expected 3 or 4 channels, got {c}")))
    }
}

pub(crate) fn clip01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// (R, G1, G2, B) → (R, (G1+G2)/2, B); 3-channel data passes through.
pub fn merge_greens(data: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = data.dim();
    if c != 4 {
        return data.clone();
    }
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            out[[y, x, 0]] = data[[y, x, 0]];
            out[[y, x, 1]] = 0.5 * (data[[y, x, 1]] + data[[y, x, 2]]);
            out[[y, x, 2]] = data[[y, x, 3]];
        }
    }
    out
}

/// Gamma-encoded RGB rendering for display, shape (h, w, 3).
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewImage {
    pub data: Array3<f64>,
}

impl PreviewImage {
    /// 8-bit interleaved RGB bytes, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("raw16") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut raw = stem.clone().into_os_string();
    raw.push(".raw16");
    let mut json = stem.into_os_string();
    json.push(".json");
    (PathBuf::from(raw), PathBuf::from(json))
}

/// Loads a frame from `<stem>.raw16` + `<stem>.json`. `path` may name either
/// file or the bare stem.
pub fn load_frame(path: impl AsRef<Path>) -> Result<RawFrame> {
    let (raw_path, json_path) = sidecar_paths(path.as_ref());
    let text = fs::read_to_string(&json_path)
        .map_err(|source| RawIoError::Io { path: json_path.clone(), source })?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| RawIoError::Metadata(e.to_string()))?;
    let meta = FrameMeta::from_sidecar(sidecar)?;
    let bytes = fs::read(&raw_path).map_err(|source| RawIoError::Io { path: raw_path.clone(), source })?;
    let channels = meta.cfa_pattern.payload_channels();
    let expected = meta.height * meta.width * channels * 2;
    if bytes.len() != expected {
        return Err(RawIoError::Shape(format!(
            "payload has {} bytes, metadata implies {expected}",
            bytes.len()
        )));
    }
    let values: Vec<u16> = bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    let pixels = Array3::from_shape_vec((meta.height, meta.width, channels), values)
        .map_err(|e| RawIoError::Shape(e.to_string()))?;
    RawFrame::new(meta, pixels)
}

/// Writes `<stem>.raw16` and `<stem>.json`.
pub fn save_frame(frame: &RawFrame, path: impl AsRef<Path>) -> Result<()> {
    let (raw_path, json_path) = sidecar_paths(path.as_ref());
    if let Some(dir) = raw_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| RawIoError::Io { path: dir.to_path_buf(), source })?;
        }
    }
    let mut bytes = Vec::with_capacity(frame.pixels.len() * 2);
    for v in frame.pixels.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(|source| RawIoError::Io { path: raw_path.clone(), source })?;
    let text = serde_json::to_string_pretty(&frame.meta.to_sidecar())
        .map_err(|e| RawIoError::Metadata(e.to_string()))?;
    fs::write(&json_path, text).map_err(|source| RawIoError::Io { path: json_path, source })
}

fn check_range(meta: &FrameMeta) -> Result<()> {
    let channels = if meta.cfa_pattern.is_mosaic() { 4 } else { 3 };
    for c in 0..channels {
        let black = meta.black_for(c, channels);
        if meta.white_level - black <= 0.0 {
            return Err(RawIoError::DegenerateRange { channel: c, black, white: meta.white_level });
        }
    }
    Ok(())
}

/// Black-level subtraction and normalization to [0, 1], packing mosaic sites
/// into (R, G1, G2, B) planes at half resolution.
pub fn normalize(frame: &RawFrame) -> Result<PackedImage> {
    let meta = &frame.meta;
    check_range(meta)?;
    let scale = |v: u16, c: usize, channels: usize| {
        let black = meta.black_for(c, channels);
        clip01((v as f64 - black) / (meta.white_level - black))
    };
    let data = match meta.cfa_pattern.tile() {
        Some(tile) => {
            let (h, w) = (meta.height / 2, meta.width / 2);
            let mut out = Array3::zeros((h, w, 4));
            for y in 0..meta.height {
                for x in 0..meta.width {
                    let c = tile[y % 2][x % 2];
                    out[[y / 2, x / 2, c]] = scale(frame.pixels[[y, x, 0]], c, 4);
                }
            }
            out
        }
        None => {
            let mut out = Array3::zeros((meta.height, meta.width, 3));
            for ((y, x, c), v) in frame.pixels.indexed_iter() {
                out[[y, x, c]] = scale(*v, c, 3);
            }
            out
        }
    };
    Ok(PackedImage { data, camera_id: meta.camera_id.clone() })
}

/// Inverse of [`normalize`]: values are clipped to [0, 1], scaled back to
/// counts and rounded.
pub fn unpack(img: &PackedImage, meta: &FrameMeta) -> Result<RawFrame> {
    check_range(meta)?;
    let (h, w, c) = img.data.dim();
    let max = meta.max_count() as f64;
    let to_count = |v: f64, ch: usize, channels: usize| {
        let black = meta.black_for(ch, channels);
        (clip01(v) * (meta.white_level - black) + black).round().clamp(0.0, max) as u16
    };
    let pixels = match meta.cfa_pattern.tile() {
        Some(tile) => {
            if c != 4 || h * 2 != meta.height || w * 2 != meta.width {
                return Err(RawIoError::Shape(format!(
                    "packed image {h}x{w}x{c} does not match {}x{} mosaic",
                    meta.height, meta.width
                )));
            }
            let mut px = Array3::zeros((meta.height, meta.width, 1));
            for y in 0..meta.height {
                for x in 0..meta.width {
                    let ch = tile[y % 2][x % 2];
                    px[[y, x, 0]] = to_count(img.data[[y / 2, x / 2, ch]], ch, 4);
                }
            }
            px
        }
        None => {
            if c != 3 || h != meta.height || w != meta.width {
                return Err(RawIoError::Shape(format!(
                    "image {h}x{w}x{c} does not match {}x{}x3 frame",
                    meta.height, meta.width
                )));
            }
            let mut px = Array3::zeros((h, w, 3));
            for ((y, x, ch), v) in img.data.indexed_iter() {
                px[[y, x, ch]] = to_count(*v, ch, 3);
            }
            px
        }
    };
    RawFrame::new(meta.clone(), pixels)
}

/// Green-averaged, gamma-encoded (1/1.6) RGB rendering of a packed image.
pub fn render_preview(img: &PackedImage) -> PreviewImage {
    let mut data = merge_greens(&img.data);
    data.mapv_inplace(|v| clip01(v).powf(PREVIEW_GAMMA));
    PreviewImage { data }
}
