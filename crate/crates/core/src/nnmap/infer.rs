//! Decoder-swap inference on full images with overlapping tiles.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::batch::crop_chw;
use super::{MappingModel, NnError, Real, Result};
use crate::rawio::PackedImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    A2B,
    B2A,
}

impl std::str::FromStr for Direction {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A2B" | "A->B" => Ok(Direction::A2B),
            "B2A" | "B->A" => Ok(Direction::B2A),
            _ => Err(NnError::Config(format!("unknown direction '{s}' (use A2B or B2A)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferConfig {
    /// Largest tile side; images whose padded size fits are processed whole.
    pub tile: usize,
    pub overlap: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { tile: 256, overlap: 32 }
    }
}

/// Clips network output into [0, 1]; non-finite values are an error.
pub fn postprocess(raw: Array3<f64>, camera_id: impl Into<String>) -> Result<PackedImage> {
    if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
        return Err(NnError::Numeric(format!("network produced {v}")));
    }
    Ok(PackedImage::from_clipped(raw, camera_id))
}

fn run_whole<T: Real>(model: &MappingModel<T>, x: &Array3<T>, direction: Direction) -> Result<Array3<T>> {
    let (enc, dec) = match direction {
        Direction::A2B => (&model.net_a.encoder, &model.net_b.decoder),
        Direction::B2A => (&model.net_b.encoder, &model.net_a.decoder),
    };
    dec.forward(&enc.forward(x))
}

/// Tile starts covering [0, n) with tiles of `t` and the given overlap.
fn tile_starts(n: usize, t: usize, overlap: usize) -> Vec<usize> {
    if n <= t {
        return vec![0];
    }
    let stride = (t - overlap).max(1);
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + t < n).collect();
    v.push(n - t);
    v.dedup();
    v
}

/// Linear feathering weights; edges touching the image border stay at 1.
fn ramp(len: usize, overlap: usize, left_open: bool, right_open: bool) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let mut w: f64 = 1.0;
            if overlap > 0 {
                if left_open {
                    w = w.min((i + 1) as f64 / (overlap + 1) as f64);
                }
                if right_open {
                    w = w.min((len - i) as f64 / (overlap + 1) as f64);
                }
            }
            w
        })
        .collect()
}

/// Maps with the default tiling.
pub fn map_image<T: Real>(img: &PackedImage, model: &MappingModel<T>, direction: Direction) -> Result<PackedImage> {
    map_image_with(img, model, direction, &InferConfig::default())
}

pub fn map_image_with<T: Real>(
    img: &PackedImage,
    model: &MappingModel<T>,
    direction: Direction,
    cfg: &InferConfig,
) -> Result<PackedImage> {
    let arch = &model.arch;
    if img.channels() != arch.in_channels {
        return Err(NnError::Shape(format!("image has {} channels, model expects {}", img.channels(), arch.in_channels)));
    }
    let a = arch.alignment();
    let (h, w) = (img.height(), img.width());
    let (hp, wp) = (h.div_ceil(a).max(1) * a, w.div_ceil(a).max(1) * a);
    let tile = (cfg.tile / a).max(1) * a;
    if cfg.overlap >= tile {
        return Err(NnError::Config(format!("overlap {} must be smaller than tile {tile}", cfg.overlap)));
    }
    let padded: Array3<T> = crop_chw(&img.data, 0, 0, hp, wp);
    let c = arch.in_channels;
    let out_chw: Array3<f64> = if hp <= tile && wp <= tile {
        run_whole(model, &padded, direction)?.mapv(|v| v.to_f64().unwrap_or(f64::NAN))
    } else {
        let (th, tw) = (tile.min(hp), tile.min(wp));
        let ys = tile_starts(hp, th, cfg.overlap);
        let xs = tile_starts(wp, tw, cfg.overlap);
        let mut acc = Array3::<f64>::zeros((c, hp, wp));
        let mut weight = Array2::<f64>::zeros((hp, wp));
        for &y in &ys {
            let wy = ramp(th, cfg.overlap, y > 0, y + th < hp);
            for &x in &xs {
                let wx = ramp(tw, cfg.overlap, x > 0, x + tw < wp);
                let patch = padded.slice(s![.., y..y + th, x..x + tw]).to_owned();
                let out = run_whole(model, &patch, direction)?;
                for i in 0..th {
                    for j in 0..tw {
                        let wgt = wy[i] * wx[j];
                        weight[[y + i, x + j]] += wgt;
                        for ch in 0..c {
                            acc[[ch, y + i, x + j]] += wgt * out[[ch, i, j]].to_f64().unwrap_or(f64::NAN);
                        }
                    }
                }
            }
        }
        for ch in 0..c {
            let mut plane = acc.slice_mut(s![ch, .., ..]);
            plane /= &weight;
        }
        acc
    };
    let hwc = out_chw.slice(s![.., ..h, ..w]).permuted_axes([1, 2, 0]).as_standard_layout().into_owned();
    let camera = match direction {
        Direction::A2B => "B",
        Direction::B2A => "A",
    };
    postprocess(hwc, camera)
}
