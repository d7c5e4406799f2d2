//! Mini-batch sampling from unpaired and anchor images.

use ndarray::Array3;
use rand::Rng;

use super::loss::LossSwitches;
use super::{NnError, Real, Result};
use crate::rawio::PackedImage;

/// Training images: unpaired captures per camera plus aligned anchor pairs.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub unpaired_a: Vec<PackedImage>,
    pub unpaired_b: Vec<PackedImage>,
    pub anchors: Vec<(PackedImage, PackedImage)>,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.unpaired_a.len() + self.unpaired_b.len() + self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> Option<usize> {
        self.unpaired_a
            .iter()
            .chain(&self.unpaired_b)
            .chain(self.anchors.iter().map(|(a, _)| a))
            .map(|i| i.channels())
            .next()
    }

    pub fn validate(&self, switches: LossSwitches, channels: usize) -> Result<()> {
        if switches.use_r && (self.unpaired_a.is_empty() || self.unpaired_b.is_empty()) {
            return Err(NnError::Data("reconstruction loss needs unpaired images from both cameras".into()));
        }
        if switches.uses_anchors() && self.anchors.is_empty() {
            return Err(NnError::Data("anchor and mapping losses need at least one anchor pair".into()));
        }
        for (a, b) in &self.anchors {
            if a.data.dim() != b.data.dim() {
                return Err(NnError::Data(format!("anchor pair shapes {:?} and {:?}", a.data.dim(), b.data.dim())));
            }
        }
        let all = self.unpaired_a.iter().chain(&self.unpaired_b).chain(self.anchors.iter().flat_map(|(a, b)| [a, b]));
        for img in all {
            if img.channels() != channels {
                return Err(NnError::Shape(format!("image with {} channels, model expects {channels}", img.channels())));
            }
        }
        Ok(())
    }
}

/// How many anchors and unpaired samples per camera a batch of `n` holds.
/// With the reconstruction term off the batch is all anchors; with both
/// anchor terms off it is all unpaired.
pub fn batch_counts(n: usize, paired_fraction: f64, switches: LossSwitches) -> (usize, usize, usize) {
    let paired = if !switches.use_r {
        n
    } else if !switches.uses_anchors() {
        0
    } else {
        ((n as f64 * paired_fraction).round() as usize).min(n)
    };
    let rest = n - paired;
    (paired, rest.div_ceil(2), rest / 2)
}

#[derive(Debug, Clone)]
pub struct MiniBatch<T> {
    pub unpaired_a: Vec<Array3<T>>,
    pub unpaired_b: Vec<Array3<T>>,
    pub anchors_a: Vec<Array3<T>>,
    pub anchors_b: Vec<Array3<T>>,
}

/// Index into [0, n) with mirror reflection about the edge samples.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Crops an (H, W, C) image to a (C, ph, pw) tensor starting at (y0, x0);
/// positions outside the image are reflected back in.
pub fn crop_chw<T: Real>(img: &Array3<f64>, y0: isize, x0: isize, ph: usize, pw: usize) -> Array3<T> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((c, ph, pw), |(ch, y, x)| {
        let sy = reflect_index(y0 + y as isize, h);
        let sx = reflect_index(x0 + x as isize, w);
        T::from_f64(img[[sy, sx, ch]]).expect("finite pixel")
    })
}

fn random_origin<R: Rng>(rng: &mut R, h: usize, w: usize, patch: usize) -> (isize, isize) {
    let y = if h > patch { rng.random_range(0..=h - patch) } else { 0 };
    let x = if w > patch { rng.random_range(0..=w - patch) } else { 0 };
    (y as isize, x as isize)
}

fn random_crop<T: Real, R: Rng>(rng: &mut R, img: &PackedImage, patch: usize) -> Array3<T> {
    let (y, x) = random_origin(rng, img.height(), img.width(), patch);
    crop_chw(&img.data, y, x, patch, patch)
}

/// Draws one mini-batch. Anchor pairs share a crop window.
pub fn sample_batch<T: Real, R: Rng>(
    data: &TrainData,
    n: usize,
    paired_fraction: f64,
    patch: usize,
    switches: LossSwitches,
    rng: &mut R,
) -> MiniBatch<T> {
    let (np, na, nb) = batch_counts(n, paired_fraction, switches);
    let mut batch = MiniBatch { unpaired_a: Vec::new(), unpaired_b: Vec::new(), anchors_a: Vec::new(), anchors_b: Vec::new() };
    for _ in 0..np {
        let (a, b) = &data.anchors[rng.random_range(0..data.anchors.len())];
        let (y, x) = random_origin(rng, a.height(), a.width(), patch);
        batch.anchors_a.push(crop_chw(&a.data, y, x, patch, patch));
        batch.anchors_b.push(crop_chw(&b.data, y, x, patch, patch));
    }
    for _ in 0..na {
        let img = &data.unpaired_a[rng.random_range(0..data.unpaired_a.len())];
        batch.unpaired_a.push(random_crop(rng, img, patch));
    }
    for _ in 0..nb {
        let img = &data.unpaired_b[rng.random_range(0..data.unpaired_b.len())];
        batch.unpaired_b.push(random_crop(rng, img, patch));
    }
    batch
}
