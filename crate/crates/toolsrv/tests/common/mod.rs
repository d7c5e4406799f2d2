#![allow(dead_code)]

use std::path::Path;

use raw2raw_core::annotation::{homogeneity_check, RegionPair};
use raw2raw_core::rawio::{PackedImage, Patch};
use raw2raw_core::synthcam::{self, DatasetPlan, SpectralSensor};

/// Writes a small nonlinear-regime dataset under `root`.
pub fn write_dataset(root: &Path, plan: DatasetPlan, seed: u64) {
    let grid = synthcam::default_grid();
    let a = SpectralSensor::reference(&grid);
    let b = synthcam::nonlinear_partner(&grid);
    let ds = synthcam::generate_dataset(&plan, &a, &b, seed).unwrap();
    ds.write(root).unwrap();
    for (file, s) in [("profile_A.json", &a), ("profile_B.json", &b)] {
        raw2raw_core::evalkit::CameraColorProfile::new(s.name.clone(), synthcam::xyz_profile(s))
            .unwrap()
            .save(root.join(file))
            .unwrap();
    }
}

/// Two anchor scenes and nothing else, 64×64.
pub fn two_pair_dataset(root: &Path) {
    write_dataset(root, DatasetPlan { n_unpaired: 0, n_anchor: 2, n_test: 0, height: 64, width: 64 }, 7);
}

/// Region correspondences at identical positions that pass the homogeneity
/// check in both chart-free images, scanning a coarse grid.
pub fn homogeneous_regions(a: &PackedImage, b: &PackedImage, size: usize, limit: usize) -> Vec<RegionPair> {
    let mut out = Vec::new();
    let mut y = 0;
    while y + size <= a.height() && out.len() < limit {
        let mut x = 0;
        while x + size <= a.width() && out.len() < limit {
            let p = Patch::new(x, y, size);
            if homogeneity_check(a, &p).unwrap().pass && homogeneity_check(b, &p).unwrap().pass {
                out.push(RegionPair { patch_a: p.clone(), patch_b: p });
            }
            x += size;
        }
        y += size;
    }
    out
}

/// A region pair whose A side straddles a strong edge.
pub fn inhomogeneous_region(a: &PackedImage, size: usize) -> Option<RegionPair> {
    for y in (0..=a.height() - size).step_by(size / 2) {
        for x in (0..=a.width() - size).step_by(size / 2) {
            let p = Patch::new(x, y, size);
            if homogeneity_check(a, &p).unwrap().cv > 0.2 {
                return Some(RegionPair { patch_a: p.clone(), patch_b: p });
            }
        }
    }
    None
}
