//! Oracles and fixtures shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raw2raw_core::annotation::{AnnotationRecord, AnnotationStatus, PairImages};
use raw2raw_core::baselines::{CalibrationAnchor, TestPair};
use raw2raw_core::calibfit::{self, ColorSamplePair, SampleWeights};
use raw2raw_core::evalkit::CameraColorProfile;
use raw2raw_core::nnmap::loss::LossSwitches;
use raw2raw_core::nnmap::network::{ArchitectureSpec, Parameters};
use raw2raw_core::nnmap::{MappingModel, MiniBatch, TrainData};
use raw2raw_core::rawio::PackedImage;
use raw2raw_core::synthcam::{self, ChartLayout, DatasetPlan, SpectralSensor, Split, Variant};

/// CIEDE2000 reference pairs: L1 a1 b1 L2 a2 b2 ΔE00.
pub const CIEDE2000_PAIRS: [[f64; 7]; 34] = [
    [50.0000, 2.6772, -79.7751, 50.0000, 0.0000, -82.7485, 2.0425],
    [50.0000, 3.1571, -77.2803, 50.0000, 0.0000, -82.7485, 2.8615],
    [50.0000, 2.8361, -74.0200, 50.0000, 0.0000, -82.7485, 3.4412],
    [50.0000, -1.3802, -84.2814, 50.0000, 0.0000, -82.7485, 1.0000],
    [50.0000, -1.1848, -84.8006, 50.0000, 0.0000, -82.7485, 1.0000],
    [50.0000, -0.9009, -85.5211, 50.0000, 0.0000, -82.7485, 1.0000],
    [50.0000, 0.0000, 0.0000, 50.0000, -1.0000, 2.0000, 2.3669],
    [50.0000, -1.0000, 2.0000, 50.0000, 0.0000, 0.0000, 2.3669],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0009, 7.1792],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0010, 7.1792],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0011, 7.2195],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0012, 7.2195],
    [50.0000, -0.0010, 2.4900, 50.0000, 0.0009, -2.4900, 4.8045],
    [50.0000, -0.0010, 2.4900, 50.0000, 0.0010, -2.4900, 4.8045],
    [50.0000, -0.0010, 2.4900, 50.0000, 0.0011, -2.4900, 4.7461],
    [50.0000, 2.5000, 0.0000, 50.0000, 0.0000, -2.5000, 4.3065],
    [50.0000, 2.5000, 0.0000, 73.0000, 25.0000, -18.0000, 27.1492],
    [50.0000, 2.5000, 0.0000, 61.0000, -5.0000, 29.0000, 22.8977],
    [50.0000, 2.5000, 0.0000, 56.0000, -27.0000, -3.0000, 31.9030],
    [50.0000, 2.5000, 0.0000, 58.0000, 24.0000, 15.0000, 19.4535],
    [50.0000, 2.5000, 0.0000, 50.0000, 3.1736, 0.5854, 1.0000],
    [50.0000, 2.5000, 0.0000, 50.0000, 3.2972, 0.0000, 1.0000],
    [50.0000, 2.5000, 0.0000, 50.0000, 1.8634, 0.5757, 1.0000],
    [50.0000, 2.5000, 0.0000, 50.0000, 3.2592, 0.3350, 1.0000],
    [60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644],
    [63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630],
    [61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731],
    [35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645],
    [22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373],
    [36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146],
    [90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441],
    [90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381],
    [6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377],
    [2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082],
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_image<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize, camera: &str) -> PackedImage {
    PackedImage::new(Array3::from_shape_fn((h, w, c), |_| rng.random_range(0.0..1.0)), camera).unwrap()
}

// Scalar-loop loss oracles

pub fn sq_loop(x: &Array3<f64>, y: &Array3<f64>) -> f64 {
    let (c, h, w) = x.dim();
    let mut s = 0.0;
    for i in 0..c {
        for j in 0..h {
            for k in 0..w {
                let d = x[[i, j, k]] - y[[i, j, k]];
                s += d * d;
            }
        }
    }
    s
}

pub fn loss_r_loop(inputs: &[Array3<f64>], recons: &[Array3<f64>]) -> f64 {
    let mut s = 0.0;
    for n in 0..inputs.len() {
        s += sq_loop(&inputs[n], &recons[n]);
    }
    s / inputs.len() as f64
}

pub fn loss_a_loop(a: &[Vec<Array3<f64>>], b: &[Vec<Array3<f64>>]) -> f64 {
    let mut s = 0.0;
    for n in 0..a.len() {
        for e in 0..a[n].len() {
            s += sq_loop(&a[n][e], &b[n][e]);
        }
    }
    s / a.len() as f64
}

pub fn loss_m_loop(ma: &[Array3<f64>], ga: &[Array3<f64>], mb: &[Array3<f64>], gb: &[Array3<f64>]) -> f64 {
    let mut s = 0.0;
    for n in 0..ma.len() {
        s += sq_loop(&ma[n], &ga[n]) + sq_loop(&mb[n], &gb[n]);
    }
    s / (2.0 * ma.len() as f64)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

/// Runs the four loss oracles on `trials` random batches and returns the
/// largest relative error seen.
pub fn loss_oracle_suite(trials: usize, seed: u64) -> f64 {
    use raw2raw_core::nnmap::loss::{loss_a, loss_m, loss_r, total_loss, LossComponents};
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.random_range(1..=4);
        let c = r.random_range(1..=4);
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let batch = |r: &mut ChaCha8Rng| (0..n).map(|_| random_tensor(r, (c, h, w))).collect::<Vec<_>>();
        let (x, y, z, t) = (batch(&mut r), batch(&mut r), batch(&mut r), batch(&mut r));
        let lr = loss_r(&x, &y).unwrap();
        worst = worst.max(rel_err(lr, loss_r_loop(&x, &y)));
        let lm = loss_m(&x, &y, &z, &t).unwrap();
        worst = worst.max(rel_err(lm, loss_m_loop(&x, &y, &z, &t)));

        let depth = r.random_range(1..=3);
        let stack = |r: &mut ChaCha8Rng| -> Vec<Vec<Array3<f64>>> {
            (0..n).map(|_| (0..depth).map(|e| random_tensor(r, (c + e, h, w))).collect()).collect()
        };
        let (sa, sb) = (stack(&mut r), stack(&mut r));
        let la = loss_a(&sa, &sb).unwrap();
        worst = worst.max(rel_err(la, loss_a_loop(&sa, &sb)));

        let comps = LossComponents { r: lr, a: la, m: lm };
        let total = total_loss(comps, LossSwitches::default()).unwrap();
        let oracle = loss_r_loop(&x, &y) + loss_a_loop(&sa, &sb) + loss_m_loop(&x, &y, &z, &t);
        worst = worst.max(rel_err(total, oracle));
    }
    worst
}

// Gradient check

pub struct GradCheck {
    pub probes: usize,
    pub max_rel: f64,
    pub failures: usize,
}

/// Probes `probes` random parameters of a miniature model (E = 2, widths
/// 4 and 8, 16×16 patches, f64) and compares the analytic gradient of the
/// full loss against central differences.
pub fn gradient_check(probes: usize, seed: u64) -> GradCheck {
    let arch = ArchitectureSpec::new(3, vec![4, 8], true).unwrap();
    let model = MappingModel::<f64>::init(&arch, seed).unwrap();
    let mut r = rng(seed ^ 0x9e37);
    let mut imgs = |k: usize| (0..k).map(|_| random_tensor(&mut r, (3, 16, 16)).mapv(|v| 0.5 + 0.5 * v)).collect();
    let batch = MiniBatch { unpaired_a: imgs(2), unpaired_b: imgs(1), anchors_a: imgs(2), anchors_b: imgs(2) };
    let switches = LossSwitches::default();
    let (_, grads) = model.batch_gradients(&batch, switches).unwrap();
    let mut flat_grad = Vec::new();
    grads.visit("", &mut |_, s| flat_grad.extend_from_slice(s));
    let total = |m: &MappingModel<f64>| {
        let c = m.batch_loss(&batch, switches).unwrap();
        c.r + c.a + c.m
    };
    let mut pick = rng(seed ^ 0x51);
    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..probes {
        let idx = pick.random_range(0..flat_grad.len());
        let bumped = |delta: f64| {
            let mut m = model.clone();
            let mut i = 0;
            m.visit_mut("", &mut |_, s| {
                if idx >= i && idx < i + s.len() {
                    s[idx - i] += delta;
                }
                i += s.len();
            });
            total(&m)
        };
        let numeric = (bumped(h) - bumped(-h)) / (2.0 * h);
        let analytic = flat_grad[idx];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
        if rel > 1e-3 {
            failures += 1;
        }
    }
    GradCheck { probes, max_rel, failures }
}

// Synthetic experiments

/// Paired synthetic data in the layout the evaluation pipeline consumes.
pub struct Experiment {
    pub camera_a: String,
    pub camera_b: String,
    pub profile_b: CameraColorProfile,
    /// Per anchor scene: chart correspondences A → B.
    pub calib_anchors: Vec<CalibrationAnchor>,
    /// Per anchor scene: the chart-free captures of both cameras.
    pub anchor_images: Vec<(PackedImage, PackedImage)>,
    /// Per anchor scene: the chart-based calibrated anchor pair (A capture, mapped into B).
    pub calibrated_anchors: Vec<(PackedImage, PackedImage)>,
    pub unpaired_a: Vec<PackedImage>,
    pub unpaired_b: Vec<PackedImage>,
    pub tests: Vec<TestPair>,
}

impl Experiment {
    pub fn build(plan: &DatasetPlan, sensor_a: &SpectralSensor, sensor_b: &SpectralSensor, seed: u64) -> Self {
        let ds = synthcam::generate_dataset(plan, sensor_a, sensor_b, seed).unwrap();
        let m = &ds.manifest;
        let (ca, cb) = (m.camera_a.clone(), m.camera_b.clone());
        let img = |split, scene: &str, cam: &str, v| ds.image(m.find(split, scene, cam, v).unwrap());
        let chart = ChartLayout::for_size(plan.height, plan.width).patches();
        let mut calib_anchors = Vec::new();
        let mut anchor_images = Vec::new();
        let mut calibrated_anchors = Vec::new();
        for s in m.scenes(Split::Anchor) {
            let a_chart = img(Split::Anchor, &s, &ca, Variant::Chart);
            let a_free = img(Split::Anchor, &s, &ca, Variant::Free);
            let b_chart = img(Split::Anchor, &s, &cb, Variant::Chart);
            let b_free = img(Split::Anchor, &s, &cb, Variant::Free);
            let mut rec = AnnotationRecord::new(&s);
            rec.chart_a = chart.clone();
            rec.chart_b = chart.clone();
            rec.status = AnnotationStatus::Committed;
            let images = PairImages { a_chart: &a_chart, a_free: &a_free, b_chart: &b_chart, b_free: &b_free };
            let samples: Vec<ColorSamplePair> =
                calibfit::collect_samples(images, &rec, SampleWeights::default()).unwrap();
            let (ab, _) = calibfit::build_anchor_pair(images, &rec, SampleWeights::default()).unwrap();
            calib_anchors.push(CalibrationAnchor { name: s.clone(), samples });
            calibrated_anchors.push((ab.image_a, ab.image_b));
            anchor_images.push((a_free.clone(), b_free.clone()));
        }
        let tests = m
            .scenes(Split::Test)
            .iter()
            .map(|s| {
                let gt_chart = ds.frame(m.find(Split::Test, s, &cb, Variant::Chart).unwrap());
                let mut t = TestPair::new(
                    s.clone(),
                    img(Split::Test, s, &ca, Variant::Free),
                    img(Split::Test, s, &cb, Variant::Free),
                );
                t.illuminant = gt_chart.meta.illuminant;
                t
            })
            .collect();
        Experiment {
            profile_b: CameraColorProfile::new(cb.clone(), synthcam::xyz_profile(sensor_b)).unwrap(),
            unpaired_a: ds.images(Split::UnpairedA, &ca, Variant::Free),
            unpaired_b: ds.images(Split::UnpairedB, &cb, Variant::Free),
            camera_a: ca,
            camera_b: cb,
            calib_anchors,
            anchor_images,
            calibrated_anchors,
            tests,
        }
    }

    pub fn train_data(&self, anchors: &[(PackedImage, PackedImage)]) -> TrainData {
        TrainData { unpaired_a: self.unpaired_a.clone(), unpaired_b: self.unpaired_b.clone(), anchors: anchors.to_vec() }
    }
}

/// Linear regime: camera B's curves are a fixed 3×3 mix of camera A's.
pub fn linear_experiment(seed: u64) -> Experiment {
    let grid = synthcam::default_grid();
    let a = SpectralSensor::reference(&grid);
    let b = synthcam::linear_partner(&a);
    let plan = DatasetPlan { n_unpaired: 0, n_anchor: 1, n_test: 8, height: 64, width: 64 };
    Experiment::build(&plan, &a, &b, seed)
}

// FDA oracle

/// |DFT| of one channel by the defining double sum.
pub fn naive_amplitude(plane: &ndarray::ArrayView2<f64>) -> ndarray::Array2<f64> {
    let (h, w) = plane.dim();
    ndarray::Array2::from_shape_fn((h, w), |(u, v)| {
        let (mut re, mut im) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let ang = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                re += plane[[y, x]] * ang.cos();
                im += plane[[y, x]] * ang.sin();
            }
        }
        re.hypot(im)
    })
}

/// Largest deviation, over the low-frequency window, between the amplitude of
/// the swapped image and that of the target.
pub fn fda_window_error(swapped: &Array3<f64>, target: &Array3<f64>, b: usize) -> f64 {
    let (h, w, c) = swapped.dim();
    let inside = |i: usize, n: usize| i < b || n - i < b;
    let mut worst: f64 = 0.0;
    for ch in 0..c {
        let s = naive_amplitude(&swapped.index_axis(ndarray::Axis(2), ch));
        let t = naive_amplitude(&target.index_axis(ndarray::Axis(2), ch));
        for u in (0..h).filter(|&u| inside(u, h)) {
            for v in (0..w).filter(|&v| inside(v, w)) {
                worst = worst.max((s[[u, v]] - t[[u, v]]).abs());
            }
        }
    }
    worst
}
