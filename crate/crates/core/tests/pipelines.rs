mod common;

use ndarray::Array3;
use raw2raw_core::baselines::{fda_run, fda_swap, global_calibration_run, FdaConfig, RunContext};
use raw2raw_core::calibfit::Kernel;
use raw2raw_core::evalkit::{self, mse, psnr, EvalPair, IlluminantSource, PSNR_CAP, TABLE_HEADER};
use raw2raw_core::nnmap::loss::LossSwitches;
use raw2raw_core::nnmap::network::ArchitectureSpec;
use raw2raw_core::nnmap::{self, batch::crop_chw, Direction, TrainConfig, TrainData, TrainOptions};
use raw2raw_core::synthcam::{self, DatasetPlan, SpectralSensor};

#[test]
fn linear_regime_global_3x3_is_near_exact() {
    let exp = common::linear_experiment(5);
    let ctx = RunContext { profile: &exp.profile_b, illuminant: IlluminantSource::Reference, direction: "A2B".into() };
    let run = global_calibration_run(&exp.calib_anchors, &exp.tests, Kernel::Identity, &ctx).unwrap();
    let agg = run.repetitions[0].aggregates();
    assert_eq!(run.repetitions[0].rows.len(), 8);
    assert!(agg.delta_e.mean < 0.5, "ΔE {}", agg.delta_e.mean);
    assert!(agg.psnr.mean > 40.0, "PSNR {}", agg.psnr.mean);
}

#[test]
fn fda_identity_and_window_amplitude() {
    let mut r = common::rng(2);
    let src = common::random_image(&mut r, 16, 20, 3, "A");
    let tgt = common::random_image(&mut r, 16, 20, 3, "B");
    let same = fda_swap(&src.data, &tgt.data, &FdaConfig::new(0.0).unwrap()).unwrap();
    let diff = same.iter().zip(src.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6);
    let cfg = FdaConfig::new(0.15).unwrap();
    let swapped = fda_swap(&src.data, &tgt.data, &cfg).unwrap();
    let b = cfg.half_width(16, 20);
    assert!(b >= 2);
    assert!(common::fda_window_error(&swapped, &tgt.data, b) < 1e-6);
}

#[test]
fn fda_run_reports_one_row_per_anchor() {
    let exp = common::linear_experiment(6);
    let ctx = RunContext { profile: &exp.profile_b, illuminant: IlluminantSource::Reference, direction: "A2B".into() };
    let anchors: Vec<_> = exp.anchor_images.iter().map(|(_, b)| ("a0".to_string(), b.clone())).collect();
    let run = fda_run(&anchors, &exp.tests, &FdaConfig::default(), &ctx).unwrap();
    assert_eq!(run.report.rows.len(), 1);
    assert_eq!(run.report.aggregates().psnr.std, 0.0);
}

#[test]
fn identical_pairs_give_the_trivial_row() {
    let mut r = common::rng(3);
    let exp_profile = common::linear_experiment(7).profile_b;
    let pairs: Vec<_> = (0..3)
        .map(|i| {
            let img = common::random_image(&mut r, 12, 12, 3, "B");
            EvalPair::new(format!("p{i}"), img.clone(), img)
        })
        .collect();
    let report = evalkit::evaluate(&pairs, &exp_profile, IlluminantSource::GrayWorld, "copy", "A2B").unwrap();
    let table = report.to_table();
    for h in TABLE_HEADER {
        assert!(table.contains(h));
    }
    assert!(table.contains("∞"), "{table}");
    assert!(table.contains("1.0000 ± 0.0000"), "{table}");
    assert!(table.contains("0.0000 ± 0.0000"), "{table}");
    assert!(report.rows.iter().all(|r| r.psnr == f64::INFINITY));
    let agg = report.aggregates();
    assert_eq!(agg.psnr.mean, PSNR_CAP);
    assert_eq!((agg.ssim.mean, agg.mae.mean, agg.delta_e.mean), (1.0, 0.0, 0.0));
    let csv = report.to_csv();
    // Header, one line per image, then mean and std.
    assert_eq!(csv.lines().count(), 1 + 3 + 2);
    assert!(csv.lines().nth(1).unwrap().ends_with(",99.000000,1.000000,0.000000,0.000000"), "{csv}");
}

#[test]
fn overfits_a_single_tiny_image() {
    let mut r = common::rng(11);
    let img = common::random_image(&mut r, 16, 16, 3, "A");
    let arch = ArchitectureSpec::new(3, vec![12, 24], true).unwrap();
    let data = TrainData { unpaired_a: vec![img.clone()], unpaired_b: vec![img.clone()], anchors: vec![] };
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 2,
        patch_size: 16,
        epochs: 2000,
        loss_switches: LossSwitches { use_r: true, use_a: false, use_m: false },
        seed: 1,
        checkpoint_every: 0,
        ..Default::default()
    };
    let out = nnmap::train::<f32>(&data, &arch, &cfg, TrainOptions::default()).unwrap();
    let x: Array3<f32> = crop_chw(&img.data, 0, 0, 16, 16);
    let rec = out.model.net_a.reconstruct(&x).unwrap().mapv(f64::from);
    let err = mse(&rec, &x.mapv(f64::from)).unwrap();
    assert!(err < 1e-4, "reconstruction MSE {err}");
}

fn tiny_dataset() -> TrainData {
    let grid = synthcam::default_grid();
    let a = SpectralSensor::reference(&grid);
    let b = synthcam::nonlinear_partner(&grid);
    let plan = DatasetPlan { n_unpaired: 8, n_anchor: 2, n_test: 2, height: 32, width: 32 };
    let exp = common::Experiment::build(&plan, &a, &b, 4);
    exp.train_data(&exp.anchor_images)
}

#[test]
fn twenty_epochs_halve_the_loss() {
    let data = tiny_dataset();
    let arch = ArchitectureSpec::new(3, vec![8, 16], true).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        patch_size: 16,
        epochs: 20,
        seed: 2,
        checkpoint_every: 0,
        ..Default::default()
    };
    let out = nnmap::train::<f32>(&data, &arch, &cfg, TrainOptions::default()).unwrap();
    let (first, last) = (out.log[0].total, out.log[19].total);
    assert!(last < 0.5 * first, "initial {first}, final {last}");
}

#[test]
fn trained_mapping_beats_doing_nothing() {
    let grid = synthcam::default_grid();
    let a = SpectralSensor::reference(&grid);
    let b = synthcam::nonlinear_partner(&grid);
    let plan = DatasetPlan { n_unpaired: 6, n_anchor: 3, n_test: 3, height: 48, width: 48 };
    let exp = common::Experiment::build(&plan, &a, &b, 8);
    let arch = ArchitectureSpec::new(3, vec![8, 16], true).unwrap();
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 4,
        patch_size: 16,
        epochs: 15,
        patches_per_image: 4,
        seed: 3,
        checkpoint_every: 0,
        ..Default::default()
    };
    let model = nnmap::train::<f32>(&exp.train_data(&exp.anchor_images), &arch, &cfg, TrainOptions::default())
        .unwrap()
        .model;
    for t in &exp.tests {
        let mapped = nnmap::map_image(&t.src, &model, Direction::A2B).unwrap();
        let before = psnr(&t.src.data, &t.gt.data).unwrap();
        let after = psnr(&mapped.data, &t.gt.data).unwrap();
        assert!(after > before, "{}: {after} <= {before}", t.name);
    }
}
