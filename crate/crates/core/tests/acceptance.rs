//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

mod common;

use std::time::{Duration, Instant};

use ndarray::Array3;
use rand::Rng;
use raw2raw_core::baselines::{fda_swap, global_calibration_run, FdaConfig, RunContext, TestPair};
use raw2raw_core::calibfit::{expand_kernel, fit_map, ColorSamplePair, Kernel, SampleOrigin};
use raw2raw_core::evalkit::{self, ciede2000::ciede2000, EvalPair, IlluminantSource, MetricsReport, PSNR_CAP, TABLE_HEADER};
use raw2raw_core::nnmap::loss::LossSwitches;
use raw2raw_core::nnmap::network::ArchitectureSpec;
use raw2raw_core::nnmap::{self, Direction, TrainConfig, TrainOptions};
use raw2raw_core::rawio::{load_frame, normalize, save_frame, unpack, CfaPattern, FrameMeta, RawFrame};
use raw2raw_core::synthcam::{self, DatasetPlan, SpectralSensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let took = t.elapsed();
    let in_time = took <= limit;
    let pass = o.pass && in_time;
    let timing = if in_time { String::new() } else { format!(" over the {limit:?} budget") };
    println!("{} {name}: {} [{took:.2?}{timing}]", if pass { "PASS" } else { "FAIL" }, o.detail);
    pass
}

fn loss_oracles() -> Outcome {
    let worst = common::loss_oracle_suite(200, 1);
    outcome(worst < 1e-6, format!("max relative error {worst:.2e} over 200 random batches (tol 1e-6)"))
}

fn gradients() -> Outcome {
    let g = common::gradient_check(100, 7);
    outcome(
        g.failures == 0,
        format!("{} of {} probes above 1e-3, max relative error {:.2e}", g.failures, g.probes, g.max_rel),
    )
}

fn calibration() -> Outcome {
    let mut r = common::rng(31);
    let m = ndarray::Array2::from_shape_fn((3, 11), |_| r.random_range(0.0..0.09));
    let samples: Vec<ColorSamplePair> = (0..80)
        .map(|_| {
            let src: [f64; 3] = std::array::from_fn(|_| r.random_range(0.0..1.0));
            let phi = expand_kernel(src, Kernel::Poly11);
            let dst = std::array::from_fn(|i| (0..11).map(|j| m[[i, j]] * phi[j]).sum());
            ColorSamplePair::new(src, dst, SampleOrigin::Chart)
        })
        .collect();
    let fit = fit_map(&samples, Kernel::Poly11).unwrap();
    let poly_err = fit.matrix.iter().zip(m.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let same: Vec<ColorSamplePair> = samples.iter().map(|s| ColorSamplePair::new(s.src, s.src, SampleOrigin::Chart)).collect();
    let id = fit_map(&same, Kernel::Identity).unwrap();
    let id_err = id.matrix.iter().zip(ndarray::Array2::<f64>::eye(3).iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        poly_err < 1e-6 && id_err < 1e-10,
        format!("POLY11 max-abs {poly_err:.2e} (tol 1e-6), identity max-abs {id_err:.2e} (tol 1e-10)"),
    )
}

fn ciede() -> Outcome {
    let worst = common::CIEDE2000_PAIRS
        .iter()
        .map(|p| (ciede2000([p[0], p[1], p[2]], [p[3], p[4], p[5]]) - p[6]).abs())
        .fold(0.0, f64::max);
    outcome(worst < 1e-4, format!("{} reference pairs, max deviation {worst:.2e} (tol 1e-4)", common::CIEDE2000_PAIRS.len()))
}

fn linear_end_to_end() -> Outcome {
    let exp = common::linear_experiment(5);
    let ctx = RunContext { profile: &exp.profile_b, illuminant: IlluminantSource::Reference, direction: "A2B".into() };
    let run = global_calibration_run(&exp.calib_anchors, &exp.tests, Kernel::Identity, &ctx).unwrap();
    let agg = run.repetitions[0].aggregates();
    let n = run.repetitions[0].rows.len();
    outcome(
        n == 8 && agg.delta_e.mean < 0.5 && agg.psnr.mean > 40.0,
        format!("global-3x3 on {n} test pairs: mean ΔE {:.4} (< 0.5), mean PSNR {:.2} dB (> 40)", agg.delta_e.mean, agg.psnr.mean),
    )
}

// Nonlinear regime settings. The data plan is the one the criterion fixes;
// width, depth and schedule are desk-scale choices that fit the time budget.
// The network is bias-free so it scales with exposure like raw data does.
const NL_PLAN: DatasetPlan = DatasetPlan { n_unpaired: 16, n_anchor: 4, n_test: 8, height: 128, width: 128 };
const NL_SEED: u64 = 1;
const NL_WIDTHS: [usize; 2] = [16, 32];

fn nl_config(ablation: &str) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        patch_size: 32,
        patches_per_image: 16,
        epochs: 60,
        loss_switches: LossSwitches::ablation(ablation).unwrap(),
        seed: 3,
        checkpoint_every: 0,
        final_lr_fraction: 0.05,
        ..Default::default()
    }
}

fn mean_psnr(tests: &[TestPair], mapped: Vec<raw2raw_core::rawio::PackedImage>, exp: &common::Experiment) -> f64 {
    let pairs: Vec<EvalPair> = tests
        .iter()
        .zip(mapped)
        .map(|(t, m)| {
            let mut p = EvalPair::new(t.name.clone(), m, t.gt.clone());
            p.illuminant = t.illuminant;
            p
        })
        .collect();
    let report = evalkit::evaluate(&pairs, &exp.profile_b, IlluminantSource::Reference, "x", "A2B").unwrap();
    report.aggregates().psnr.mean
}

fn nonlinear_end_to_end() -> Outcome {
    let grid = synthcam::default_grid();
    let sensor_a = SpectralSensor::reference(&grid);
    let sensor_b = synthcam::nonlinear_partner(&grid);
    let exp = common::Experiment::build(&NL_PLAN, &sensor_a, &sensor_b, NL_SEED);
    let tests = &exp.tests;
    let identity = mean_psnr(tests, tests.iter().map(|t| t.src.clone()).collect(), &exp);
    let ctx = RunContext { profile: &exp.profile_b, illuminant: IlluminantSource::Reference, direction: "A2B".into() };
    let global = global_calibration_run(&exp.calib_anchors, tests, Kernel::Identity, &ctx).unwrap();
    let global_psnr = global.report.aggregates().psnr.mean;

    let arch = ArchitectureSpec::new(3, NL_WIDTHS.to_vec(), true).unwrap().with_bias(false);
    let data = exp.train_data(&exp.anchor_images);
    let trained = |ablation: &str| {
        let model = nnmap::train::<f32>(&data, &arch, &nl_config(ablation), TrainOptions::default()).unwrap().model;
        let mapped = tests.iter().map(|t| nnmap::map_image(&t.src, &model, Direction::A2B).unwrap()).collect();
        mean_psnr(tests, mapped, &exp)
    };
    let full = trained("full");
    let m_only = trained("m-only");
    outcome(
        full > identity && full > global_psnr && full > m_only,
        format!(
            "mean PSNR full {full:.2} dB vs identity {identity:.2}, global-3x3 {global_psnr:.2}, m-only {m_only:.2}"
        ),
    )
}

fn fda() -> Outcome {
    let mut r = common::rng(2);
    let src = common::random_image(&mut r, 24, 20, 3, "A");
    let tgt = common::random_image(&mut r, 24, 20, 3, "B");
    let same = fda_swap(&src.data, &tgt.data, &FdaConfig::new(0.0).unwrap()).unwrap();
    let id_err = same.iter().zip(src.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let cfg = FdaConfig::new(0.1).unwrap();
    let swapped = fda_swap(&src.data, &tgt.data, &cfg).unwrap();
    let b = cfg.half_width(24, 20);
    let win_err = common::fda_window_error(&swapped, &tgt.data, b);
    outcome(
        id_err < 1e-6 && win_err < 1e-6 && b > 0,
        format!("beta 0 deviation {id_err:.2e}, window amplitude deviation {win_err:.2e} over half-width {b} (tol 1e-6)"),
    )
}

fn raw_io() -> Outcome {
    let patterns = [CfaPattern::Rggb, CfaPattern::Bggr, CfaPattern::Grbg, CfaPattern::Gbrg, CfaPattern::None3Ch];
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(12);
    let mut failures = Vec::new();
    let trials = 200;
    for i in 0..trials {
        let bits = r.random_range(8..=16u32);
        let max = ((1u64 << bits) - 1) as f64;
        let black: [f64; 4] = std::array::from_fn(|_| (r.random_range(0.0..0.2) * max).floor());
        let top = black.iter().cloned().fold(0.0, f64::max);
        let white = (top + 1.0 + (max - top - 1.0) * r.random_range(0.3..1.0)).round();
        let pattern = patterns[i % patterns.len()];
        let meta = FrameMeta {
            width: 2 * r.random_range(1..8),
            height: 2 * r.random_range(1..8),
            cfa_pattern: pattern,
            black_level: black,
            white_level: white,
            bit_depth: bits,
            camera_id: "cam".into(),
            illuminant: None,
            chart_patches: None,
        };
        let c = pattern.payload_channels();
        let site_black = |y: usize, x: usize, ch: usize| match pattern.tile() {
            Some(t) => black[t[y % 2][x % 2]],
            None => [black[0], black[1], black[3]][ch],
        };
        let px = Array3::from_shape_fn((meta.height, meta.width, c), |(y, x, ch)| {
            r.random_range(site_black(y, x, ch) as u16..=white as u16)
        });
        let frame = RawFrame::new(meta.clone(), px).unwrap();
        let img = normalize(&frame).unwrap();
        if unpack(&img, &meta).unwrap() != frame {
            failures.push(format!("pack/unpack #{i}"));
        }
        let path = dir.path().join(format!("f{i}"));
        save_frame(&frame, &path).unwrap();
        if load_frame(path.with_extension("raw16")).unwrap() != frame {
            failures.push(format!("save/load #{i}"));
        }
        let at = |value: &dyn Fn(usize, usize, usize) -> u16| {
            let px = Array3::from_shape_fn((meta.height, meta.width, c), |(y, x, ch)| value(y, x, ch));
            normalize(&RawFrame::new(meta.clone(), px).unwrap()).unwrap()
        };
        let lows = at(&|y, x, ch| site_black(y, x, ch) as u16);
        let highs = at(&|_, _, _| white as u16);
        let floor = at(&|_, _, _| 0);
        let ceiling = at(&|_, _, _| max as u16);
        let endpoints = lows.data.iter().chain(floor.data.iter()).all(|&v| v == 0.0)
            && highs.data.iter().chain(ceiling.data.iter()).all(|&v| v == 1.0)
            && img.data.iter().all(|v| (0.0..=1.0).contains(v));
        if !endpoints {
            failures.push(format!("endpoints #{i}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!("{trials} randomized frames, {} failures {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()),
    )
}

fn reporting() -> Outcome {
    let mut r = common::rng(3);
    let profile = common::linear_experiment(7).profile_b;
    let pairs: Vec<EvalPair> = (0..3)
        .map(|i| {
            let img = common::random_image(&mut r, 16, 16, 3, "B");
            EvalPair::new(format!("p{i}"), img.clone(), img)
        })
        .collect();
    let report: MetricsReport = evalkit::evaluate(&pairs, &profile, IlluminantSource::GrayWorld, "copy", "A2B").unwrap();
    let table = report.to_table();
    let header_ok = TABLE_HEADER.iter().all(|h| table.contains(h));
    let row_ok = table.contains("∞") && table.contains("1.0000 ± 0.0000") && table.contains("0.0000 ± 0.0000");
    let rows_trivial =
        report.rows.iter().all(|r| r.psnr == f64::INFINITY && r.ssim == 1.0 && r.mae == 0.0 && r.delta_e == 0.0);
    // Aggregates cap the sentinel so means stay finite.
    let agg = report.aggregates();
    let trivial = rows_trivial
        && agg.psnr.mean == PSNR_CAP
        && agg.ssim.mean == 1.0
        && agg.mae.mean == 0.0
        && agg.delta_e.mean == 0.0;
    outcome(header_ok && row_ok && trivial, format!("columns {TABLE_HEADER:?}, identical-pair table:\n{table}"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("loss oracles", Duration::from_secs(10), loss_oracles),
        ("gradient check", Duration::from_secs(120), gradients),
        ("calibration exactness", Duration::from_secs(1), calibration),
        ("CIEDE2000 conformance", Duration::from_secs(1), ciede),
        ("synthetic end-to-end, linear regime", Duration::from_secs(120), linear_end_to_end),
        ("synthetic end-to-end, nonlinear regime", Duration::from_secs(1800), nonlinear_end_to_end),
        ("FDA sanity", Duration::from_secs(60), fda),
        ("raw I/O round-trips", Duration::from_secs(60), raw_io),
        ("reporting format", Duration::from_secs(10), reporting),
    ];
    let only = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, limit, f) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        if !run(name, limit, f) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
