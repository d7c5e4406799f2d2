//! `raw2raw` subcommands. Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use raw2raw_core::annotation::AnnotationRecord;
use raw2raw_core::baselines::{self, CalibrationAnchor, FdaConfig, RunContext, TestPair};
use raw2raw_core::calibfit::{self, ColorSamplePair, Kernel, SampleWeights};
use raw2raw_core::evalkit::{self, CameraColorProfile, EvalPair, IlluminantSource, MetricsReport};
use raw2raw_core::nnmap::loss::LossSwitches;
use raw2raw_core::nnmap::model_io::{load_checkpoint, load_model, save_model};
use raw2raw_core::nnmap::network::ArchitectureSpec;
use raw2raw_core::nnmap::{self, Direction, InferConfig, TrainConfig, TrainData, TrainError, TrainOptions};
use raw2raw_core::rawio::{self, PackedImage};
use raw2raw_core::synthcam::{self, DatasetPlan, Split, SpectralSensor, Variant};

use crate::dataset::DatasetRoot;
use crate::server::{self, AppState};
use crate::ToolError;

const DATA_ROOT_ENV: &str = "RAW2RAW_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "raw2raw", version, about = "Raw-to-raw camera color mapping toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic two-camera dataset.
    SynthGen(SynthGenArgs),
    /// Fit a per-pair calibration map from chart and region samples.
    FitCalib(FitCalibArgs),
    /// Apply per-pair calibration to the anchor scenes' chart-free captures.
    BuildAnchors(BuildAnchorsArgs),
    /// Train the mapping network.
    Train(TrainArgs),
    /// Map raw frames with a trained model.
    Map(MapArgs),
    /// Compare mapped frames with ground truth.
    Eval(EvalArgs),
    /// Run a comparison method over the test split.
    Baseline(BaselineArgs),
    /// Serve the annotation HTTP API.
    AnnotateServe(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RootArg {
    /// Dataset root holding manifest.json.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub root: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    /// Camera B's curves are a channel mix of camera A's.
    Linear,
    /// Camera B's curves are shifted and narrowed.
    Nonlinear,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Output dataset root.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Regime::Nonlinear)]
    pub regime: Regime,
    /// Unpaired scenes per camera.
    #[arg(long, default_value_t = 16)]
    pub unpaired: usize,
    #[arg(long, default_value_t = 4)]
    pub anchors: usize,
    #[arg(long, default_value_t = 8)]
    pub tests: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    #[value(name = "3x3")]
    Linear,
    Poly11,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Linear => Kernel::Identity,
            KernelArg::Poly11 => Kernel::Poly11,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitCalibArgs {
    #[command(flatten)]
    pub root: RootArg,
    /// Scene id of the pair.
    #[arg(long)]
    pub pair: String,
    #[arg(long, value_enum, default_value_t = KernelArg::Poly11)]
    pub kernel: KernelArg,
    #[arg(long, default_value = "A2B")]
    pub direction: Direction,
    /// Output map JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildAnchorsArgs {
    #[command(flatten)]
    pub root: RootArg,
    /// Output directory; `<root>/anchors` when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub root: RootArg,
    /// JSON with optional `arch` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Loss ablation: full, no-Lr, no-La, no-Lm or m-only.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Directory written by build-anchors. Without it the anchor split's
    /// captures are paired directly.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Continue from a checkpoint descriptor.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output model path (descriptor `.json` plus `.bin` payload).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; `<out>.loss.csv` when omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Checkpoint directory; none are written when omitted.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Frames (any of stem, `.json` or `.raw16`) or directories of frames.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "A2B")]
    pub direction: Direction,
    /// Camera id written into the output metadata. Occurrences of the source
    /// camera id in output file names are replaced by it.
    #[arg(long)]
    pub target_camera: Option<String>,
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    #[arg(long, default_value_t = 32)]
    pub overlap: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of mapped frames.
    #[arg(long)]
    pub mapped: PathBuf,
    /// Directory holding ground-truth frames with the same file stems.
    #[arg(long)]
    pub gt: PathBuf,
    /// Target camera color profile.
    #[arg(long)]
    pub profile: PathBuf,
    /// CSV output; appended to stdout when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "mapped")]
    pub method: String,
    #[arg(long, default_value = "A2B")]
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    #[value(name = "global-3x3")]
    Global3x3,
    GlobalPoly,
    Fda,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub root: RootArg,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// Target camera color profile.
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value = "A2B")]
    pub direction: Direction,
    /// FDA low-frequency window fraction.
    #[arg(long, default_value_t = baselines::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub root: RootArg,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Homogeneity threshold on the per-channel coefficient of variation.
    #[arg(long, default_value_t = server::default_threshold())]
    pub threshold: f64,
}

/// Parses `argv` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<(), ToolError> {
    match cmd {
        Command::SynthGen(a) => synth_gen(a),
        Command::FitCalib(a) => fit_calib(a),
        Command::BuildAnchors(a) => build_anchors(a),
        Command::Train(a) => train(a),
        Command::Map(a) => map(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::AnnotateServe(a) => annotate_serve(a),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), ToolError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, ToolError> {
    let text = std::fs::read_to_string(path).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), ToolError> {
    match path {
        Some(p) => {
            std::fs::write(p, text)?;
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn synth_gen(a: SynthGenArgs) -> Result<(), ToolError> {
    if a.height == 0 || a.width == 0 {
        return Err(ToolError::Usage("--height and --width must be positive".into()));
    }
    let grid = synthcam::default_grid();
    let sensor_a = SpectralSensor::reference(&grid);
    let sensor_b = match a.regime {
        Regime::Linear => synthcam::linear_partner(&sensor_a),
        Regime::Nonlinear => synthcam::nonlinear_partner(&grid),
    };
    let plan = DatasetPlan { n_unpaired: a.unpaired, n_anchor: a.anchors, n_test: a.tests, height: a.height, width: a.width };
    let ds = synthcam::generate_dataset(&plan, &sensor_a, &sensor_b, a.seed)?;
    ds.write(&a.out)?;
    for (file, sensor) in [("profile_A.json", &sensor_a), ("profile_B.json", &sensor_b)] {
        CameraColorProfile::new(sensor.name.clone(), synthcam::xyz_profile(sensor))?.save(a.out.join(file))?;
    }
    eprintln!("wrote {} frames to {}", ds.frames.len(), a.out.display());
    Ok(())
}

/// A committed annotation when one exists, else the chart patches recorded
/// in the chart frames' metadata.
fn calibration_record(ds: &DatasetRoot, pair_id: &str) -> Result<AnnotationRecord, ToolError> {
    match ds.load_annotation(pair_id)? {
        Some(s) if s.record.status == raw2raw_core::annotation::AnnotationStatus::Committed => Ok(s.record),
        _ => ds.chart_record(pair_id),
    }
}

fn oriented(samples: Vec<ColorSamplePair>, direction: Direction) -> Vec<ColorSamplePair> {
    match direction {
        Direction::A2B => samples,
        Direction::B2A => samples.into_iter().map(|s| ColorSamplePair { src: s.dst, dst: s.src, ..s }).collect(),
    }
}

fn pair_samples(ds: &DatasetRoot, pair_id: &str, direction: Direction) -> Result<Vec<ColorSamplePair>, ToolError> {
    let record = calibration_record(ds, pair_id)?;
    let frames = ds.load_pair(pair_id)?;
    Ok(oriented(calibfit::collect_samples(frames.view(), &record, SampleWeights::default())?, direction))
}

fn cameras(ds: &DatasetRoot, direction: Direction) -> (String, String) {
    let (a, b) = (ds.manifest.camera_a.clone(), ds.manifest.camera_b.clone());
    match direction {
        Direction::A2B => (a, b),
        Direction::B2A => (b, a),
    }
}

fn fit_calib(a: FitCalibArgs) -> Result<(), ToolError> {
    let ds = DatasetRoot::open(&a.root.root)?;
    if ds.pair_entries(&a.pair).is_none() {
        return Err(ToolError::Data(format!("no complete pair '{}'", a.pair)));
    }
    let samples = pair_samples(&ds, &a.pair, a.direction)?;
    let (src, dst) = cameras(&ds, a.direction);
    let map = calibfit::fit_map(&samples, a.kernel.into())?.with_cameras(src, dst);
    eprintln!("{} samples, residual rms {:.6}", samples.len(), map.fit_residual_rms);
    let text = serde_json::to_string_pretty(&map)? + "\n";
    emit(&text, a.out.as_deref())
}

/// Entry of `anchors.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub pair_id: String,
    /// Frame stems relative to the anchors directory.
    pub a: String,
    pub b: String,
    pub map: calibfit::CalibrationMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorIndex {
    pub anchors: Vec<AnchorEntry>,
}

fn build_anchors(a: BuildAnchorsArgs) -> Result<(), ToolError> {
    let ds = DatasetRoot::open(&a.root.root)?;
    let out = a.out.unwrap_or_else(|| ds.root.join("anchors"));
    let scenes = ds.manifest.scenes(Split::Anchor);
    if scenes.is_empty() {
        return Err(ToolError::Data("dataset has no anchor scenes".into()));
    }
    std::fs::create_dir_all(&out)?;
    let mut index = AnchorIndex { anchors: Vec::new() };
    for id in scenes {
        let [_, af, _, bf] = ds.pair_entries(&id).ok_or_else(|| ToolError::Data(format!("incomplete anchor '{id}'")))?;
        let meta_a = ds.load_frame(af)?.meta;
        let meta_b = ds.load_frame(bf)?.meta;
        let record = calibration_record(&ds, &id)?;
        let frames = ds.load_pair(&id)?;
        let (fwd, rev) = calibfit::build_anchor_pair(frames.view(), &record, SampleWeights::default())?;
        for (tag, pair) in [("fwd", fwd), ("rev", rev)] {
            let stem_a = format!("{id}_{tag}_A");
            let stem_b = format!("{id}_{tag}_B");
            rawio::save_frame(&rawio::unpack(&pair.image_a, &meta_a)?, out.join(&stem_a))?;
            rawio::save_frame(&rawio::unpack(&pair.image_b, &meta_b)?, out.join(&stem_b))?;
            index.anchors.push(AnchorEntry { pair_id: id.clone(), a: stem_a, b: stem_b, map: pair.provenance.map });
        }
    }
    write_json(&out.join("anchors.json"), &index)?;
    eprintln!("wrote {} anchor pairs to {}", index.anchors.len(), out.display());
    Ok(())
}

/// Training configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub arch: Option<ArchitectureSpec>,
    pub train: TrainConfig,
}

fn load_images(ds: &DatasetRoot, split: Split, camera: &str) -> Result<Vec<PackedImage>, ToolError> {
    ds.manifest.entries_for(split, camera, Variant::Free).map(|e| ds.load_image(e)).collect()
}

fn load_anchor_dir(dir: &Path) -> Result<Vec<(PackedImage, PackedImage)>, ToolError> {
    let index: AnchorIndex = read_json(&dir.join("anchors.json"))?;
    index
        .anchors
        .iter()
        .map(|e| {
            let a = rawio::normalize(&rawio::load_frame(dir.join(&e.a))?)?;
            let b = rawio::normalize(&rawio::load_frame(dir.join(&e.b))?)?;
            Ok((a, b))
        })
        .collect()
}

fn train_data(ds: &DatasetRoot, anchors: Option<&Path>) -> Result<TrainData, ToolError> {
    let (ca, cb) = (&ds.manifest.camera_a, &ds.manifest.camera_b);
    let anchors = match anchors {
        Some(dir) => load_anchor_dir(dir)?,
        None => load_images(ds, Split::Anchor, ca)?.into_iter().zip(load_images(ds, Split::Anchor, cb)?).collect(),
    };
    Ok(TrainData { unpaired_a: load_images(ds, Split::UnpairedA, ca)?, unpaired_b: load_images(ds, Split::UnpairedB, cb)?, anchors })
}

fn train(a: TrainArgs) -> Result<(), ToolError> {
    let file: Option<TrainFile> = a.config.as_deref().map(read_json).transpose().map_err(|e| match e {
        ToolError::Data(m) => ToolError::Usage(m),
        other => other,
    })?;
    let ds = DatasetRoot::open(&a.root.root)?;
    let data = train_data(&ds, a.anchors.as_deref())?;
    let channels = data.channels().ok_or_else(|| ToolError::Data("no training images".into()))?;
    let (state, mut cfg) = match &a.resume {
        Some(path) => {
            let (state, ckpt_cfg) = load_checkpoint::<f32>(path)?;
            let cfg = file.as_ref().map(|f| f.train.clone()).unwrap_or(ckpt_cfg);
            (Some(state), cfg)
        }
        None => (None, file.as_ref().map(|f| f.train.clone()).unwrap_or_default()),
    };
    if let Some(name) = &a.ablate {
        cfg.loss_switches = LossSwitches::ablation(name).map_err(|e| ToolError::Usage(e.to_string()))?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let arch = match (&state, file.as_ref().and_then(|f| f.arch.clone())) {
        (Some(s), _) => s.model.arch.clone(),
        (None, Some(arch)) => arch,
        (None, None) => ArchitectureSpec { in_channels: channels, ..ArchitectureSpec::default() },
    };
    arch.validate().map_err(|e| ToolError::Usage(e.to_string()))?;
    cfg.validate(&arch).map_err(|e| ToolError::Usage(e.to_string()))?;
    let mut on_epoch = |l: &nnmap::EpochLog| eprintln!("{}", l.csv_line());
    let opts = TrainOptions { checkpoint_dir: a.checkpoints.clone(), on_epoch: Some(&mut on_epoch), stop_after: None };
    let result = match state {
        Some(s) => nnmap::resume::<f32>(s, &data, &cfg, opts),
        None => nnmap::train::<f32>(&data, &arch, &cfg, opts),
    };
    let outcome = result.map_err(|e| match e {
        TrainError::Nn(e) => ToolError::from(e),
        d @ TrainError::Diverged { .. } => ToolError::Data(d.to_string()),
    })?;
    save_model(&outcome.model, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        let (json, _) = nnmap::model_io::model_paths(&a.out);
        json.with_extension("loss.csv")
    });
    std::fs::write(&log_path, nnmap::train::log_csv(&outcome.log))?;
    eprintln!("model written to {}", nnmap::model_io::model_paths(&a.out).0.display());
    Ok(())
}

/// Frame stems named by `inputs`: files directly, directories by their
/// `.json` sidecars. Sorted and deduplicated.
fn frame_stems(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, ToolError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for entry in std::fs::read_dir(p)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) == Some("json") && path.with_extension("raw16").exists() {
                    out.push(path.with_extension(""));
                }
            }
        } else {
            let stem = match p.extension().and_then(|e| e.to_str()) {
                Some("json") | Some("raw16") => p.with_extension(""),
                _ => p.clone(),
            };
            out.push(stem);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn map(a: MapArgs) -> Result<(), ToolError> {
    if a.tile == 0 || a.overlap >= a.tile {
        return Err(ToolError::Usage("--overlap must be smaller than a positive --tile".into()));
    }
    let model = load_model::<f32>(&a.model)?;
    let stems = frame_stems(&a.input)?;
    if stems.is_empty() {
        return Err(ToolError::Data("no input frames".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    let cfg = InferConfig { tile: a.tile, overlap: a.overlap };
    for stem in stems {
        let frame = rawio::load_frame(&stem)?;
        let img = rawio::normalize(&frame)?;
        let mapped = nnmap::map_image_with(&img, &model, a.direction, &cfg)?;
        let mut meta = frame.meta.clone();
        meta.illuminant = None;
        let mut name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match &a.target_camera {
            Some(target) => {
                if !frame.meta.camera_id.is_empty() {
                    name = name.replace(&frame.meta.camera_id, target);
                }
                meta.camera_id = target.clone();
            }
            None => meta.camera_id = mapped.camera_id.clone(),
        }
        rawio::save_frame(&rawio::unpack(&mapped, &meta)?, a.out.join(&name))?;
        eprintln!("{} -> {}", stem.display(), a.out.join(&name).display());
    }
    Ok(())
}

fn direction_label(d: Direction) -> &'static str {
    match d {
        Direction::A2B => "A2B",
        Direction::B2A => "B2A",
    }
}

fn print_report(report: &MetricsReport, csv: Option<&Path>) -> Result<(), ToolError> {
    let mut stdout = std::io::stdout();
    stdout.write_all(report.to_table().as_bytes())?;
    match csv {
        Some(p) => std::fs::write(p, report.to_csv())?,
        None => {
            stdout.write_all(b"\n")?;
            stdout.write_all(report.to_csv().as_bytes())?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), ToolError> {
    let profile = CameraColorProfile::load(&a.profile)?;
    if !a.mapped.is_dir() || !a.gt.is_dir() {
        return Err(ToolError::Data("--mapped and --gt must be directories".into()));
    }
    let stems = frame_stems(std::slice::from_ref(&a.mapped))?;
    if stems.is_empty() {
        return Err(ToolError::Data(format!("no frames in {}", a.mapped.display())));
    }
    let mut pairs = Vec::with_capacity(stems.len());
    for stem in stems {
        let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mapped = rawio::normalize(&rawio::load_frame(&stem)?)?;
        let gt_frame = rawio::load_frame(a.gt.join(&name))?;
        let mut pair = EvalPair::new(name, mapped, rawio::normalize(&gt_frame)?);
        pair.illuminant = gt_frame.meta.illuminant;
        pairs.push(pair);
    }
    let report = evalkit::evaluate(&pairs, &profile, IlluminantSource::Reference, &a.method, direction_label(a.direction))?;
    print_report(&report, a.csv.as_deref())
}

fn test_pairs(ds: &DatasetRoot, direction: Direction) -> Result<Vec<TestPair>, ToolError> {
    let (src_cam, dst_cam) = cameras(ds, direction);
    let mut out = Vec::new();
    for id in ds.manifest.scenes(Split::Test) {
        let find = |cam: &str| {
            ds.manifest
                .find(Split::Test, &id, cam, Variant::Free)
                .ok_or_else(|| ToolError::Data(format!("test scene '{id}' lacks a {cam} capture")))
        };
        let src = ds.load_image(find(&src_cam)?)?;
        let gt_frame = ds.load_frame(find(&dst_cam)?)?;
        let mut t = TestPair::new(id.clone(), src, rawio::normalize(&gt_frame)?);
        t.illuminant = gt_frame.meta.illuminant;
        out.push(t);
    }
    if out.is_empty() {
        return Err(ToolError::Data("dataset has no test scenes".into()));
    }
    Ok(out)
}

fn baseline(a: BaselineArgs) -> Result<(), ToolError> {
    let ds = DatasetRoot::open(&a.root.root)?;
    let profile = CameraColorProfile::load(&a.profile)?;
    let tests = test_pairs(&ds, a.direction)?;
    let ctx = RunContext { profile: &profile, illuminant: IlluminantSource::Reference, direction: direction_label(a.direction).into() };
    let scenes = ds.manifest.scenes(Split::Anchor);
    let run = match a.method {
        BaselineMethod::Global3x3 | BaselineMethod::GlobalPoly => {
            let kernel = if a.method == BaselineMethod::Global3x3 { Kernel::Identity } else { Kernel::Poly11 };
            let anchors = scenes
                .iter()
                .map(|id| Ok(CalibrationAnchor { name: id.clone(), samples: pair_samples(&ds, id, a.direction)? }))
                .collect::<Result<Vec<_>, ToolError>>()?;
            baselines::global_calibration_run(&anchors, &tests, kernel, &ctx)?
        }
        BaselineMethod::Fda => {
            let cfg = FdaConfig::new(a.beta).map_err(|e| ToolError::Usage(e.to_string()))?;
            let (_, dst_cam) = cameras(&ds, a.direction);
            let targets = scenes
                .iter()
                .filter_map(|id| ds.manifest.find(Split::Anchor, id, &dst_cam, Variant::Free))
                .map(|e| Ok((e.scene_id.clone(), ds.load_image(e)?)))
                .collect::<Result<Vec<_>, ToolError>>()?;
            baselines::fda_run(&targets, &tests, &cfg, &ctx)?
        }
    };
    print_report(&run.report, a.csv.as_deref())
}

fn annotate_serve(a: ServeArgs) -> Result<(), ToolError> {
    if !(a.threshold > 0.0) {
        return Err(ToolError::Usage("--threshold must be positive".into()));
    }
    let ds = DatasetRoot::open(&a.root.root)?;
    let state = Arc::new(AppState::open(ds, a.threshold)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(server::serve(state, SocketAddr::new(a.host, a.port)))
}
