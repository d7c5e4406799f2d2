//! Access to a dataset root laid out as `manifest.json`, `frames/` and
//! `annotations/<pair_id>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use raw2raw_core::annotation::{AnnotationRecord, AnnotationStatus, PairImages};
use raw2raw_core::calibfit::{self, CalibrationMap, Kernel, SampleWeights};
use raw2raw_core::rawio::{self, PackedImage, RawFrame};
use raw2raw_core::synthcam::{Manifest, ManifestEntry, Split, Variant};

use crate::ToolError;

/// Samples POLY11 needs before a record can be committed.
pub const MIN_COMMIT_SAMPLES: usize = 11;

/// Result of a commit, stored next to the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitInfo {
    pub hash: String,
    pub residual_rms: f64,
    pub out_of_gamut_fraction: f64,
    pub n_samples: usize,
    pub map: CalibrationMap,
}

/// On-disk annotation file: the record plus its commit result, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnnotation {
    #[serde(flatten)]
    pub record: AnnotationRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit: Option<CommitInfo>,
}

impl StoredAnnotation {
    pub fn new(pair_id: &str) -> Self {
        StoredAnnotation { record: AnnotationRecord::new(pair_id), commit: None }
    }
}

/// Live fit feedback for a record in progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub kernel: Option<Kernel>,
    pub residual_rms: Option<f64>,
    pub out_of_gamut_fraction: Option<f64>,
    pub n_samples: usize,
}

/// The four captures of one scene, loaded.
#[derive(Debug, Clone)]
pub struct PairFrames {
    pub a_chart: PackedImage,
    pub a_free: PackedImage,
    pub b_chart: PackedImage,
    pub b_free: PackedImage,
}

impl PairFrames {
    pub fn view(&self) -> PairImages<'_> {
        PairImages { a_chart: &self.a_chart, a_free: &self.a_free, b_chart: &self.b_chart, b_free: &self.b_free }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairImageIds {
    pub a_chart: String,
    pub a_free: String,
    pub b_chart: String,
    pub b_free: String,
}

#[derive(Debug, Clone)]
pub struct DatasetRoot {
    pub root: PathBuf,
    pub manifest: Manifest,
}

/// Image id of a manifest entry: its frame file stem.
pub fn image_id(entry: &ManifestEntry) -> String {
    Path::new(&entry.path).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

impl DatasetRoot {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, ToolError> {
        let root = root.as_ref().to_path_buf();
        let manifest = Manifest::load(root.join("manifest.json"))
            .map_err(|e| ToolError::Data(format!("{}: {e}", root.join("manifest.json").display())))?;
        Ok(DatasetRoot { root, manifest })
    }

    pub fn annotation_dir(&self) -> PathBuf {
        self.root.join("annotations")
    }

    pub fn annotation_path(&self, pair_id: &str) -> PathBuf {
        self.annotation_dir().join(format!("{pair_id}.json"))
    }

    fn capture(&self, split: Split, scene: &str, camera: &str, variant: Variant) -> Option<&ManifestEntry> {
        self.manifest.find(split, scene, camera, variant)
    }

    fn split_of(&self, scene: &str) -> Option<Split> {
        self.manifest.entries.iter().find(|e| e.scene_id == scene).map(|e| e.split)
    }

    /// Entries of the four captures of a scene, if all exist.
    pub fn pair_entries(&self, pair_id: &str) -> Option<[&ManifestEntry; 4]> {
        let split = self.split_of(pair_id)?;
        let (a, b) = (&self.manifest.camera_a, &self.manifest.camera_b);
        Some([
            self.capture(split, pair_id, a, Variant::Chart)?,
            self.capture(split, pair_id, a, Variant::Free)?,
            self.capture(split, pair_id, b, Variant::Chart)?,
            self.capture(split, pair_id, b, Variant::Free)?,
        ])
    }

    /// Scenes captured by both cameras with and without the chart.
    pub fn pair_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for e in &self.manifest.entries {
            if !ids.contains(&e.scene_id) && self.pair_entries(&e.scene_id).is_some() {
                ids.push(e.scene_id.clone());
            }
        }
        ids
    }

    pub fn pair_image_ids(&self, pair_id: &str) -> Option<PairImageIds> {
        let [ac, af, bc, bf] = self.pair_entries(pair_id)?;
        Some(PairImageIds { a_chart: image_id(ac), a_free: image_id(af), b_chart: image_id(bc), b_free: image_id(bf) })
    }

    pub fn entry_by_image_id(&self, id: &str) -> Option<&ManifestEntry> {
        self.manifest.entries.iter().find(|e| image_id(e) == id)
    }

    pub fn load_frame(&self, entry: &ManifestEntry) -> Result<RawFrame, ToolError> {
        Ok(rawio::load_frame(self.root.join(&entry.path))?)
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<PackedImage, ToolError> {
        Ok(rawio::normalize(&self.load_frame(entry)?)?)
    }

    pub fn load_pair(&self, pair_id: &str) -> Result<PairFrames, ToolError> {
        let [ac, af, bc, bf] =
            self.pair_entries(pair_id).ok_or_else(|| ToolError::Data(format!("no complete pair '{pair_id}'")))?;
        Ok(PairFrames {
            a_chart: self.load_image(ac)?,
            a_free: self.load_image(af)?,
            b_chart: self.load_image(bc)?,
            b_free: self.load_image(bf)?,
        })
    }

    /// Record built from the chart patches stored in the chart frames' metadata.
    pub fn chart_record(&self, pair_id: &str) -> Result<AnnotationRecord, ToolError> {
        let [ac, _, bc, _] =
            self.pair_entries(pair_id).ok_or_else(|| ToolError::Data(format!("no complete pair '{pair_id}'")))?;
        let patches = |e: &ManifestEntry| -> Result<_, ToolError> {
            self.load_frame(e)?
                .meta
                .chart_patches
                .ok_or_else(|| ToolError::Data(format!("{} has no chart patches in its metadata", e.path)))
        };
        let mut rec = AnnotationRecord::new(pair_id);
        rec.chart_a = patches(ac)?;
        rec.chart_b = patches(bc)?;
        rec.status = AnnotationStatus::Committed;
        Ok(rec)
    }

    pub fn load_annotation(&self, pair_id: &str) -> Result<Option<StoredAnnotation>, ToolError> {
        read_annotation(&self.annotation_path(pair_id))
    }

    pub fn save_annotation(&self, stored: &StoredAnnotation) -> Result<(), ToolError> {
        let path = self.annotation_path(&stored.record.pair_id);
        std::fs::create_dir_all(self.annotation_dir())?;
        std::fs::write(&path, serde_json::to_string_pretty(stored).expect("annotation serializes"))?;
        Ok(())
    }

    /// Committed annotation records found under `annotations/`, sorted by pair id.
    pub fn committed_annotations(&self) -> Result<Vec<AnnotationRecord>, ToolError> {
        let dir = self.annotation_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            if let Some(s) = read_annotation(&path)? {
                if s.record.status == AnnotationStatus::Committed {
                    out.push(s.record);
                }
            }
        }
        out.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        Ok(out)
    }
}

pub fn read_annotation(path: &Path) -> Result<Option<StoredAnnotation>, ToolError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| ToolError::Data(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Fits POLY11 once enough samples exist, the 3×3 map before that.
pub fn draft_fit(images: PairImages<'_>, record: &AnnotationRecord) -> Result<FitSummary, ToolError> {
    let samples = calibfit::collect_samples(images, record, SampleWeights::default())?;
    let n = samples.len();
    let kernel = if n >= Kernel::Poly11.terms() {
        Some(Kernel::Poly11)
    } else if n >= Kernel::Identity.terms() {
        Some(Kernel::Identity)
    } else {
        None
    };
    let fitted = kernel.and_then(|k| calibfit::fit_map(&samples, k).ok());
    let (residual, oog) = match &fitted {
        Some(map) => {
            (Some(calibfit::residual_rms(map, &samples)), Some(calibfit::apply_map(images.a_free, map)?.out_of_gamut_fraction))
        }
        None => (None, None),
    };
    Ok(FitSummary { kernel: fitted.map(|m| m.kernel), residual_rms: residual, out_of_gamut_fraction: oog, n_samples: n })
}

/// SHA-256 of the record's canonical JSON.
pub fn record_hash(record: &AnnotationRecord) -> String {
    let bytes = serde_json::to_vec(record).expect("record serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Validates and fits a record for commit. Errors carry the reason the
/// record cannot be committed.
pub fn commit_record(
    images: PairImages<'_>,
    record: &AnnotationRecord,
    threshold: f64,
) -> Result<(AnnotationRecord, CommitInfo), ToolError> {
    let n = record.sample_count();
    if n < MIN_COMMIT_SAMPLES {
        return Err(ToolError::Unprocessable(format!(
            "{n} samples; a POLY11 fit needs at least {MIN_COMMIT_SAMPLES}"
        )));
    }
    record.validate(images, threshold).map_err(|e| ToolError::Unprocessable(e.to_string()))?;
    let samples = calibfit::collect_samples(images, record, SampleWeights::default())?;
    let map = calibfit::fit_map(&samples, Kernel::Poly11).map_err(|e| ToolError::Unprocessable(e.to_string()))?;
    let oog = calibfit::apply_map(images.a_free, &map)?.out_of_gamut_fraction;
    let mut committed = record.clone();
    committed.status = AnnotationStatus::Committed;
    let info = CommitInfo {
        hash: record_hash(&committed),
        residual_rms: calibfit::residual_rms(&map, &samples),
        out_of_gamut_fraction: oog,
        n_samples: samples.len(),
        map: map.with_cameras(images.a_free.camera_id.clone(), images.b_free.camera_id.clone()),
    };
    Ok((committed, info))
}
