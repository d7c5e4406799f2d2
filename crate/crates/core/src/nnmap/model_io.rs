//! Model and checkpoint files: a JSON descriptor next to a flat
//! little-endian f32 payload holding named tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{ArchitectureSpec, Parameters};
use super::train::{Adam, EpochLog, TrainConfig, TrainState};
use super::{MappingModel, NnError, Real, Result, TrainingFingerprint};

const FORMAT: &str = "raw2raw-model";
const CHECKPOINT_FORMAT: &str = "raw2raw-checkpoint";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Descriptor {
    format: String,
    version: u32,
    arch: ArchitectureSpec,
    fingerprint: TrainingFingerprint,
    dtype: String,
    payload: String,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    checkpoint: Option<CheckpointMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    adam_t: u64,
    config: TrainConfig,
    log: Vec<EpochLog>,
}

/// `<stem>.json` and `<stem>.bin` for any of the stem, .json, or .bin path.
pub fn model_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let p = path.as_ref();
    let stem = match p.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => p.with_extension(""),
        _ => p.to_path_buf(),
    };
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (stem.with_file_name(format!("{name}.json")), stem.with_file_name(format!("{name}.bin")))
}

fn write_files(path: &Path, mut desc: Descriptor, tensors: Vec<(String, Vec<f32>)>) -> Result<()> {
    let (json, bin) = model_paths(path);
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, values) in &tensors {
        desc.tensors.push(TensorEntry { name: name.clone(), offset, len: values.len() });
        offset += values.len();
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    desc.payload = bin.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin, payload)?;
    fs::write(&json, serde_json::to_string_pretty(&desc).expect("descriptor serializes"))?;
    Ok(())
}

fn read_files(path: &Path, format: &str) -> Result<(Descriptor, BTreeMap<String, Vec<f32>>)> {
    let (json, _) = model_paths(path);
    let desc: Descriptor = serde_json::from_str(&fs::read_to_string(&json)?)
        .map_err(|e| NnError::Format(format!("{}: {e}", json.display())))?;
    if desc.format != format {
        return Err(NnError::Format(format!("{} is a '{}' file, expected '{format}'", json.display(), desc.format)));
    }
    if desc.dtype != "f32" {
        return Err(NnError::Format(format!("unsupported dtype {}", desc.dtype)));
    }
    desc.arch.validate()?;
    let bin = json.with_file_name(&desc.payload);
    let bytes = fs::read(&bin)?;
    if bytes.len() % 4 != 0 {
        return Err(NnError::Format(format!("{} length {} is not a multiple of 4", bin.display(), bytes.len())));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut map = BTreeMap::new();
    for t in &desc.tensors {
        let end = t.offset.checked_add(t.len).filter(|&e| e <= values.len()).ok_or_else(|| {
            NnError::Format(format!("tensor {} [{}..+{}] exceeds payload of {}", t.name, t.offset, t.len, values.len()))
        })?;
        if map.insert(t.name.clone(), values[t.offset..end].to_vec()).is_some() {
            return Err(NnError::Format(format!("duplicate tensor {}", t.name)));
        }
    }
    Ok((desc, map))
}

fn collect<T: Real, P: Parameters<T>>(p: &P, prefix: &str) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    p.visit(prefix, &mut |n, s| out.push((n, s.iter().map(|v| v.to_f32().expect("finite")).collect())));
    out
}

fn fill<T: Real, P: Parameters<T>>(p: &mut P, prefix: &str, map: &mut BTreeMap<String, Vec<f32>>) -> Result<()> {
    let mut err = None;
    p.visit_mut(prefix, &mut |n, s| match map.remove(&n) {
        Some(v) if v.len() == s.len() => {
            for (d, x) in s.iter_mut().zip(v) {
                *d = T::from_f32(x).expect("representable");
            }
        }
        Some(v) => {
            err.get_or_insert(NnError::Format(format!("tensor {n} has {} values, expected {}", v.len(), s.len())));
        }
        None => {
            err.get_or_insert(NnError::Format(format!("missing tensor {n}")));
        }
    });
    err.map_or(Ok(()), Err)
}

fn descriptor(format: &str, arch: &ArchitectureSpec, fingerprint: &TrainingFingerprint) -> Descriptor {
    Descriptor {
        format: format.into(),
        version: 1,
        arch: arch.clone(),
        fingerprint: fingerprint.clone(),
        dtype: "f32".into(),
        payload: String::new(),
        tensors: Vec::new(),
        checkpoint: None,
    }
}

pub fn save_model<T: Real>(model: &MappingModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let desc = descriptor(FORMAT, &model.arch, &model.fingerprint);
    write_files(path.as_ref(), desc, collect(model, ""))
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<MappingModel<T>> {
    let (desc, mut map) = read_files(path.as_ref(), FORMAT)?;
    let mut model = MappingModel::zeros(&desc.arch);
    model.fingerprint = desc.fingerprint;
    fill(&mut model, "", &mut map)?;
    if let Some(extra) = map.keys().next() {
        return Err(NnError::Format(format!("unexpected tensor {extra}")));
    }
    if !model.is_finite() {
        return Err(NnError::Numeric("model file holds non-finite parameters".into()));
    }
    if !model.respects_bias_setting() {
        return Err(NnError::Format("non-zero bias in a bias-free architecture".into()));
    }
    Ok(model)
}

/// Writes `ckpt-epochNNNN.{json,bin}` into `dir` and returns the stem path.
pub fn save_checkpoint<T: Real>(state: &TrainState<T>, cfg: &TrainConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = dir.as_ref().join(format!("ckpt-epoch{:04}", state.epoch));
    let mut desc = descriptor(CHECKPOINT_FORMAT, &state.model.arch, &state.model.fingerprint);
    desc.checkpoint =
        Some(CheckpointMeta { epoch: state.epoch, adam_t: state.adam.t, config: cfg.clone(), log: state.log.clone() });
    let mut tensors = collect(&state.model, "");
    let mut names = Vec::new();
    state.model.visit("", &mut |n, _| names.push(n));
    for (prefix, moments) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for (n, m) in names.iter().zip(moments) {
            tensors.push((format!("{prefix}{n}"), m.iter().map(|v| v.to_f32().expect("finite")).collect()));
        }
    }
    write_files(&path, desc, tensors)?;
    Ok(path)
}

/// Reads a checkpoint back together with the config it was written under.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(TrainState<T>, TrainConfig)> {
    let (desc, mut map) = read_files(path.as_ref(), CHECKPOINT_FORMAT)?;
    let meta = desc.checkpoint.ok_or_else(|| NnError::Format("checkpoint metadata missing".into()))?;
    let mut model = MappingModel::zeros(&desc.arch);
    model.fingerprint = desc.fingerprint;
    fill(&mut model, "", &mut map)?;
    let mut adam = Adam::new(&model, meta.config.learning_rate, meta.config.beta1, meta.config.beta2);
    adam.t = meta.adam_t;
    let mut names = Vec::new();
    model.visit("", &mut |n, _| names.push(n));
    for (prefix, moments) in [("adam.m.", &mut adam.m), ("adam.v.", &mut adam.v)] {
        for (n, m) in names.iter().zip(moments.iter_mut()) {
            let key = format!("{prefix}{n}");
            let v = map.remove(&key).ok_or_else(|| NnError::Format(format!("missing tensor {key}")))?;
            if v.len() != m.len() {
                return Err(NnError::Format(format!("tensor {key} has {} values, expected {}", v.len(), m.len())));
            }
            for (d, x) in m.iter_mut().zip(v) {
                *d = T::from_f32(x).expect("representable");
            }
        }
    }
    if !model.respects_bias_setting() {
        return Err(NnError::Format("non-zero bias in a bias-free architecture".into()));
    }
    Ok((TrainState { model, adam, epoch: meta.epoch, log: meta.log }, meta.config))
}
