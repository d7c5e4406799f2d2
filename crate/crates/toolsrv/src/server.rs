//! HTTP annotation service. Mutations to one pair are serialized by a
//! per-pair mutex; reads clone an `Arc` snapshot and never wait on writers.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::{Arc, OnceLock, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use raw2raw_core::annotation::{check_patch, validate_region, AnnotationStatus, RegionPair, HOMOGENEITY_THRESHOLD};
use raw2raw_core::rawio::{self, Patch};

use crate::dataset::{self, DatasetRoot, FitSummary, PairFrames, StoredAnnotation};
use crate::ToolError;

impl IntoResponse for ToolError {
    fn into_response(self) -> Response {
        let status = match &self {
            ToolError::Invalid(_) | ToolError::Usage(_) => StatusCode::BAD_REQUEST,
            ToolError::NotFound(_) => StatusCode::NOT_FOUND,
            ToolError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ToolError::Data(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

struct PairSlot {
    write: Mutex<()>,
    snapshot: RwLock<Arc<StoredAnnotation>>,
    frames: OnceLock<Arc<PairFrames>>,
}

impl PairSlot {
    fn current(&self) -> Arc<StoredAnnotation> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, stored: StoredAnnotation) -> Arc<StoredAnnotation> {
        let s = Arc::new(stored);
        *self.snapshot.write().expect("snapshot lock") = s.clone();
        s
    }
}

/// Shared service state.
pub struct AppState {
    dataset: DatasetRoot,
    threshold: f64,
    pairs: BTreeMap<String, PairSlot>,
}

impl AppState {
    /// Loads stored annotations. Committed records are re-validated against
    /// their images; one that no longer validates is a data error.
    pub fn open(dataset: DatasetRoot, threshold: f64) -> Result<Self, ToolError> {
        let mut pairs = BTreeMap::new();
        for id in dataset.pair_ids() {
            let stored = dataset.load_annotation(&id)?.unwrap_or_else(|| StoredAnnotation::new(&id));
            if stored.record.pair_id != id {
                return Err(ToolError::Data(format!("annotation for '{id}' names pair '{}'", stored.record.pair_id)));
            }
            let frames = OnceLock::new();
            if stored.record.status == AnnotationStatus::Committed {
                let f = dataset.load_pair(&id)?;
                stored
                    .record
                    .validate(f.view(), threshold)
                    .map_err(|e| ToolError::Data(format!("committed annotation '{id}' no longer validates: {e}")))?;
                let _ = frames.set(Arc::new(f));
            }
            pairs.insert(
                id,
                PairSlot { write: Mutex::new(()), snapshot: RwLock::new(Arc::new(stored)), frames },
            );
        }
        Ok(AppState { dataset, threshold, pairs })
    }

    fn slot(&self, id: &str) -> Result<&PairSlot, ToolError> {
        self.pairs.get(id).ok_or_else(|| ToolError::NotFound(format!("no pair '{id}'")))
    }

    fn frames(&self, id: &str, slot: &PairSlot) -> Result<Arc<PairFrames>, ToolError> {
        if let Some(f) = slot.frames.get() {
            return Ok(f.clone());
        }
        let f = Arc::new(self.dataset.load_pair(id)?);
        Ok(slot.frames.get_or_init(|| f).clone())
    }
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/pairs", get(list_pairs))
        .route("/pairs/{id}", get(get_pair))
        .route("/images/{id}/preview", get(preview))
        .route("/pairs/{id}/chart", post(set_chart))
        .route("/pairs/{id}/regions", post(add_region))
        .route("/pairs/{id}/regions/{idx}", delete(delete_region))
        .route("/pairs/{id}/commit", post(commit))
        .route("/pairs/{id}/fit", get(fit))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: SharedState, addr: SocketAddr) -> Result<(), ToolError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("annotation service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

pub fn default_threshold() -> f64 {
    HOMOGENEITY_THRESHOLD
}

#[derive(Debug, Serialize)]
struct PairSummary {
    pair_id: String,
    status: AnnotationStatus,
    n_samples: usize,
    images: dataset::PairImageIds,
}

async fn list_pairs(State(st): State<SharedState>) -> Json<Vec<PairSummary>> {
    let out = st
        .pairs
        .iter()
        .map(|(id, slot)| {
            let cur = slot.current();
            PairSummary {
                pair_id: id.clone(),
                status: cur.record.status,
                n_samples: cur.record.sample_count(),
                images: st.dataset.pair_image_ids(id).expect("listed pairs are complete"),
            }
        })
        .collect();
    Json(out)
}

async fn get_pair(State(st): State<SharedState>, Path(id): Path<String>) -> Result<Response, ToolError> {
    let slot = st.slot(&id)?;
    let cur = slot.current();
    let frames = st.frames(&id, slot)?;
    Ok(Json(json!({
        "pair_id": id,
        "images": st.dataset.pair_image_ids(&id),
        "height": frames.a_free.height(),
        "width": frames.a_free.width(),
        "record": cur.record,
        "commit": cur.commit,
        "homogeneity_threshold": st.threshold,
    }))
    .into_response())
}

async fn preview(State(st): State<SharedState>, Path(id): Path<String>) -> Result<Response, ToolError> {
    let entry = st.dataset.entry_by_image_id(&id).ok_or_else(|| ToolError::NotFound(format!("no image '{id}'")))?;
    let img = st.dataset.load_image(entry)?;
    let pv = rawio::render_preview(&img);
    let (h, w, _) = pv.data.dim();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, pv.to_rgb8())
        .ok_or_else(|| ToolError::Data("preview buffer size mismatch".into()))?;
    let mut png = Vec::new();
    buf.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| ToolError::Data(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// Record and live fit after a mutation.
#[derive(Debug, Serialize)]
struct MutationResponse {
    record: raw2raw_core::annotation::AnnotationRecord,
    fit: FitSummary,
}

fn live_fit(frames: &PairFrames, stored: &StoredAnnotation) -> Result<FitSummary, ToolError> {
    dataset::draft_fit(frames.view(), &stored.record)
}

/// Applies `edit` to a copy of the current record under the pair's write
/// lock, persists it as a draft and publishes the new snapshot.
async fn mutate(
    st: &AppState,
    id: &str,
    edit: impl FnOnce(&mut StoredAnnotation, &PairFrames) -> Result<(), ToolError>,
) -> Result<Json<MutationResponse>, ToolError> {
    let slot = st.slot(id)?;
    let _guard = slot.write.lock().await;
    let frames = st.frames(id, slot)?;
    let mut next = (*slot.current()).clone();
    edit(&mut next, &frames)?;
    next.record.status = AnnotationStatus::Draft;
    next.commit = None;
    let fit = live_fit(&frames, &next)?;
    st.dataset.save_annotation(&next)?;
    let published = slot.publish(next);
    Ok(Json(MutationResponse { record: published.record.clone(), fit }))
}

#[derive(Debug, Deserialize)]
struct ChartBody {
    chart_a: Vec<Patch>,
    chart_b: Vec<Patch>,
}

async fn set_chart(
    State(st): State<SharedState>,
    Path(id): Path<String>,
    Json(body): Json<ChartBody>,
) -> Result<Json<MutationResponse>, ToolError> {
    mutate(&st, &id, |s, f| {
        if body.chart_a.len() != body.chart_b.len() {
            return Err(ToolError::Invalid(format!(
                "chart patch lists differ in length: {} vs {}",
                body.chart_a.len(),
                body.chart_b.len()
            )));
        }
        for p in &body.chart_a {
            check_patch(p, &f.a_chart).map_err(|e| ToolError::Invalid(format!("chart_a: {e}")))?;
        }
        for p in &body.chart_b {
            check_patch(p, &f.b_chart).map_err(|e| ToolError::Invalid(format!("chart_b: {e}")))?;
        }
        s.record.chart_a = body.chart_a;
        s.record.chart_b = body.chart_b;
        Ok(())
    })
    .await
}

async fn add_region(
    State(st): State<SharedState>,
    Path(id): Path<String>,
    Json(region): Json<RegionPair>,
) -> Result<Json<MutationResponse>, ToolError> {
    let threshold = st.threshold;
    mutate(&st, &id, |s, f| {
        validate_region(&region, &f.a_free, &f.b_free, threshold).map_err(|e| ToolError::Invalid(e.to_string()))?;
        s.record.regions.push(region);
        Ok(())
    })
    .await
}

async fn delete_region(
    State(st): State<SharedState>,
    Path((id, idx)): Path<(String, usize)>,
) -> Result<Json<MutationResponse>, ToolError> {
    mutate(&st, &id, |s, _| {
        if idx >= s.record.regions.len() {
            return Err(ToolError::NotFound(format!("no region at index {idx}")));
        }
        s.record.regions.remove(idx);
        Ok(())
    })
    .await
}

async fn commit(State(st): State<SharedState>, Path(id): Path<String>) -> Result<Response, ToolError> {
    let slot = st.slot(&id)?;
    let _guard = slot.write.lock().await;
    let frames = st.frames(&id, slot)?;
    let cur = slot.current();
    let (record, info) = dataset::commit_record(frames.view(), &cur.record, st.threshold)?;
    let stored = StoredAnnotation { record, commit: Some(info) };
    if *cur != stored {
        st.dataset.save_annotation(&stored)?;
    }
    let published = slot.publish(stored);
    let info = published.commit.as_ref().expect("just committed");
    Ok(Json(json!({
        "pair_id": id,
        "status": published.record.status,
        "hash": info.hash,
        "residual_rms": info.residual_rms,
        "out_of_gamut_fraction": info.out_of_gamut_fraction,
        "n_samples": info.n_samples,
    }))
    .into_response())
}

async fn fit(State(st): State<SharedState>, Path(id): Path<String>) -> Result<Json<FitSummary>, ToolError> {
    let slot = st.slot(&id)?;
    let frames = st.frames(&id, slot)?;
    Ok(Json(live_fit(&frames, &slot.current())?))
}
