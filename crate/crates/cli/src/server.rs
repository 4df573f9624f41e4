//! HTTP endpoints consumed by the review UI.
//!
//! * `GET /bundle`: the bundle with current labels applied.
//! * `GET /segment/{id}`: samples, ground truth and representation of one segment.
//! * `POST /label`: `{record_id, label, reviewer_id}`; appends to the label log.
//! * `POST /score`: a reward record; returns its reward breakdown.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use peakrep_core::audit::{read_label_log, replay_labels, AuditBundle, BundleSummary, HumanLabel, LabelEntry, LabelLog};
use peakrep_core::peak_representation::{serialize, PeakRepresentation};
use peakrep_core::reward::{score_record, RewardRecord, RewardResult, RewardSettings};
use peakrep_core::{Modality, SignalSegment};

use crate::commands::{bundle_reps, Ctx};
use crate::error::{CliError, CliResult};
use crate::manifest::OutputDir;

pub struct AppState {
    bundle: AuditBundle,
    segments: HashMap<String, SignalSegment>,
    reps: HashMap<String, PeakRepresentation>,
    log: LabelLog,
    /// Latest label per (record, reviewer), for de-duplicating resubmissions.
    latest: HashMap<(String, String), LabelEntry>,
    reward: RewardSettings,
}

pub type SharedState = Arc<Mutex<AppState>>;

impl AppState {
    /// Replays the existing log onto `bundle` before serving.
    pub fn new(
        mut bundle: AuditBundle,
        segments: Vec<SignalSegment>,
        reps: HashMap<String, PeakRepresentation>,
        log: LabelLog,
        reward: RewardSettings,
    ) -> CliResult<Self> {
        let entries = log.entries()?;
        replay_labels(&mut bundle, &entries)?;
        let latest = entries
            .into_iter()
            .map(|e| ((e.record_id.clone(), e.reviewer_id.clone()), e))
            .collect();
        Ok(Self {
            bundle,
            segments: segments.into_iter().map(|s| (s.segment_id.clone(), s)).collect(),
            reps,
            log,
            latest,
            reward,
        })
    }
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn api_error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ApiError { error: message.into() })).into_response()
}

fn lock(state: &SharedState) -> MutexGuard<'_, AppState> {
    // Handlers mutate only after the log append succeeds.
    state.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentView {
    pub segment_id: String,
    pub subject_id: String,
    pub modality: Modality,
    pub fs: f64,
    pub samples: Vec<f64>,
    pub gt_peaks: Vec<usize>,
    pub serialized: String,
    pub representation: PeakRepresentation,
    /// Bundle records that refer to this segment.
    pub record_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub record_id: String,
    pub label: String,
    pub reviewer_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub entry: LabelEntry,
    /// True when the same reviewer already gave this label; nothing was logged.
    pub duplicate: bool,
    pub summary: BundleSummary,
}

async fn get_bundle(State(state): State<SharedState>) -> Response {
    Json(&lock(&state).bundle).into_response()
}

async fn get_segment(State(state): State<SharedState>, Path(id): Path<String>) -> Response {
    let st = lock(&state);
    let (Some(seg), Some(rep)) = (st.segments.get(&id), st.reps.get(&id)) else {
        return api_error(StatusCode::NOT_FOUND, format!("unknown segment {id}"));
    };
    let mut record_ids: Vec<String> = st
        .bundle
        .records
        .iter()
        .filter(|r| r.segment_ref == id)
        .map(|r| r.record_id.clone())
        .collect();
    record_ids.dedup();
    Json(SegmentView {
        segment_id: seg.segment_id.clone(),
        subject_id: seg.subject_id.clone(),
        modality: seg.modality,
        fs: seg.fs,
        samples: seg.samples.clone(),
        gt_peaks: seg.gt_peaks.clone(),
        serialized: serialize(rep),
        representation: rep.clone(),
        record_ids,
    })
    .into_response()
}

async fn post_label(State(state): State<SharedState>, body: Result<Json<LabelRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return api_error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    let label: HumanLabel = match req.label.parse() {
        Ok(l) => l,
        Err(e) => return api_error(StatusCode::UNPROCESSABLE_ENTITY, format!("{e}")),
    };
    if req.reviewer_id.trim().is_empty() {
        return api_error(StatusCode::UNPROCESSABLE_ENTITY, "reviewer_id must not be empty");
    }
    let mut st = lock(&state);
    if st.bundle.record(&req.record_id).is_none() {
        return api_error(StatusCode::NOT_FOUND, format!("unknown record {}", req.record_id));
    }
    let key = (req.record_id.clone(), req.reviewer_id.clone());
    if let Some(prev) = st.latest.get(&key).filter(|e| e.label == label) {
        return Json(LabelResponse {
            entry: prev.clone(),
            duplicate: true,
            summary: st.bundle.summary.clone(),
        })
        .into_response();
    }
    let entry = LabelEntry {
        ts: Utc::now(),
        record_id: req.record_id,
        reviewer_id: req.reviewer_id,
        label,
    };
    if let Err(e) = st.log.append(&entry) {
        return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    let st = &mut *st;
    if let Err(e) = replay_labels(&mut st.bundle, std::slice::from_ref(&entry)) {
        return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    st.latest.insert(key, entry.clone());
    Json(LabelResponse {
        entry,
        duplicate: false,
        summary: st.bundle.summary.clone(),
    })
    .into_response()
}

async fn post_score(State(state): State<SharedState>, body: Result<Json<RewardRecord>, JsonRejection>) -> Response {
    let Json(record) = match body {
        Ok(b) => b,
        Err(e) => return api_error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    let settings = lock(&state).reward;
    match score_record(&record, &settings) {
        Ok(r) => Json::<RewardResult>(r).into_response(),
        Err(e) => api_error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/bundle", get(get_bundle))
        .route("/segment/{id}", get(get_segment))
        .route("/label", post(post_label))
        .route("/score", post(post_score))
        .with_state(state)
}

/// Loads bundle, segments and label log, verifies the bundle against the
/// segments and serves until interrupted.
pub fn serve(ctx: &mut Ctx, name: &str) -> CliResult<()> {
    let state = load_state(ctx)?;
    let addr: SocketAddr = format!("{}:{}", ctx.cfg.serve.host, ctx.cfg.serve.port)
        .parse()
        .map_err(|e| CliError::config(format!("serve address: {e}")))?;
    let out = OutputDir::create(&ctx.cfg.out)?;
    ctx.finish(out, name)?;

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::internal(format!("starting runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::config(format!("binding {addr}: {e}")))?;
        eprintln!(
            "{}",
            serde_json::json!({"level": "info", "message": format!("listening on http://{addr}")})
        );
        axum::serve(listener, router(Arc::new(Mutex::new(state))))
            .await
            .map_err(|e| CliError::internal(format!("server: {e}")))
    })
}

fn load_state(ctx: &mut Ctx) -> CliResult<AppState> {
    let segs = ctx.preprocessed_segments()?;
    let bundle = ctx.bundle()?;
    let reps = bundle_reps(ctx, &bundle, &segs)?;
    let label_path = ctx
        .cfg
        .inputs
        .labels
        .clone()
        .unwrap_or_else(|| ctx.cfg.out.join("labels.jsonl"));
    if let Some(parent) = label_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::internal(format!("creating {}: {e}", parent.display())))?;
    }
    if label_path.exists() {
        ctx.input(label_path.clone());
    }
    // Fail on a corrupt log before opening it for appends.
    read_label_log(&label_path)?;
    let log = LabelLog::open(&label_path)?;
    AppState::new(bundle, segs, reps, log, ctx.cfg.reward)
}
