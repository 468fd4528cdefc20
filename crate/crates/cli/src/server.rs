//! JSON-over-HTTP annotation service. Click handling is synchronous and
//! stateless; accepted labels are kept per frame behind one lock and
//! mirrored to `<output>/accepted/<frame_id>.labels`.

use std::sync::{Arc, Mutex, OnceLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use clicklift_core::clicksim::ClickAnnotation;
use clicklift_core::dataio::{write_labels, PseudoLabelSet, Stage, IGNORE};
use clicklift_core::error::Error;
use clicklift_core::ile::iou;
use clicklift_core::maskprovider::MaskProvider;
use clicklift_core::metrics::{instances_of, EvalReport};
use clicklift_core::pipeline::{PipelineConfig, Workspace};
use clicklift_core::plg::{generate_pseudo_label, FrameContext, PlgConfig, PlgOutcome};

pub const MAX_BEV_POINTS: usize = 50_000;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Lookup(_) | Error::MissingInput { .. } => StatusCode::NOT_FOUND,
            Error::Config(_) | Error::Input(_) | Error::Format { .. } | Error::Spec(_) => StatusCode::BAD_REQUEST,
            Error::ContractViolation(_) | Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

pub struct AppState {
    pub ws: Workspace,
    provider: Box<dyn MaskProvider + Send + Sync>,
    plg: PlgConfig,
    contexts: Vec<OnceLock<FrameContext>>,
    accepted: Mutex<Vec<Option<PseudoLabelSet>>>,
}

impl AppState {
    pub fn new(cfg: PipelineConfig) -> clicklift_core::error::Result<Self> {
        let ws = Workspace::open(cfg)?;
        let provider = ws.mask_provider()?;
        let plg = ws.cfg.effective_plg();
        let n = ws.frames.len();
        Ok(Self {
            ws,
            provider,
            plg,
            contexts: (0..n).map(|_| OnceLock::new()).collect(),
            accepted: Mutex::new(vec![None; n]),
        })
    }

    fn frame_index(&self, frame_id: &str) -> Result<usize, ApiError> {
        self.ws
            .sequence
            .manifest
            .frame_index(frame_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown frame `{frame_id}`")))
    }

    fn context(&self, index: usize) -> Result<&FrameContext, ApiError> {
        if let Some(ctx) = self.contexts[index].get() {
            return Ok(ctx);
        }
        let frame = &self.ws.frames[index];
        let ctx = FrameContext::new(
            frame.frame_id.clone(),
            frame.positions(),
            self.ws.sequence.manifest.calibration.clone(),
        )?;
        Ok(self.contexts[index].get_or_init(|| ctx))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sequences", get(sequences))
        .route("/api/frames/{id}/bev", get(bev))
        .route("/api/clicks", post(click))
        .route("/api/labels/accept", post(accept))
        .route("/api/report", get(report))
        .with_state(state)
}

pub async fn serve(cfg: PipelineConfig, host: &str, port: u16) -> anyhow::Result<()> {
    let state = Arc::new(AppState::new(cfg)?);
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame_id: String,
    pub timestamp: f64,
    pub num_points: usize,
    pub has_gt: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub sequence_id: String,
    pub classes: Vec<String>,
    pub frames: Vec<FrameSummary>,
}

async fn sequences(State(state): State<Arc<AppState>>) -> Json<Vec<SequenceSummary>> {
    let m = &state.ws.sequence.manifest;
    Json(vec![SequenceSummary {
        sequence_id: m.sequence_id.clone(),
        classes: m.classes.clone(),
        frames: state
            .ws
            .frames
            .iter()
            .map(|f| FrameSummary {
                frame_id: f.frame_id.clone(),
                timestamp: f.timestamp,
                num_points: f.len(),
                has_gt: f.gt.is_some(),
            })
            .collect(),
    }])
}

#[derive(Debug, Deserialize)]
pub struct BevQuery {
    pub max_points: Option<usize>,
}

/// Column-oriented scatter; `index` maps each entry back to the frame.
#[derive(Debug, Serialize, Deserialize)]
pub struct BevPayload {
    pub frame_id: String,
    pub num_points: usize,
    pub stride: usize,
    pub index: Vec<usize>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub range: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_class: Option<Vec<i32>>,
}

async fn bev(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<BevQuery>,
) -> ApiResult<BevPayload> {
    let frame = &state.ws.frames[state.frame_index(&id)?];
    let cap = q.max_points.unwrap_or(MAX_BEV_POINTS).clamp(1, MAX_BEV_POINTS);
    let n = frame.len();
    let stride = n.div_ceil(cap).max(1);
    let index: Vec<usize> = (0..n).step_by(stride).collect();
    let pos = |i: usize| frame.points[i].position();
    Ok(Json(BevPayload {
        frame_id: id,
        num_points: n,
        stride,
        x: index.iter().map(|&i| pos(i).x).collect(),
        y: index.iter().map(|&i| pos(i).y).collect(),
        range: index.iter().map(|&i| pos(i).bev_range()).collect(),
        gt_class: frame
            .gt
            .as_ref()
            .map(|gt| index.iter().map(|&i| gt.class_ids[i]).collect()),
        index,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickRequest {
    pub frame_id: String,
    pub class_id: i32,
    pub bev: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtMatch {
    pub gt_instance_id: i32,
    pub iou: f64,
}

#[derive(Debug, Serialize)]
pub struct ClickResponse {
    pub frame_id: String,
    pub class_id: i32,
    #[serde(flatten)]
    pub outcome: PlgOutcome,
    /// Nearest frame point within the prompt radius.
    pub resolved_point_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_vs_gt: Option<GtMatch>,
}

fn best_gt_match(labels: &[usize], gt: &PseudoLabelSet) -> Option<GtMatch> {
    instances_of(gt)
        .into_iter()
        .map(|(id, _, g)| GtMatch {
            gt_instance_id: id,
            iou: iou(labels, &g),
        })
        .fold(None, |best: Option<GtMatch>, m| match best {
            Some(b) if b.iou >= m.iou => Some(b),
            _ => Some(m),
        })
}

async fn click(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ClickRequest>, JsonRejection>,
) -> ApiResult<ClickResponse> {
    let Json(req) = body?;
    let index = state.frame_index(&req.frame_id)?;
    let annotation = ClickAnnotation {
        frame_id: req.frame_id.clone(),
        instance_id: 0,
        class_id: req.class_id,
        bev: req.bev,
        resolved_point_index: None,
    };
    annotation
        .validate(state.ws.num_classes())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let ctx = state.context(index)?;
    let outcome = generate_pseudo_label(ctx, &annotation, state.provider.as_ref(), &state.plg)?;
    let resolved_point_index = ctx
        .candidates_near(req.bev[0], req.bev[1], state.plg.effective_prompt_radius())
        .first()
        .copied();
    let iou_vs_gt = match &state.ws.frames[index].gt {
        Some(gt) if outcome.is_accepted() => best_gt_match(&outcome.label_indices, gt),
        _ => None,
    };
    Ok(Json(ClickResponse {
        frame_id: req.frame_id,
        class_id: req.class_id,
        outcome,
        resolved_point_index,
        iou_vs_gt,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptRequest {
    pub frame_id: String,
    pub class_id: i32,
    pub label_indices: Vec<usize>,
    /// Defaults to one past the largest accepted id of the frame.
    #[serde(default)]
    pub instance_id: Option<i32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AcceptResponse {
    pub frame_id: String,
    pub instance_id: i32,
    pub labelled_points: usize,
}

async fn accept(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AcceptRequest>, JsonRejection>,
) -> ApiResult<AcceptResponse> {
    let Json(req) = body?;
    let index = state.frame_index(&req.frame_id)?;
    if req.class_id < 0 || req.class_id as usize >= state.ws.num_classes() {
        return Err(ApiError::bad_request(format!("class_id {} out of range", req.class_id)));
    }
    let n = state.ws.frames[index].len();
    if let Some(&bad) = req.label_indices.iter().find(|&&i| i >= n) {
        return Err(ApiError::bad_request(format!(
            "label_indices: point {bad} out of range for {n} points"
        )));
    }
    if req.instance_id.is_some_and(|id| id < 0) {
        return Err(ApiError::bad_request("instance_id must be non-negative"));
    }

    let mut accepted = state.accepted.lock().expect("accepted-label lock poisoned");
    let labels = accepted[index].get_or_insert_with(|| PseudoLabelSet::ignored(Stage::Plg, n));
    let instance_id = req
        .instance_id
        .unwrap_or_else(|| labels.instance_ids.iter().copied().max().unwrap_or(IGNORE) + 1);
    for &i in &req.label_indices {
        labels.class_ids[i] = req.class_id;
        labels.instance_ids[i] = instance_id;
        labels.confidences[i] = 1.0;
    }
    let dir = crate::accepted_dir(&state.ws.cfg.paths.output);
    std::fs::create_dir_all(&dir).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    write_labels(&dir.join(format!("{}.labels", req.frame_id)), labels)?;
    Ok(Json(AcceptResponse {
        frame_id: req.frame_id,
        instance_id,
        labelled_points: labels.instance_ids.iter().filter(|&&id| id == instance_id).count(),
    }))
}

async fn report(State(state): State<Arc<AppState>>) -> ApiResult<EvalReport> {
    let labels: Vec<PseudoLabelSet> = {
        let accepted = state.accepted.lock().expect("accepted-label lock poisoned");
        accepted
            .iter()
            .zip(&state.ws.frames)
            .map(|(l, f)| {
                l.clone()
                    .unwrap_or_else(|| PseudoLabelSet::ignored(Stage::Plg, f.len()))
            })
            .collect()
    };
    Ok(Json(state.ws.evaluate_labels("accepted", &labels)?))
}
