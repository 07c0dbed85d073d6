//! Local HTTP/JSON API for the ROI selection companion: point cloud and
//! cameras, live camera grouping, the working ROI set and preview renders.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use roi_core::composition::{render_image_composed, CompositionConfig, CompositionError, CompositionStats, RoiRuntime};
use roi_core::fields::RadianceField;
use roi_core::geometry::{Aabb, Pose};
use roi_core::grouping::{group_cameras, parse_roi_specs, preview_group, GroupPreview, GroupingConfig, GroupingError, GroupingResult, RoiSpec};
use roi_core::rendering::{render_image, ImageBuffer, RenderError, SamplerConfig};
use roi_core::sfm::{CameraIntrinsics, Reconstruction, ViewRecord};

pub const DEFAULT_POINT_BUDGET: usize = 100_000;
pub const DEFAULT_PREVIEW_DIM: u32 = 256;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no reconstruction loaded")]
    NoSession,
    #[error("fields are not loaded")]
    FieldsNotLoaded,
    #[error("{0}")]
    EmptyRoi(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NoSession | ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::FieldsNotLoaded => StatusCode::CONFLICT,
            ApiError::EmptyRoi(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ApiError::NoSession => "no-session",
            ApiError::FieldsNotLoaded => "fields-not-loaded",
            ApiError::EmptyRoi(_) => "empty-roi",
            ApiError::BadRequest(_) => "bad-request",
            ApiError::NotFound(_) => "not-found",
            ApiError::Internal(_) => "internal",
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.kind().into(), message: self.to_string() };
        (self.status(), Json(body)).into_response()
    }
}

impl From<GroupingError> for ApiError {
    fn from(e: GroupingError) -> Self {
        match e {
            GroupingError::EmptyRoi(_) => ApiError::EmptyRoi(e.to_string()),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl From<CompositionError> for ApiError {
    fn from(e: CompositionError) -> Self {
        match e {
            CompositionError::Render(r) => r.into(),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl From<RenderError> for ApiError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::InvalidConfig(_) | RenderError::Geometry(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

/// Fields used by preview renders.
#[derive(Clone)]
pub struct PreviewFields {
    pub scene: Arc<dyn RadianceField>,
    pub sampler: SamplerConfig,
    pub rois: Vec<RoiRuntime>,
    pub composition: CompositionConfig,
}

/// Working ROI set. Replaced whole on every save.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSet {
    pub id: u64,
    pub rois: Vec<RoiSpec>,
    pub groups: Option<GroupingResult>,
}

pub struct SessionState {
    recon: Option<Arc<Reconstruction>>,
    fields: Option<PreviewFields>,
    rois: RwLock<Arc<RoiSet>>,
    pub point_budget: usize,
    pub seed: u64,
    pub grouping: GroupingConfig,
    /// Where saved ROI sets are written as roi-groups documents.
    pub persist_path: Option<PathBuf>,
    pub cors_origins: Vec<String>,
}

impl SessionState {
    pub fn new(recon: Option<Reconstruction>) -> Self {
        Self {
            recon: recon.map(Arc::new),
            fields: None,
            rois: RwLock::new(Arc::new(RoiSet { id: 0, rois: Vec::new(), groups: None })),
            point_budget: DEFAULT_POINT_BUDGET,
            seed: 0,
            grouping: GroupingConfig::default(),
            persist_path: None,
            cors_origins: Vec::new(),
        }
    }

    pub fn with_fields(mut self, fields: PreviewFields) -> Self {
        self.fields = Some(fields);
        self
    }

    pub fn reconstruction(&self) -> Option<&Reconstruction> {
        self.recon.as_deref()
    }

    pub fn current_rois(&self) -> Arc<RoiSet> {
        self.rois.read().expect("roi lock poisoned").clone()
    }

    fn session(&self) -> Result<&Arc<Reconstruction>, ApiError> {
        self.recon.as_ref().ok_or(ApiError::NoSession)
    }
}

pub type SharedState = Arc<SessionState>;

pub fn router(state: SharedState) -> Router {
    let cors = cors_layer(&state.cors_origins);
    Router::new()
        .route("/api/reconstruction", get(get_reconstruction))
        .route("/api/group", post(post_group))
        .route("/api/rois", get(get_rois).post(post_rois))
        .route("/api/preview", post(post_preview))
        .layer(cors)
        .with_state(state)
}

/// Listed origins, or any `localhost` / `127.0.0.1` origin when none are given.
fn cors_layer(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::predicate(|origin: &HeaderValue, _| {
            let o = origin.to_str().unwrap_or("");
            ["http://localhost", "http://127.0.0.1", "https://localhost"]
                .iter()
                .any(|p| o == *p || o.strip_prefix(p).is_some_and(|rest| rest.starts_with(':')))
        })
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new().allow_origin(allow).allow_methods(Any).allow_headers(Any)
}

pub async fn serve(state: SharedState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Default, Deserialize)]
pub struct ReconQuery {
    pub budget: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PointOut {
    pub id: u64,
    pub position: [f64; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraOut {
    pub view_id: u32,
    pub name: String,
    pub center: [f64; 3],
    /// World-to-camera rotation as `[w, x, y, z]`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ReconstructionOut {
    pub total_points: usize,
    pub points: Vec<PointOut>,
    pub cameras: Vec<CameraOut>,
}

pub fn reconstruction_payload(recon: &Reconstruction, budget: usize, seed: u64) -> ReconstructionOut {
    let points = recon
        .decimated_points(budget, seed)
        .into_iter()
        .map(|p| PointOut { id: p.point_id, position: p.position.coords.into(), color: p.color })
        .collect();
    let cameras = recon
        .views
        .values()
        .map(|v| {
            let q = v.pose.rotation.quaternion();
            CameraOut {
                view_id: v.view_id,
                name: v.name.clone(),
                center: v.center().coords.into(),
                qvec: [q.w, q.i, q.j, q.k],
                tvec: v.pose.translation.into(),
                intrinsics: recon.intrinsics_for(v).clone(),
            }
        })
        .collect();
    ReconstructionOut { total_points: recon.points.len(), points, cameras }
}

async fn get_reconstruction(State(state): State<SharedState>, Query(q): Query<ReconQuery>) -> Result<Json<ReconstructionOut>, ApiError> {
    let recon = state.session()?;
    Ok(Json(reconstruction_payload(recon, q.budget.unwrap_or(state.point_budget), q.seed.unwrap_or(state.seed))))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRequest {
    pub aabb: Aabb,
    #[serde(default)]
    pub threshold_fraction: Option<f64>,
    #[serde(default)]
    pub name: Option<String>,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    serde_json::from_str(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn post_group(State(state): State<SharedState>, body: String) -> Result<Json<GroupPreview>, ApiError> {
    let recon = state.session()?;
    let req: GroupRequest = parse_json(&body)?;
    let mut spec = RoiSpec::new(req.name.unwrap_or_else(|| "roi".into()), req.aabb);
    if let Some(f) = req.threshold_fraction {
        spec.threshold_fraction = f;
    }
    Ok(Json(preview_group(recon, &spec, &state.grouping)?))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SavedRois {
    pub id: String,
    pub count: usize,
}

async fn post_rois(State(state): State<SharedState>, body: String) -> Result<Json<SavedRois>, ApiError> {
    let specs = parse_roi_specs(&body)?;
    let groups = match state.recon.as_deref() {
        Some(recon) => Some(group_cameras(recon, &specs, &state.grouping, state.seed)?),
        None => None,
    };
    let mut guard = state.rois.write().expect("roi lock poisoned");
    let id = guard.id + 1;
    if let (Some(path), Some(g)) = (&state.persist_path, &groups) {
        std::fs::write(path, g.to_json()).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    }
    let count = specs.len();
    *guard = Arc::new(RoiSet { id, rois: specs, groups });
    Ok(Json(SavedRois { id: id.to_string(), count }))
}

async fn get_rois(State(state): State<SharedState>) -> Json<RoiSet> {
    Json(state.current_rois().as_ref().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreviewMode {
    SceneOnly,
    Composed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseIn {
    /// World-to-camera rotation `[w, x, y, z]`; normalized on input.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    #[serde(default)]
    pub view_id: Option<u32>,
    #[serde(default)]
    pub pose: Option<PoseIn>,
    /// Camera for `pose`; defaults to the first camera.
    #[serde(default)]
    pub camera_id: Option<u32>,
    pub mode: PreviewMode,
    #[serde(default)]
    pub max_dim: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub mode: PreviewMode,
    pub width: u32,
    pub height: u32,
    pub png_base64: String,
    pub stats: Option<CompositionStats>,
}

/// Resolves the camera and renders. Shared by the HTTP handler and tests.
pub fn render_preview(state: &SessionState, req: &PreviewRequest) -> Result<(ImageBuffer, Option<CompositionStats>), ApiError> {
    let recon = state.session()?;
    let fields = state.fields.as_ref().ok_or(ApiError::FieldsNotLoaded)?;
    let max_dim = req.max_dim.unwrap_or(DEFAULT_PREVIEW_DIM);
    if max_dim == 0 {
        return Err(ApiError::BadRequest("max_dim must be >= 1".into()));
    }
    let (view, k) = match (req.view_id, &req.pose) {
        (Some(id), None) => {
            let (v, k) = recon.view_and_intrinsics(id).ok_or_else(|| ApiError::NotFound(format!("view {id}")))?;
            (v.clone(), k.clone())
        }
        (None, Some(p)) => {
            let k = match req.camera_id {
                Some(c) => recon.intrinsics.get(&c).ok_or_else(|| ApiError::NotFound(format!("camera {c}")))?,
                None => recon.intrinsics.values().next().ok_or_else(|| ApiError::BadRequest("reconstruction has no cameras".into()))?,
            };
            let q = Quaternion::new(p.qvec[0], p.qvec[1], p.qvec[2], p.qvec[3]);
            if !(q.norm() > 1e-12) || p.qvec.iter().chain(&p.tvec).any(|x| !x.is_finite()) {
                return Err(ApiError::BadRequest("degenerate pose".into()));
            }
            let pose = Pose { rotation: UnitQuaternion::from_quaternion(q), translation: Vector3::from(p.tvec) };
            let view = ViewRecord { view_id: 0, name: "preview".into(), camera_id: k.camera_id, pose, observations: Vec::new() };
            (view, k.clone())
        }
        _ => return Err(ApiError::BadRequest("give exactly one of view_id and pose".into())),
    };
    let k = k.fit_within(max_dim);
    match req.mode {
        PreviewMode::SceneOnly => Ok((render_image(fields.scene.as_ref(), &view, &k, &fields.sampler)?, None)),
        PreviewMode::Composed => {
            let (img, stats) = render_image_composed(fields.scene.as_ref(), &fields.rois, &view, &k, &fields.sampler, &fields.composition)?;
            Ok((img, Some(stats)))
        }
    }
}

async fn post_preview(State(state): State<SharedState>, body: String) -> Result<Json<PreviewResponse>, ApiError> {
    let req: PreviewRequest = parse_json(&body)?;
    let mode = req.mode;
    let (img, stats) = tokio::task::spawn_blocking(move || render_preview(&state, &req))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let png = img.to_png()?;
    Ok(Json(PreviewResponse {
        mode,
        width: img.width,
        height: img.height,
        png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        stats,
    }))
}
