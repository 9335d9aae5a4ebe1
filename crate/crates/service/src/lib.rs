//! HTTP backend for click annotation.
//!
//! Serves BEV rasters of a KITTI-style dataset, turns single BEV clicks into
//! cuboids with the stage-2 network, and persists accepted annotations.
//! All coordinates are meters in the internal world frame.

pub mod bev;
pub mod session;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use bevclick_core::kitti::{ClickAnnotation, Dataset, KittiError, Scene};
use bevclick_core::Cuboid;
use bevclick_detector::{active_annotate, infer_scene, Detector, DetectorError};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use bev::{rasterize_bev, BevRaster, BevWindow, HeightScale};
pub use session::{atomic_write, AnnotationStore, SceneSession};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("no annotation {0}")]
    NoAnnotation(usize),
    #[error("({x:.2}, {z:.2}) lies outside the BEV window")]
    OutOfWindow { x: f64, z: f64 },
    #[error("no points near ({x:.2}, {z:.2}); click closer to the object center")]
    NoPoints { x: f64, z: f64 },
    #[error("no detector loaded")]
    NoDetector,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error(transparent)]
    Detector(DetectorError),
    #[error("internal: {0}")]
    Internal(String),
}

impl From<DetectorError> for ApiError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::NoPoints { x, z } => ApiError::NoPoints { x, z },
            e => ApiError::Detector(e),
        }
    }
}

impl ApiError {
    fn status(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::UnknownScene(_) | ApiError::NoAnnotation(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::OutOfWindow { .. } => (StatusCode::BAD_REQUEST, "out_of_window"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::NoPoints { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "no_points"),
            ApiError::NoDetector => (StatusCode::SERVICE_UNAVAILABLE, "no_detector"),
            ApiError::Kitti(_) | ApiError::Detector(_) | ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": code, "message": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Everything the handlers share. Session mutation goes through one lock;
/// inference runs outside it.
pub struct AppState {
    pub dataset: Dataset,
    pub store: AnnotationStore,
    pub detector: Option<Arc<Detector>>,
    pub window: BevWindow,
    pub scale: HeightScale,
    /// Seed for the stochastic parts of inference.
    pub seed: u64,
    scenes: Mutex<HashMap<String, Arc<Scene>>>,
    sessions: Mutex<HashMap<String, SceneSession>>,
}

impl AppState {
    /// Annotations go to `out`; the detector's class, or `Car`, names them.
    pub fn new(dataset: Dataset, out: impl Into<PathBuf>, detector: Option<Detector>) -> Self {
        let class = detector.as_ref().map_or("Car", |d| d.cfg.profile.class.name());
        Self {
            store: AnnotationStore::new(out, class),
            dataset,
            detector: detector.map(Arc::new),
            window: BevWindow::default(),
            scale: HeightScale::default(),
            seed: 0,
            scenes: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn scene(&self, id: &str) -> ApiResult<Arc<Scene>> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid || !self.dataset.velodyne_path(id).is_file() {
            return Err(ApiError::UnknownScene(id.to_string()));
        }
        if let Some(s) = lock(&self.scenes)?.get(id) {
            return Ok(s.clone());
        }
        let scene = Arc::new(self.dataset.load_scene(id)?);
        lock(&self.scenes)?.insert(id.to_string(), scene.clone());
        Ok(scene)
    }

    /// Run `f` on the scene's session under the writer lock, then persist.
    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut SceneSession, &Scene) -> ApiResult<T>) -> ApiResult<T> {
        let scene = self.scene(id)?;
        let mut sessions = lock(&self.sessions)?;
        let session = match sessions.entry(id.to_string()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(self.store.load(id)?),
        };
        let out = f(session, &scene)?;
        self.store.persist(id, session, &scene.calib)?;
        Ok(out)
    }

    fn snapshot(&self, id: &str) -> ApiResult<SceneSession> {
        self.with_session(id, |s, _| Ok(s.clone()))
    }
}

fn lock<T>(m: &Mutex<T>) -> ApiResult<std::sync::MutexGuard<'_, T>> {
    m.lock().map_err(|_| ApiError::Internal("state lock poisoned".into()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}/bev", get(get_bev))
        .route("/scenes/{id}/annotations", get(get_annotations))
        .route("/scenes/{id}/annotations/{k}", delete(delete_annotation))
        .route("/scenes/{id}/clicks", post(post_click))
        .route("/scenes/{id}/clicks/{k}", delete(delete_click))
        .route("/scenes/{id}/accept", post(post_accept))
        .route("/scenes/{id}/auto", post(post_auto))
        .with_state(state)
}

/// Serve until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSummary {
    pub id: String,
    pub clicks: usize,
    pub cuboids: usize,
}

async fn list_scenes(State(st): State<Arc<AppState>>) -> ApiResult<Json<Vec<SceneSummary>>> {
    blocking(move || {
        let ids = st.dataset.scene_ids()?;
        let sessions = lock(&st.sessions)?;
        ids.into_iter()
            .map(|id| {
                let s = match sessions.get(&id) {
                    Some(s) => s.clone(),
                    None => st.store.load(&id)?,
                };
                Ok(SceneSummary {
                    clicks: s.clicks.len(),
                    cuboids: s.accepted.len(),
                    id,
                })
            })
            .collect::<ApiResult<Vec<_>>>()
            .map(Json)
    })
    .await
}

#[derive(Debug, Deserialize)]
struct BevQuery {
    format: Option<String>,
}

async fn get_bev(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<BevQuery>) -> ApiResult<Response> {
    let format = q.format.unwrap_or_else(|| "json".into());
    if format != "json" && format != "png" {
        return Err(ApiError::BadRequest(format!("unknown format `{format}`, expected json or png")));
    }
    blocking(move || {
        let scene = st.scene(&id)?;
        let raster = rasterize_bev(&scene.cloud, st.window, st.scale);
        Ok(if format == "png" {
            let png = raster.to_png().map_err(|e| ApiError::Internal(e.to_string()))?;
            ([(header::CONTENT_TYPE, "image/png")], png).into_response()
        } else {
            Json(raster).into_response()
        })
    })
    .await
}

/// A cuboid plus its footprint corners for drawing.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CuboidView {
    pub cuboid: Cuboid,
    pub bev_corners: [[f64; 2]; 4],
}

impl From<Cuboid> for CuboidView {
    fn from(cuboid: Cuboid) -> Self {
        Self {
            bev_corners: cuboid.bev_corners(),
            cuboid,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Annotations {
    pub clicks: Vec<ClickAnnotation>,
    pub cuboids: Vec<CuboidView>,
}

impl From<SceneSession> for Annotations {
    fn from(s: SceneSession) -> Self {
        Self {
            clicks: s.clicks,
            cuboids: s.accepted.into_iter().map(CuboidView::from).collect(),
        }
    }
}

async fn get_annotations(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Annotations>> {
    blocking(move || Ok(Json(st.snapshot(&id)?.into()))).await
}

async fn delete_annotation(State(st): State<Arc<AppState>>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Json<Annotations>> {
    blocking(move || {
        st.with_session(&id, |s, _| {
            if k >= s.accepted.len() {
                return Err(ApiError::NoAnnotation(k));
            }
            s.accepted.remove(k);
            s.dirty = true;
            Ok(Json(s.clone().into()))
        })
    })
    .await
}

async fn delete_click(State(st): State<Arc<AppState>>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Json<Annotations>> {
    blocking(move || {
        st.with_session(&id, |s, _| {
            if k >= s.clicks.len() {
                return Err(ApiError::NoAnnotation(k));
            }
            s.clicks.remove(k);
            s.dirty = true;
            Ok(Json(s.clone().into()))
        })
    })
    .await
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickMode {
    Active,
    #[serde(alias = "record")]
    RecordOnly,
}

/// A click in world meters (`x`, `z`) or raster pixels (`u`, `v`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClickRequest {
    pub x: Option<f64>,
    pub z: Option<f64>,
    pub u: Option<f64>,
    pub v: Option<f64>,
    pub mode: ClickMode,
}

impl ClickRequest {
    fn world(&self, window: &BevWindow) -> ApiResult<(f64, f64)> {
        let (x, z) = match (self.x, self.z, self.u, self.v) {
            (Some(x), Some(z), None, None) => (x, z),
            (None, None, Some(u), Some(v)) => window.pixel_to_world(u, v),
            _ => return Err(ApiError::BadRequest("give either x and z or u and v".into())),
        };
        if !(x.is_finite() && z.is_finite()) {
            return Err(ApiError::BadRequest("coordinates must be finite".into()));
        }
        if !window.contains(x, z) {
            return Err(ApiError::OutOfWindow { x, z });
        }
        Ok((x, z))
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ClickResponse {
    Active {
        x: f64,
        z: f64,
        cuboid: CuboidView,
        confidence: f64,
        candidates: Vec<[f64; 2]>,
        candidate_confidences: Vec<Option<f64>>,
    },
    RecordOnly {
        click: ClickAnnotation,
        index: usize,
    },
}

async fn post_click(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<ClickRequest>) -> ApiResult<Json<ClickResponse>> {
    let (x, z) = req.world(&st.window)?;
    blocking(move || match req.mode {
        ClickMode::RecordOnly => st.with_session(&id, |s, _| {
            let click = st.store.canonical_click(x, z)?;
            s.clicks.push(click.clone());
            s.dirty = true;
            Ok(Json(ClickResponse::RecordOnly {
                click,
                index: s.clicks.len() - 1,
            }))
        }),
        ClickMode::Active => {
            let det = st.detector.clone().ok_or(ApiError::NoDetector)?;
            let scene = st.scene(&id)?;
            let r = active_annotate(&det.stage2, &det.cfg.profile, &scene.cloud, (x, z), st.seed)?;
            Ok(Json(ClickResponse::Active {
                x,
                z,
                cuboid: r.cuboid.into(),
                confidence: r.confidence,
                candidates: r.candidates,
                candidate_confidences: r.candidate_confidences,
            }))
        }
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptRequest {
    pub cuboid: Cuboid,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AcceptResponse {
    pub index: usize,
    /// The cuboid as stored, at label-file precision.
    pub cuboid: CuboidView,
}

async fn post_accept(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<AcceptRequest>) -> ApiResult<Json<AcceptResponse>> {
    let c = req.cuboid;
    let cuboid = Cuboid::new(c.cx, c.cy, c.cz, c.h, c.w, c.l, c.theta).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    blocking(move || {
        st.with_session(&id, |s, scene| {
            let stored = st.store.canonical_cuboid(&cuboid, &scene.calib)?;
            s.accepted.push(stored);
            s.dirty = true;
            Ok(Json(AcceptResponse {
                index: s.accepted.len() - 1,
                cuboid: stored.into(),
            }))
        })
    })
    .await
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Detection {
    pub cuboid: CuboidView,
    pub confidence: f64,
}

/// Automatic mode: run the full detector on the scene. Nothing is stored.
async fn post_auto(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Vec<Detection>>> {
    blocking(move || {
        let det = st.detector.clone().ok_or(ApiError::NoDetector)?;
        let scene = st.scene(&id)?;
        let boxes = infer_scene(&det, &scene.cloud, st.seed)?;
        Ok(Json(
            boxes
                .into_iter()
                .map(|(c, confidence)| Detection {
                    cuboid: c.into(),
                    confidence,
                })
                .collect(),
        ))
    })
    .await
}
