//! HTTP service for interactive analysis and curation.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/api/sessions?pixel_size_um=&preset=` | upload raw image bytes |
//! | GET | `/api/sessions/{id}` | session summary |
//! | GET | `/api/sessions/{id}/source` | uploaded bytes |
//! | POST | `/api/sessions/{id}/analyze` | `{"overrides": {...}}` |
//! | POST | `/api/sessions/{id}/curation` | `{"epoch": n, "edits": [...]}` |
//! | GET | `/api/sessions/{id}/artifacts/{name}` | overlay, thickness, histograms, original, vesselness, mask |
//! | GET | `/api/sessions/{id}/network` | element geometry for hit-testing |
//! | POST | `/api/sessions/{id}/sweep` | masks and a line profile per σ_max |
//! | GET | `/api/sessions/{id}/export?file=` | bundle manifest, or one raw file |

pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use octava_core::image::{encode_png, BitDepth};
use octava_core::metrics::MetricsReport;
use octava_core::pipeline::{config_hash, segment_image, AnalysisParams, HistogramComparison, Stage};
use octava_core::topology::{CurationEdit, ElementClass};
use octava_core::GrayImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use store::{SessionState, Store, StoreError};

/// Uploads and requests larger than this are rejected.
pub const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
}

impl AppState {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        Ok(Self { store: Arc::new(Store::open(root)?) })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/source", get(get_source))
        .route("/api/sessions/{id}/analyze", post(analyze))
        .route("/api/sessions/{id}/curation", post(curate))
        .route("/api/sessions/{id}/artifacts/{name}", get(artifact))
        .route("/api/sessions/{id}/network", get(network))
        .route("/api/sessions/{id}/sweep", post(sweep))
        .route("/api/sessions/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub async fn serve(root: PathBuf, addr: SocketAddr) -> std::io::Result<()> {
    let app = router(AppState::open(root)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError(status, ErrorBody { error: message.into(), stage: None })
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound => ApiError::new(StatusCode::NOT_FOUND, message),
            StoreError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, message),
            StoreError::BadRequest(_) => ApiError::new(StatusCode::BAD_REQUEST, message),
            StoreError::Pipeline(p) => {
                let status = if p.stage == Stage::Config { StatusCode::BAD_REQUEST } else { StatusCode::UNPROCESSABLE_ENTITY };
                ApiError(status, ErrorBody { error: message, stage: Some(p.stage) })
            }
            StoreError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn slot(app: &AppState, id: String) -> ApiResult<Arc<store::Slot>> {
    let store = app.store.clone();
    blocking(move || store.slot(&id)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateQuery {
    pixel_size_um: f64,
    #[serde(default)]
    preset: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnalysisView<'a> {
    config_hash: &'a str,
    result_hash: String,
    report: &'a MetricsReport,
    warnings: &'a [String],
    edits: &'a [CurationEdit],
}

#[derive(Debug, Serialize)]
struct SessionView<'a> {
    id: &'a str,
    width: usize,
    height: usize,
    source_sha256: &'a str,
    epoch: u64,
    params: &'a AnalysisParams,
    analysis: Option<AnalysisView<'a>>,
}

fn session_view(s: &SessionState) -> SessionView<'_> {
    SessionView {
        id: &s.id,
        width: s.width,
        height: s.height,
        source_sha256: &s.source_sha256,
        epoch: s.epoch,
        params: &s.params,
        analysis: s.current.as_ref().map(|c| AnalysisView {
            config_hash: &c.analysis.config_hash,
            result_hash: c.analysis.result_hash(),
            report: &c.analysis.report,
            warnings: &c.analysis.warnings,
            edits: &c.analysis.edits,
        }),
    }
}

fn artifact_urls(id: &str) -> Value {
    let u = |n: &str| format!("/api/sessions/{id}/artifacts/{n}");
    json!({
        "overlay": u("overlay"),
        "thickness": u("thickness"),
        "histograms": u("histograms"),
        "original": u("original"),
        "vesselness": u("vesselness"),
        "mask": u("mask"),
    })
}

fn preset(name: Option<&str>) -> ApiResult<AnalysisParams> {
    match name.unwrap_or("default") {
        "default" => Ok(AnalysisParams::default()),
        "grid" => Ok(AnalysisParams::grid_phantom()),
        "network" => Ok(AnalysisParams::network_phantom()),
        other => Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown preset {other:?}"))),
    }
}

async fn create_session(
    State(app): State<AppState>,
    query: Result<Query<CreateQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    let params = AnalysisParams { pixel_size_um: Some(q.pixel_size_um), ..preset(q.preset.as_deref())? };
    let store = app.store.clone();
    let state = blocking(move || store.create(body.to_vec(), params)).await?;
    Ok((StatusCode::CREATED, Json(session_view(&state))).into_response())
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = slot(&app, id).await?.snapshot();
    Ok(Json(session_view(&s)).into_response())
}

async fn get_source(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = slot(&app, id).await?.snapshot();
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], s.source.as_ref().clone()).into_response())
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct AnalyzeRequest {
    overrides: Value,
}

#[derive(Serialize)]
struct AnalyzeResponse<'a> {
    #[serde(flatten)]
    session: SessionView<'a>,
    cache_hit: bool,
    artifacts: Value,
}

fn json_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

async fn analyze(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: AnalyzeRequest = json_body(&body)?;
    let slot = slot(&app, id).await?;
    let store = app.store.clone();
    let outcome = blocking(move || store.analyze(&slot, &req.overrides)).await?;
    let s = &outcome.state;
    Ok(Json(AnalyzeResponse { session: session_view(s), cache_hit: outcome.cache_hit, artifacts: artifact_urls(&s.id) })
        .into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CurationRequest {
    epoch: u64,
    #[serde(default)]
    edits: Vec<CurationEdit>,
}

#[derive(Serialize)]
struct CurationResponse<'a> {
    #[serde(flatten)]
    session: SessionView<'a>,
    histograms: HistogramComparison,
}

async fn curate(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: CurationRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))?;
    let slot = slot(&app, id).await?;
    let store = app.store.clone();
    let s = blocking(move || store.curate(&slot, req.epoch, &req.edits)).await?;
    let cur = s.current.as_ref().expect("curation requires an analysis");
    let histograms = cur.analysis.histogram_comparison();
    Ok(Json(CurationResponse { session: session_view(&s), histograms }).into_response())
}

fn not_analyzed() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "no analysis yet; run analyze first")
}

fn content_type(name: &str) -> &'static str {
    if name.ends_with(".json") || name == "histograms" {
        "application/json"
    } else if name.ends_with(".csv") {
        "text/csv"
    } else {
        "image/png"
    }
}

fn cached(headers: &HeaderMap, etag: String, ctype: &'static str, bytes: Vec<u8>) -> Response {
    let etag_value = HeaderValue::from_str(&etag).expect("hex etag");
    let hit = headers.get(header::IF_NONE_MATCH).is_some_and(|v| v.as_bytes() == etag.as_bytes());
    let mut resp = if hit {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        ([(header::CONTENT_TYPE, ctype)], bytes).into_response()
    };
    resp.headers_mut().insert(header::ETAG, etag_value);
    resp.headers_mut().insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    resp
}

async fn artifact(
    State(app): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let s = slot(&app, id).await?.snapshot();
    let cur = s.current.as_ref().ok_or_else(not_analyzed)?;
    let file = match name.as_str() {
        "overlay" => octava_core::pipeline::OVERLAY_FILE,
        "thickness" => octava_core::pipeline::HEATMAP_FILE,
        "histograms" => octava_core::pipeline::HISTOGRAMS_FILE,
        "original" | "vesselness" | "mask" => name.as_str(),
        _ => return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown artifact {name:?}"))),
    };
    let bytes = cur.file(file).expect("artifact rendered").to_vec();
    Ok(cached(&headers, s.etag().expect("analyzed"), content_type(file), bytes))
}

#[derive(Serialize)]
struct NodeView {
    id: usize,
    x: f64,
    y: f64,
    diameter_um: f64,
}

#[derive(Serialize)]
struct ElementView<'a> {
    id: usize,
    class: ElementClass,
    path: &'a [(usize, usize)],
    start_node: Option<usize>,
    end_node: Option<usize>,
    length_um: f64,
    mean_diameter_um: f64,
    suppressed: bool,
    curated_out: bool,
}

#[derive(Serialize)]
struct MeshView<'a> {
    id: usize,
    area_um2: f64,
    outline: &'a [(usize, usize)],
}

async fn network(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = slot(&app, id).await?.snapshot();
    let cur = s.current.as_ref().ok_or_else(not_analyzed)?;
    let net = &cur.analysis.network;
    let body = json!({
        "epoch": s.epoch,
        "config_hash": cur.analysis.config_hash,
        "width": net.width,
        "height": net.height,
        "pixel_size_um": net.calibration.pixel_size_um,
        "nodes": net.nodes.iter().map(|n| NodeView { id: n.id, x: n.centroid.0, y: n.centroid.1, diameter_um: n.diameter_um }).collect::<Vec<_>>(),
        "elements": net.elements.iter().map(|e| ElementView {
            id: e.id,
            class: e.class,
            path: &e.path,
            start_node: e.start_node,
            end_node: e.end_node,
            length_um: e.length_um,
            mean_diameter_um: e.mean_diameter_um,
            suppressed: e.suppressed,
            curated_out: e.curated_out,
        }).collect::<Vec<_>>(),
        "meshes": net.meshes.iter().map(|m| MeshView { id: m.id, area_um2: m.area_um2, outline: &m.outline }).collect::<Vec<_>>(),
    });
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepRequest {
    sigma_max: Vec<f64>,
    #[serde(default)]
    profile: Option<[[f64; 2]; 2]>,
}

#[derive(Serialize)]
struct SweepEntry {
    sigma_max: f64,
    config_hash: String,
    mask_pixels: usize,
    mask_png_base64: String,
    /// Vesselness sampled at unit steps along the requested line.
    profile: Option<Vec<f64>>,
    profile_step_um: Option<f64>,
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width() - 1) as f64);
    let y = y.clamp(0.0, (img.height() - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn line_profile(img: &GrayImage, [[x0, y0], [x1, y1]]: [[f64; 2]; 2]) -> Vec<f64> {
    let len = (x1 - x0).hypot(y1 - y0);
    let n = len.floor() as usize + 1;
    (0..n)
        .map(|i| {
            let t = if len > 0.0 { i as f64 / len } else { 0.0 };
            bilinear(img, x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        })
        .collect()
}

fn sweep_one(s: &SessionState, sigma: f64, profile: Option<[[f64; 2]; 2]>) -> Result<SweepEntry, StoreError> {
    let params = s
        .params
        .with_overrides(&json!({ "frangi": { "sigma_max": sigma } }))
        .map_err(|e| StoreError::BadRequest(e.to_string()))?;
    let img = octava_core::pipeline::decode_input(&s.source, &params, None)?;
    let seg = segment_image(&img, &params)?;
    let m = &seg.mask;
    let mask_img = GrayImage::from_fn(m.width(), m.height(), m.calibration(), |x, y| if m.get(x, y) { 1.0 } else { 0.0 })
        .map_err(|e| StoreError::BadRequest(e.to_string()))?;
    let png = encode_png(&mask_img, BitDepth::Eight).map_err(|e| StoreError::BadRequest(e.to_string()))?;
    Ok(SweepEntry {
        sigma_max: sigma,
        config_hash: config_hash(&params, &s.source_sha256),
        mask_pixels: m.count(),
        mask_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        profile: profile.map(|p| line_profile(&seg.enhanced, p)),
        profile_step_um: profile.map(|_| seg.image.calibration().pixel_size_um),
    })
}

async fn sweep(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: SweepRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))?;
    if req.sigma_max.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "sigma_max must list at least one value"));
    }
    let s = slot(&app, id).await?.snapshot();
    let results = blocking(move || {
        req.sigma_max.iter().map(|&sig| sweep_one(&s, sig, req.profile)).collect::<Result<Vec<_>, _>>()
    })
    .await?;
    Ok(Json(json!({ "results": results })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    #[serde(default)]
    file: Option<String>,
}

#[derive(Serialize)]
struct ExportFile {
    name: String,
    sha256: String,
    size: usize,
    content_base64: String,
}

async fn export(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let s = slot(&app, id).await?.snapshot();
    let cur = s.current.as_ref().ok_or_else(not_analyzed)?;
    let etag = s.etag().expect("analyzed");
    if let Some(name) = q.file {
        let (_, bytes) = cur
            .bundle
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("bundle has no file {name:?}")))?;
        return Ok(cached(&headers, etag, content_type(&name), bytes.clone()));
    }
    let files: Vec<ExportFile> = cur
        .bundle
        .iter()
        .map(|(name, bytes)| ExportFile {
            name: name.clone(),
            sha256: octava_core::pipeline::sha256_hex(bytes),
            size: bytes.len(),
            content_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        })
        .collect();
    let body = json!({
        "epoch": s.epoch,
        "config_hash": cur.analysis.config_hash,
        "result_hash": cur.analysis.result_hash(),
        "edits": cur.analysis.edits,
        "files": files,
    });
    let bytes = serde_json::to_vec(&body).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(cached(&headers, etag, "application/json", bytes))
}
