//! HTTP synthesis service for the slider UI.
//!
//! All state is loaded once at startup and shared read-only, so every
//! response is a pure function of the query string and the artifact
//! version.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use tower_http::set_header::SetResponseHeaderLayer;

use crate::editing;
use crate::error::{Error, Result};
use crate::latent::{latent_for_seed, LatentCode, DEFAULT_PSI};
use crate::pipeline::{load_boundary_set, ConditioningInfo};
use crate::scenegen::{GeneratorConstants, RasterImage};
use crate::semantics::{self, LatentSource, SemanticBoundary, MetricsReport, ORTHOGONALITY_TOL};
use crate::store;
use crate::world::Dimension;

pub const ALPHA_LIMIT: f64 = 3.0;
pub const APPLIED_ALPHAS_HEADER: &str = "x-applied-alphas";
pub const VERSION_HEADER: &str = "x-artifact-version";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub seed: u64,
    pub psi: Option<f64>,
    #[serde(default)]
    pub alpha_income: f64,
    #[serde(default)]
    pub alpha_education: f64,
    #[serde(default)]
    pub alpha_health: f64,
}

/// Parameters actually used for a synthesis, after clamping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedParams {
    pub seed: u64,
    pub psi: f64,
    pub alphas: BTreeMap<Dimension, f64>,
}

impl AppliedParams {
    /// `income=0,education=0,health=3` in the fixed dimension order.
    pub fn header_value(&self) -> String {
        Dimension::ALL
            .iter()
            .map(|d| format!("{d}={}", self.alphas.get(d).copied().unwrap_or(0.0)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn clamp_unit(v: f64, limit: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-limit, limit)
    }
}

impl SynthesisRequest {
    /// Clamps alphas to `[-3, 3]` and psi to `[0, 1]`; NaN becomes the
    /// default.
    pub fn clamped(&self) -> AppliedParams {
        let psi = match self.psi {
            Some(p) if !p.is_nan() => p.clamp(0.0, 1.0),
            _ => DEFAULT_PSI,
        };
        let alphas = BTreeMap::from([
            (Dimension::Income, clamp_unit(self.alpha_income, ALPHA_LIMIT)),
            (Dimension::Education, clamp_unit(self.alpha_education, ALPHA_LIMIT)),
            (Dimension::Health, clamp_unit(self.alpha_health, ALPHA_LIMIT)),
        ]);
        AppliedParams {
            seed: self.seed,
            psi,
            alphas,
        }
    }
}

#[derive(Debug)]
pub struct ServiceState {
    pub constants: GeneratorConstants,
    pub boundaries: Vec<SemanticBoundary>,
    pub order: Vec<Dimension>,
    pub source: LatentSource,
    pub version: String,
    pub ui_dir: Option<PathBuf>,
}

fn first_existing(candidates: &[PathBuf]) -> Option<PathBuf> {
    candidates.iter().find(|p| p.exists()).cloned()
}

impl ServiceState {
    /// Loads generator constants and a conditioned boundary set from either
    /// a pipeline output directory or a flat artifact bundle.
    pub fn load(dir: &Path, source: LatentSource) -> Result<Self> {
        let generator = first_existing(&[dir.join("world/generator.json"), dir.join("generator.json")])
            .ok_or_else(|| Error::NotFound {
                what: "generator constants",
                path: dir.join("generator.json"),
            })?;
        let constants: GeneratorConstants = store::read_json(&generator)?;
        constants.validate().map_err(|e| Error::malformed(&generator, e))?;

        let bdir = first_existing(&[
            dir.join("boundaries").join(source.as_str()),
            dir.join("boundaries"),
        ])
        .ok_or_else(|| Error::NotFound {
            what: "boundary directory",
            path: dir.join("boundaries"),
        })?;
        let conditioning = bdir.join("conditioning.json");
        let order: Vec<Dimension> = if conditioning.exists() {
            store::read_json::<ConditioningInfo>(&conditioning)?.order
        } else {
            Dimension::ALL
                .into_iter()
                .filter(|d| bdir.join(format!("{d}.json")).exists())
                .collect()
        };
        let boundaries = load_boundary_set(&bdir, &order)?;
        if boundaries.is_empty() {
            return Err(Error::NotFound {
                what: "boundary files",
                path: bdir,
            });
        }
        for b in &boundaries {
            if b.normal.dim() != constants.dim {
                return Err(Error::LengthMismatch {
                    expected: constants.dim,
                    actual: b.normal.dim(),
                });
            }
        }
        let normals: Vec<LatentCode> = boundaries.iter().map(|b| b.normal.clone()).collect();
        semantics::check_orthogonal(&normals, ORTHOGONALITY_TOL)?;

        let mut digest = store::file_sha256(&generator)?;
        for d in &order {
            digest.push_str(&store::file_sha256(&bdir.join(format!("{d}.json")))?);
        }
        let version = store::sha256_hex(digest.as_bytes())[..16].to_string();
        let ui_dir = Some(dir.join("ui")).filter(|p| p.is_dir());
        Ok(ServiceState {
            constants,
            boundaries,
            order,
            source,
            version,
            ui_dir,
        })
    }

    pub fn base_latent(&self, seed: u64, psi: f64) -> Result<LatentCode> {
        latent_for_seed(seed, psi, self.constants.dim)
    }
}

/// Renders the edited scene for a request.
pub fn synthesize(req: &SynthesisRequest, state: &ServiceState) -> Result<(RasterImage, AppliedParams)> {
    let mut applied = req.clamped();
    applied.alphas.retain(|d, _| state.order.contains(d));
    let z = state.base_latent(applied.seed, applied.psi)?;
    let image = editing::render_edit(&z, &applied.alphas, &state.boundaries, &state.constants)?;
    Ok((image, applied))
}

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.0.to_string() }));
        (StatusCode::INTERNAL_SERVER_ERROR, body).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

async fn synthesize_handler(
    State(state): State<Arc<ServiceState>>,
    Query(req): Query<SynthesisRequest>,
) -> std::result::Result<Response, ApiError> {
    let (image, applied) = synthesize(&req, &state)?;
    let png = image.to_png()?;
    let alphas = HeaderValue::from_str(&applied.header_value()).expect("ascii header");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (HeaderName::from_static(APPLIED_ALPHAS_HEADER), alphas),
        ],
        png,
    )
        .into_response())
}

#[derive(Serialize, Deserialize)]
pub struct BoundaryView {
    pub dimension: Dimension,
    pub normal: LatentCode,
    pub offset: f64,
    pub conditioned_against: Vec<Dimension>,
    pub metrics: Option<MetricsReport>,
}

#[derive(Serialize, Deserialize)]
pub struct BoundariesResponse {
    pub version: String,
    pub latent_source: LatentSource,
    pub conditioning_order: Vec<Dimension>,
    pub max_pairwise_dot: f64,
    pub boundaries: Vec<BoundaryView>,
}

async fn boundaries_handler(State(state): State<Arc<ServiceState>>) -> std::result::Result<Json<BoundariesResponse>, ApiError> {
    let normals: Vec<LatentCode> = state.boundaries.iter().map(|b| b.normal.clone()).collect();
    Ok(Json(BoundariesResponse {
        version: state.version.clone(),
        latent_source: state.source,
        conditioning_order: state.order.clone(),
        max_pairwise_dot: semantics::max_pairwise_dot(&normals)?,
        boundaries: state
            .boundaries
            .iter()
            .map(|b| BoundaryView {
                dimension: b.dimension,
                normal: b.normal.clone(),
                offset: b.offset,
                conditioned_against: b.conditioned_against.clone(),
                metrics: b.metrics,
            })
            .collect(),
    }))
}

#[derive(Deserialize)]
struct DescribeQuery {
    seed: u64,
    psi: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct DescribeResponse {
    pub seed: u64,
    pub psi: f64,
    pub latent: LatentCode,
    pub decision_values: BTreeMap<Dimension, f64>,
}

async fn describe_handler(
    State(state): State<Arc<ServiceState>>,
    Query(q): Query<DescribeQuery>,
) -> std::result::Result<Json<DescribeResponse>, ApiError> {
    let psi = SynthesisRequest {
        seed: q.seed,
        psi: q.psi,
        ..Default::default()
    }
    .clamped()
    .psi;
    let latent = state.base_latent(q.seed, psi)?;
    let mut decision_values = BTreeMap::new();
    for b in &state.boundaries {
        decision_values.insert(b.dimension, b.decision(&latent)?);
    }
    Ok(Json(DescribeResponse {
        seed: q.seed,
        psi,
        latent,
        decision_values,
    }))
}

async fn health_handler(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": state.version }))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let version = HeaderValue::from_str(&state.version).expect("hex version");
    let ui = state.ui_dir.clone();
    let mut app = Router::new()
        .route("/api/synthesize", get(synthesize_handler))
        .route("/api/boundaries", get(boundaries_handler))
        .route("/api/describe", get(describe_handler))
        .route("/api/health", get(health_handler))
        .with_state(state);
    if let Some(dir) = ui {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(SetResponseHeaderLayer::overriding(
        HeaderName::from_static(VERSION_HEADER),
        version,
    ))
}

/// Serves until interrupted.
pub async fn serve(state: ServiceState, bind: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Error::io(PathBuf::from(bind.to_string()), e))?;
    log::info!("serving artifact version {} on {bind}", state.version);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(PathBuf::from(bind.to_string()), e))
}
