//! HTTP service around a run: live annotation queue plus read-only
//! monitoring, under `/v1/`.
//!
//! The loop runs on its own thread and is the only writer. Handlers read
//! committed snapshots, and submissions travel to the loop through the
//! ticket broker in [`Hub`].

mod hub;

use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use adasup_core::config::{OracleMode, RunConfig};
use adasup_core::data::{BBox, DatasetModel, ImageRecord};
use adasup_core::engine::{self, RunObserver, RunResult, RunState, Runtime};
use adasup_core::oracle::{AnnotationMode, AnnotationSource, SimulatedSource};
use adasup_core::wire::{self, ApiError, BoxSubmission, CategoryRef, ClickSubmission, Series};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

pub use hub::{Hub, LiveSource, Payload, SubmitError};

type Shared = Arc<Hub>;

fn error(code: StatusCode, message: impl Into<String>, field: Option<&str>) -> Response {
    let body = ApiError {
        error: message.into(),
        field: field.map(str::to_owned),
    };
    (code, Json(body)).into_response()
}

impl IntoResponse for SubmitError {
    fn into_response(self) -> Response {
        let code = match &self {
            SubmitError::UnknownTicket(_) => StatusCode::NOT_FOUND,
            SubmitError::Expired(_) => StatusCode::GONE,
            SubmitError::ModeMismatch { .. } => StatusCode::CONFLICT,
            SubmitError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SubmitError::Closed => StatusCode::SERVICE_UNAVAILABLE,
        };
        let field = match &self {
            SubmitError::Invalid { field, .. } => Some(field.as_str()),
            SubmitError::UnknownTicket(_) | SubmitError::Expired(_) => Some("ticket_id"),
            _ => None,
        };
        error(code, self.to_string(), field)
    }
}

async fn status(State(hub): State<Shared>) -> Json<wire::Status> {
    Json(hub.status())
}

async fn queue_next(State(hub): State<Shared>) -> Response {
    match hub.next_ticket() {
        Some(item) => Json(item).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn series(State(hub): State<Shared>) -> Json<Series> {
    let (label, points) = hub.series();
    Json(Series { label, points })
}

fn invalid(field: String, message: String) -> SubmitError {
    SubmitError::Invalid { field, message }
}

fn check_clicks(sub: &ClickSubmission, image: &ImageRecord) -> Result<Payload, SubmitError> {
    for (i, p) in sub.clicks.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) || !image.contains(p) {
            return Err(invalid(
                format!("clicks[{i}]"),
                format!("click ({}, {}) outside the {}x{} image", p.x, p.y, image.width, image.height),
            ));
        }
    }
    Ok(Payload::Clicks(sub.clicks.clone()))
}

fn check_boxes(sub: &BoxSubmission, image: &ImageRecord, categories: &[String]) -> Result<Payload, SubmitError> {
    let mut out = Vec::with_capacity(sub.objects.len());
    for (i, o) in sub.objects.iter().enumerate() {
        let category = match &o.category {
            CategoryRef::Index(c) if *c < categories.len() => *c,
            CategoryRef::Name(n) => categories
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| invalid(format!("objects[{i}].category"), format!("unknown category {n:?}")))?,
            CategoryRef::Index(c) => {
                return Err(invalid(
                    format!("objects[{i}].category"),
                    format!("category index {c} out of range"),
                ))
            }
        };
        let bbox = BBox::new(o.xmin, o.ymin, o.xmax, o.ymax).map_err(|m| invalid(format!("objects[{i}]"), m))?;
        if !bbox.within(image.width as f64, image.height as f64) {
            return Err(invalid(
                format!("objects[{i}]"),
                format!("box {bbox} outside the {}x{} image", image.width, image.height),
            ));
        }
        out.push((category, bbox));
    }
    Ok(Payload::Boxes(out))
}

async fn settle(rx: tokio::sync::oneshot::Receiver<wire::Accepted>) -> Response {
    match rx.await {
        Ok(accepted) => Json(accepted).into_response(),
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "the run stopped before recording the annotation", None),
    }
}

async fn clicks(State(hub): State<Shared>, Json(sub): Json<ClickSubmission>) -> Response {
    match hub.submit(&sub.ticket_id, AnnotationMode::Weak, |img| check_clicks(&sub, img)) {
        Ok(rx) => settle(rx).await,
        Err(e) => e.into_response(),
    }
}

async fn boxes(State(hub): State<Shared>, Json(sub): Json<BoxSubmission>) -> Response {
    let categories = hub.status().categories;
    match hub.submit(&sub.ticket_id, AnnotationMode::Strong, |img| {
        check_boxes(&sub, img, &categories)
    }) {
        Ok(rx) => settle(rx).await,
        Err(e) => e.into_response(),
    }
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route(wire::STATUS, get(status))
        .route(wire::QUEUE_NEXT, get(queue_next))
        .route(wire::CLICKS, post(clicks))
        .route(wire::BOXES, post(boxes))
        .route(wire::SERIES, get(series))
        .with_state(hub)
}

/// What the loop thread should do.
pub struct LoopSpec {
    pub config: RunConfig,
    pub dataset: DatasetModel,
    /// Continue this checkpoint instead of starting fresh.
    pub resume: Option<RunState>,
    /// Where to write result files when the run ends.
    pub out_dir: Option<PathBuf>,
}

/// Runs the loop on a dedicated thread, reporting to `hub`. Live configs
/// take their annotations from the queue, simulated ones from ground truth.
pub fn spawn_loop(hub: Arc<Hub>, spec: LoopSpec) -> JoinHandle<adasup_core::Result<RunResult>> {
    std::thread::spawn(move || {
        let outcome = drive(&hub, &spec);
        let outcome = outcome.and_then(|r| {
            if let Some(dir) = &spec.out_dir {
                adasup_core::results::emit_results(&r, dir)?;
            }
            Ok(r)
        });
        if let Err(e) = &outcome {
            log::error!("run failed: {e}");
        }
        hub.finish(&outcome);
        outcome
    })
}

fn drive(hub: &Hub, spec: &LoopSpec) -> adasup_core::Result<RunResult> {
    let cfg = &spec.config;
    let mut detector = adasup_core::build_detector(cfg, &spec.dataset)?;
    let mut simulated = SimulatedSource::new(cfg.seed, cfg.click_noise);
    let mut live = LiveSource { hub };
    let source: &mut dyn AnnotationSource = match cfg.oracle {
        OracleMode::Live => &mut live,
        OracleMode::Simulated => &mut simulated,
    };
    let mut rt = Runtime {
        dataset: &spec.dataset,
        detector: detector.as_mut(),
        source,
        observer: hub,
    };
    match spec.resume.clone() {
        Some(state) => {
            hub.committed(&state)?;
            engine::resume(state, &mut rt)
        }
        None => engine::run(cfg, &mut rt),
    }
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    hub: Arc<Hub>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(hub)).with_graceful_shutdown(shutdown).await
}
