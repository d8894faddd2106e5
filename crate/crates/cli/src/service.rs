//! HTTP job service used by the explorer UI.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use dtesim::priors::{Distribution, MixturePrior};

use crate::config::{PriorsConfig, RunConfig};
use crate::error::ConfigError;
use crate::runner::{run, Command, Progress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

struct Job {
    command: Command,
    status: Mutex<JobStatus>,
    progress: Progress,
    result: Mutex<Option<Vec<u8>>>,
    error: Mutex<Option<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub id: u64,
    pub command: Command,
    pub status: JobStatus,
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    jobs: Arc<Mutex<HashMap<u64, Arc<Job>>>>,
    next_id: Arc<AtomicU64>,
    workers: Arc<Semaphore>,
}

impl AppState {
    /// At most `workers` jobs compute at once; the rest stay queued.
    pub fn new(workers: usize) -> Self {
        Self {
            jobs: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }

    fn job(&self, id: u64) -> Option<Arc<Job>> {
        self.jobs.lock().unwrap().get(&id).cloned()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/jobs/oc", post(submit_oc))
        .route("/api/jobs/sweep", post(submit_sweep))
        .route("/api/jobs/bpp", post(submit_bpp))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/jobs/{id}/result", get(job_result))
        .route("/api/prior-density", post(prior_density))
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, workers: usize) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(workers))).await?;
    Ok(())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn not_found(id: u64) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: format!("no job with id {id}"),
            field: None,
        }
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Parse(message) => Self {
                status: StatusCode::BAD_REQUEST,
                code: "invalid_payload",
                message,
                field: None,
            },
            ConfigError::Field { field, message } => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "invalid_parameter",
                message,
                field: Some(field),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "error": { "code": self.code, "message": self.message, "field": self.field }
        });
        (self.status, Json(body)).into_response()
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn submit_oc(state: State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    submit(state, Command::Oc, body).await
}

async fn submit_sweep(state: State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    submit(state, Command::Sweep, body).await
}

async fn submit_bpp(state: State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    submit(state, Command::Bpp, body).await
}

async fn submit(
    State(state): State<AppState>,
    command: Command,
    body: Bytes,
) -> Result<Response, ApiError> {
    let cfg = RunConfig::from_json(&body)?;
    if command == Command::Sweep {
        cfg.sweep_grid()?;
    }
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let job = Arc::new(Job {
        command,
        status: Mutex::new(JobStatus::Queued),
        progress: Progress::default(),
        result: Mutex::new(None),
        error: Mutex::new(None),
    });
    state.jobs.lock().unwrap().insert(id, job.clone());
    let accepted = view(id, &job);

    let workers = state.workers.clone();
    tokio::spawn(async move {
        let _permit = workers.acquire_owned().await.expect("semaphore open");
        *job.status.lock().unwrap() = JobStatus::Running;
        let worker = job.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            run(&cfg, worker.command, Some(&worker.progress))
                .map(|doc| doc.render(cfg.output.format))
        })
        .await;
        match outcome {
            Ok(Ok(bytes)) => {
                *job.result.lock().unwrap() = Some(bytes);
                *job.status.lock().unwrap() = JobStatus::Done;
            }
            Ok(Err(e)) => {
                *job.error.lock().unwrap() = Some(e.to_string());
                *job.status.lock().unwrap() = JobStatus::Failed;
            }
            Err(e) => {
                *job.error.lock().unwrap() = Some(format!("worker panicked: {e}"));
                *job.status.lock().unwrap() = JobStatus::Failed;
            }
        }
    });

    Ok((StatusCode::ACCEPTED, Json(accepted)).into_response())
}

fn view(id: u64, job: &Job) -> JobView {
    let status = *job.status.lock().unwrap();
    JobView {
        id,
        command: job.command,
        status,
        progress: if status == JobStatus::Done {
            1.0
        } else {
            job.progress.fraction()
        },
        error: job.error.lock().unwrap().clone(),
    }
}

async fn job_status(
    State(state): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Json<JobView>, ApiError> {
    let job = state.job(id).ok_or_else(|| ApiError::not_found(id))?;
    Ok(Json(view(id, &job)))
}

async fn job_result(
    State(state): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Response, ApiError> {
    let job = state.job(id).ok_or_else(|| ApiError::not_found(id))?;
    let status = *job.status.lock().unwrap();
    match status {
        JobStatus::Done => {
            let bytes = job.result.lock().unwrap().clone().unwrap_or_default();
            Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
        }
        JobStatus::Failed => Err(ApiError {
            status: StatusCode::CONFLICT,
            code: "job_failed",
            message: job.error.lock().unwrap().clone().unwrap_or_default(),
            field: None,
        }),
        JobStatus::Queued | JobStatus::Running => Err(ApiError {
            status: StatusCode::CONFLICT,
            code: "not_ready",
            message: format!("job {id} is {status:?}").to_lowercase(),
            field: None,
        }),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityRequest {
    pub priors: PriorsConfig,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub mass: f64,
}

/// A marginal prior as point masses plus a weighted continuous curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub atoms: Vec<Atom>,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityResponse {
    pub post_hr: DensityCurve,
    pub delay_months: DensityCurve,
    pub lambda_per_month: DensityCurve,
    pub gamma: DensityCurve,
}

pub fn density_curve(mix: MixturePrior, points: usize) -> DensityCurve {
    let weight = 1.0 - mix.point_mass_prob;
    let mut atoms = Vec::new();
    if mix.point_mass_prob > 0.0 {
        atoms.push(Atom {
            value: mix.point_mass_value,
            mass: mix.point_mass_prob,
        });
    }
    let d = mix.continuous;
    if let Distribution::PointMass { value } = d {
        if weight > 0.0 {
            atoms.push(Atom {
                value,
                mass: weight,
            });
        }
        return DensityCurve {
            atoms,
            x: Vec::new(),
            density: Vec::new(),
        };
    }
    let (lo, hi) = (d.quantile(0.001), d.quantile(0.999));
    let n = points.max(2);
    let x: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    let density = x.iter().map(|&v| weight * d.pdf(v)).collect();
    DensityCurve { atoms, x, density }
}

fn plain(d: Distribution) -> MixturePrior {
    MixturePrior {
        point_mass_value: 0.0,
        point_mass_prob: 0.0,
        continuous: d,
    }
}

async fn prior_density(body: Bytes) -> Result<Json<DensityResponse>, ApiError> {
    let req: DensityRequest =
        serde_json::from_slice(&body).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if !(2..=10_000).contains(&req.points) {
        return Err(ConfigError::field("points", "must lie in [2, 10000]").into());
    }
    let spec = req.priors.resolve()?;
    Ok(Json(DensityResponse {
        post_hr: density_curve(spec.hr_mixture(), req.points),
        delay_months: density_curve(spec.delay_mixture(), req.points),
        lambda_per_month: density_curve(plain(spec.control.lambda_per_month), req.points),
        gamma: density_curve(plain(spec.control.gamma), req.points),
    }))
}
