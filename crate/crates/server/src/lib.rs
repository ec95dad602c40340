//! HTTP/JSON front end for the experiment operations.
//!
//! | method | path           | body               | reply              |
//! |--------|----------------|--------------------|--------------------|
//! | GET    | `/health`      |                    | `Health`           |
//! | POST   | `/v1/validate` | `ScenarioFile`     | `ValidationReport` |
//! | POST   | `/v1/generate` | `GridParams`       | `ScenarioFile`     |
//! | POST   | `/v1/run`      | `RunRequest`       | `RunReport`        |
//! | POST   | `/v1/compare`  | `CompareRequest`   | `CompareReport`    |
//! | POST   | `/v1/curate`   | `CurateRequest`    | `CurateOutput`     |
//! | POST   | `/v1/bench`    | `BenchRequest`     | `BenchReport`      |
//!
//! Failures reply with an [`ErrorBody`]: 422 for invalid input, 500 for
//! failures during a run.

use std::net::SocketAddr;

use axum::extract::rejection::JsonRejection;
use axum::extract::DefaultBodyLimit;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tsc_core::error::Error;
use tsc_core::experiment;
use tsc_core::scenario::{generate_grid, GridParams, ScenarioFile};

/// Request size limit; large generated grids run to tens of megabytes.
pub const MAX_BODY_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn validation(message: impl Into<String>) -> Self {
        Self(
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorBody {
                kind: ErrorKind::Validation,
                message: message.into(),
            },
        )
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorBody {
                kind: ErrorKind::Runtime,
                message: message.into(),
            },
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Self::validation(e.to_string())
        } else {
            Self::runtime(e.to_string())
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::validation(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

/// Runs a blocking operation off the async workers.
async fn blocking<T, R, F>(body: Result<Json<T>, JsonRejection>, op: F) -> Result<Json<R>, ApiError>
where
    T: DeserializeOwned + Send + 'static,
    R: Send + 'static,
    F: FnOnce(T) -> Result<R, Error> + Send + 'static,
{
    let Json(req) = body?;
    match tokio::task::spawn_blocking(move || op(req)).await {
        Ok(out) => Ok(Json(out?)),
        Err(e) => Err(ApiError::runtime(format!("worker failed: {e}"))),
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn validate(body: Result<Json<ScenarioFile>, JsonRejection>) -> Result<Json<experiment::ValidationReport>, ApiError> {
    blocking(body, |f| experiment::validate(&f)).await
}

async fn generate(body: Result<Json<GridParams>, JsonRejection>) -> Result<Json<ScenarioFile>, ApiError> {
    blocking(body, |p: GridParams| {
        if p.rows == 0 || p.cols == 0 {
            return Err(Error::Spec("rows and cols must be > 0".into()));
        }
        Ok(generate_grid(&p))
    })
    .await
}

async fn run(body: Result<Json<experiment::RunRequest>, JsonRejection>) -> Result<Json<experiment::RunReport>, ApiError> {
    blocking(body, |r| experiment::run(&r)).await
}

async fn compare(
    body: Result<Json<experiment::CompareRequest>, JsonRejection>,
) -> Result<Json<experiment::CompareReport>, ApiError> {
    blocking(body, |r| experiment::compare(&r)).await
}

async fn curate(
    body: Result<Json<experiment::CurateRequest>, JsonRejection>,
) -> Result<Json<experiment::CurateOutput>, ApiError> {
    blocking(body, |r| experiment::curate(&r)).await
}

async fn bench(body: Result<Json<experiment::BenchRequest>, JsonRejection>) -> Result<Json<experiment::BenchReport>, ApiError> {
    blocking(body, |r| experiment::bench(&r)).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/validate", post(validate))
        .route("/v1/generate", post(generate))
        .route("/v1/run", post(run))
        .route("/v1/compare", post(compare))
        .route("/v1/curate", post(curate))
        .route("/v1/bench", post(bench))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
}

/// Serves until the task is dropped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok(bound)
}
