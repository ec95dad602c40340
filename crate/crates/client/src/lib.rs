//! Typed client for the tsc HTTP service.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tsc_core::experiment::{
    BenchReport, BenchRequest, CompareReport, CompareRequest, CurateOutput, CurateRequest, RunReport, RunRequest,
    ValidationReport,
};
use tsc_core::scenario::{GridParams, ScenarioFile};
pub use tsc_server::{ErrorBody, ErrorKind, Health};

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service rejected or failed the request.
    #[error("{}", .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("cannot reach service: {0}")]
    Transport(String),
    #[error("unexpected reply (HTTP {status}): {detail}")]
    Protocol { status: u16, detail: String },
}

impl ClientError {
    /// Whether the service judged the input invalid.
    pub fn is_validation(&self) -> bool {
        matches!(self, ClientError::Api { body, .. } if body.kind == ErrorKind::Validation)
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`.
    pub fn new(base_url: &str) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<R: DeserializeOwned>(resp: reqwest::Response) -> Result<R, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Protocol {
                status: status.as_u16(),
                detail: e.to_string(),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Api {
                status: status.as_u16(),
                body,
            }),
            Err(_) => Err(ClientError::Protocol {
                status: status.as_u16(),
                detail: String::from_utf8_lossy(&bytes).chars().take(200).collect(),
            }),
        }
    }

    async fn post<T: Serialize + ?Sized, R: DeserializeOwned>(&self, path: &str, body: &T) -> Result<R, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self
            .http
            .get(format!("{}/health", self.base))
            .send()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(resp).await
    }

    pub async fn validate(&self, scenario: &ScenarioFile) -> Result<ValidationReport, ClientError> {
        self.post("/v1/validate", scenario).await
    }

    pub async fn generate(&self, params: &GridParams) -> Result<ScenarioFile, ClientError> {
        self.post("/v1/generate", params).await
    }

    pub async fn run(&self, req: &RunRequest) -> Result<RunReport, ClientError> {
        self.post("/v1/run", req).await
    }

    pub async fn compare(&self, req: &CompareRequest) -> Result<CompareReport, ClientError> {
        self.post("/v1/compare", req).await
    }

    pub async fn curate(&self, req: &CurateRequest) -> Result<CurateOutput, ClientError> {
        self.post("/v1/curate", req).await
    }

    pub async fn bench(&self, req: &BenchRequest) -> Result<BenchReport, ClientError> {
        self.post("/v1/bench", req).await
    }
}
