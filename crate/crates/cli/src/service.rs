//! HTTP enrollment and verification.

use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sigver_core::autoencoder::{LatentVector, TrainedAutoencoder};
use sigver_core::data::{Label, Point, RawSignature};
use sigver_core::eval::{default_required_count, verify, DecisionConfig, VerificationDecision};
use sigver_core::preprocess::{preprocess_one, FilterMode};
use sigver_core::siamese::TrainedSiamese;
use sigver_core::Error;

use crate::store::EnrollmentStore;

pub struct AppState {
    pub ae: TrainedAutoencoder,
    pub siamese: TrainedSiamese,
    pub decision: DecisionConfig,
    pub store: Mutex<EnrollmentStore>,
}

impl AppState {
    pub fn new(ae: TrainedAutoencoder, siamese: TrainedSiamese, decision: DecisionConfig, store: EnrollmentStore) -> anyhow::Result<Self> {
        if ae.fingerprint() != siamese.fingerprint() {
            anyhow::bail!("autoencoder uses {} but siamese uses {}", ae.fingerprint(), siamese.fingerprint());
        }
        Ok(AppState {
            ae,
            siamese,
            decision,
            store: Mutex::new(store),
        })
    }

    /// Preprocesses and encodes one capture. Over-long captures are
    /// truncated, matching offline inference.
    pub fn encode_points(&self, subject: &str, label: Label, points: Vec<Point>) -> Result<LatentVector, ApiError> {
        let sig = RawSignature::new(subject, label, points)?;
        let fs = preprocess_one(&sig, &self.ae.preprocess, FilterMode::Truncate)?
            .ok_or_else(|| ApiError::unprocessable("signature removed by the length filter"))?;
        Ok(self.ae.encode(&fs)?)
    }

    pub fn enroll(&self, subject: &str, samples: Vec<Vec<Point>>) -> Result<usize, ApiError> {
        let refs = samples
            .into_iter()
            .map(|p| self.encode_points(subject, Label::Reference, p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut store = self.store.lock().expect("store lock");
        store.add_references(subject, refs).map_err(ApiError::internal)
    }

    pub fn verify(&self, subject: &str, points: Vec<Point>) -> Result<VerificationDecision, ApiError> {
        let query = self.encode_points(subject, Label::Genuine, points)?;
        let enrollment = {
            let store = self.store.lock().expect("store lock");
            store.get(subject).cloned()
        }
        .ok_or_else(|| ApiError::not_found(subject))?;
        let m = self
            .decision
            .required_count
            .unwrap_or_else(|| default_required_count(enrollment.references.len()));
        Ok(verify(&query, &enrollment.references, &self.siamese, &enrollment.mean, self.decision.threshold, m)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PointsBody {
    pub points: Vec<Point>,
}

/// Enrollment accepts one capture as `points` or several as `samples`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EnrollBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Vec<Point>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EnrollResponse {
    pub reference_count: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct VerifyResponse {
    pub probabilities: Vec<f64>,
    pub score: f64,
    pub accepted: bool,
    pub threshold: f64,
    pub required_count: usize,
}

impl From<VerificationDecision> for VerifyResponse {
    fn from(d: VerificationDecision) -> Self {
        VerifyResponse {
            probabilities: d.probabilities,
            score: d.score,
            accepted: d.accepted,
            threshold: d.threshold,
            required_count: d.required_count,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
    pub autoencoder_fingerprint: String,
    pub siamese_fingerprint: String,
    pub subjects: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn not_found(subject: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: format!("subject {subject} is not enrolled"),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::EmptySignature(_)
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::Length(_)
            | Error::BadThreshold(_)
            | Error::EmptyReferences => ApiError::unprocessable(e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError {
            status: r.status(),
            message: r.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let subjects = state.store.lock().expect("store lock").len();
    Json(HealthResponse {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        autoencoder_fingerprint: state.ae.fingerprint().to_string(),
        siamese_fingerprint: state.siamese.fingerprint().to_string(),
        subjects,
    })
}

async fn enroll(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<EnrollBody>, JsonRejection>,
) -> Result<(StatusCode, Json<EnrollResponse>), ApiError> {
    let Json(body) = body?;
    let mut samples = body.samples;
    if let Some(p) = body.points {
        samples.insert(0, p);
    }
    if samples.is_empty() {
        return Err(ApiError::unprocessable("body needs `points` or `samples`"));
    }
    let n = blocking(move || state.enroll(&id, samples)).await?;
    Ok((StatusCode::CREATED, Json(EnrollResponse { reference_count: n })))
}

async fn verify_route(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PointsBody>, JsonRejection>,
) -> Result<Json<VerifyResponse>, ApiError> {
    let Json(body) = body?;
    let d = blocking(move || state.verify(&id, body.points)).await?;
    Ok(Json(d.into()))
}

async fn remove(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let removed = state.store.lock().expect("store lock").remove(&id).map_err(ApiError::internal)?;
    if removed {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(&id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/subjects/{id}/references", post(enroll))
        .route("/subjects/{id}/verify", post(verify_route))
        .route("/subjects/{id}", delete(remove))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {bind}: {e}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
