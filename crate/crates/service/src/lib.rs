//! Read-only HTTP service exposing patients, potential-outcome profiles and
//! risk-adjusted recommendations from a trained model set.

pub mod api;
mod error;
mod state;

use std::future::Future;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, Method, Uri};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::cors::{Any, CorsLayer};
use upliftforge::cate::{build_profile, default_lambda_grid, lambda_sweep, profile_report, CateProfile, MEDA_COUNT_THRESHOLD};
use upliftforge::sim::FeatureSchema;

pub use error::ApiError;
pub use state::{AppState, Resolved, ServiceState};

use api::*;

pub const DEFAULT_PAGE_LIMIT: usize = 100;
pub const MAX_PAGE_LIMIT: usize = 5000;

type ApiResult<T> = Result<Json<T>, ApiError>;

/// All routes with permissive CORS for browser clients.
pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/patients", get(patients))
        .route("/api/profile", post(profile))
        .route("/api/recommend", post(recommend))
        .route("/api/recommend/sweep", post(sweep))
        .fallback(|uri: Uri| async move { ApiError::UnknownRoute(uri.path().to_string()) })
        .layer(cors)
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        if tokio::signal::ctrl_c().await.is_err() {
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutdown requested, draining connections");
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::JsonDataError(e)) => Err(ApiError::unprocessable(
            "request body does not match the expected schema",
            json!({ "reason": e.body_text() }),
        )),
        Err(e) => Err(ApiError::BadRequest {
            status: e.status(),
            message: e.body_text(),
        }),
    }
}

fn check_lambda(lambda: f64) -> Result<(), ApiError> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(ApiError::unprocessable("lambda must be finite and non-negative", json!({ "lambda": lambda })))
    }
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let models = state.models();
    Json(Health {
        schema_version: SCHEMA_VERSION,
        status: "ok".into(),
        model_digest: models.digest().to_string(),
        members: models.len(),
        arms: models.arms(),
        loss: models.loss(),
        patients: state.records().len(),
    })
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    offset: Option<String>,
    limit: Option<String>,
}

fn parse_param(name: &str, value: Option<&str>, default: usize, max: usize) -> Result<usize, ApiError> {
    let Some(raw) = value else {
        return Ok(default);
    };
    match raw.parse::<usize>() {
        Ok(v) if v <= max => Ok(v),
        _ => Err(ApiError::unprocessable(
            format!("{name} must be an integer in 0..={max}"),
            json!({ name: raw }),
        )),
    }
}

async fn patients(State(state): State<AppState>, query: Result<Query<PageQuery>, QueryRejection>) -> ApiResult<PatientPage> {
    let Query(q) = query.map_err(|e| ApiError::BadRequest {
        status: e.status(),
        message: e.body_text(),
    })?;
    let offset = parse_param("offset", q.offset.as_deref(), 0, usize::MAX)?;
    let limit = parse_param("limit", q.limit.as_deref(), DEFAULT_PAGE_LIMIT, MAX_PAGE_LIMIT)?;
    let records = state.records();
    let patients = records
        .values()
        .skip(offset)
        .take(limit)
        .map(|r| {
            let f = |i: usize| r.features[i];
            PatientSummary {
                id: r.id,
                arm: r.arm,
                observed_count: r.y,
                clinical: ClinicalFeatures {
                    age: f(FeatureSchema::AGE),
                    sex: f(FeatureSchema::SEX),
                    edss: f(FeatureSchema::EDSS),
                    t2vol: f(FeatureSchema::T2VOL),
                    gad: f(FeatureSchema::GAD),
                },
            }
        })
        .collect();
    Ok(Json(PatientPage {
        schema_version: SCHEMA_VERSION,
        total: records.len(),
        offset,
        limit,
        patients,
    }))
}

fn profile_of(state: &ServiceState, resolved: &Resolved) -> Result<CateProfile, ApiError> {
    build_profile(&resolved.prediction, state.models().loss()).map_err(|e| ApiError::Internal(e.to_string()))
}

async fn profile(State(state): State<AppState>, payload: Result<Json<ProfileRequest>, JsonRejection>) -> ApiResult<ProfileResponse> {
    let req = body(payload)?;
    let resolved = state.resolve(req.patient_id, req.features.as_ref())?;
    let p = profile_of(&state, &resolved)?;
    let arms = p
        .outcome
        .keys()
        .map(|a| ProfileArm {
            arm: *a,
            outcome: p.outcome[a],
            spread: p.spread[a],
            tau: p.tau[a],
            meda_probability: p.meda_probability[a],
        })
        .collect();
    Ok(Json(ProfileResponse {
        schema_version: SCHEMA_VERSION,
        subject: resolved.subject,
        ensemble: resolved.ensemble,
        scale: p.scale,
        meda_threshold: MEDA_COUNT_THRESHOLD,
        arms,
    }))
}

async fn recommend(State(state): State<AppState>, payload: Result<Json<RecommendRequest>, JsonRejection>) -> ApiResult<RecommendResponse> {
    let req = body(payload)?;
    check_lambda(req.lambda)?;
    let resolved = state.resolve(req.patient_id, req.features.as_ref())?;
    let p = profile_of(&state, &resolved)?;
    let policy = state
        .policy()
        .at_lambda(req.lambda)
        .map_err(|e| ApiError::unprocessable(e.to_string(), json!({ "lambda": req.lambda })))?;
    let report = profile_report(&p, &policy).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(RecommendResponse {
        schema_version: SCHEMA_VERSION,
        subject: resolved.subject,
        ensemble: resolved.ensemble,
        lambda: report.lambda,
        risk_class: report.risk_class,
        ne_risk_class_default: report.ne_risk_class_default,
        recommendation: report.recommendation,
        scale: report.scale,
        meda_threshold: report.meda_threshold,
        arms: report.arms,
    }))
}

async fn sweep(State(state): State<AppState>, payload: Result<Json<SweepRequest>, JsonRejection>) -> ApiResult<SweepResponse> {
    let req = body(payload)?;
    let grid = req.lambdas.unwrap_or_else(default_lambda_grid);
    if grid.is_empty() {
        return Err(ApiError::unprocessable("lambdas must not be empty", json!({ "lambdas": grid })));
    }
    for &l in &grid {
        check_lambda(l)?;
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(ApiError::unprocessable("lambdas must be sorted ascending", json!({ "lambdas": grid })));
    }
    let resolved = state.resolve(req.patient_id, req.features.as_ref())?;
    let p = profile_of(&state, &resolved)?;
    let policy = state.policy();
    let points = lambda_sweep(&p.tau, policy, &grid)
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .into_iter()
        .map(|(lambda, arm)| SweepPoint {
            lambda,
            recommendation: arm,
            risk_class: policy.class(arm),
        })
        .collect();
    Ok(Json(SweepResponse {
        schema_version: SCHEMA_VERSION,
        subject: resolved.subject,
        ensemble: resolved.ensemble,
        risk_class: policy.risk_class.clone(),
        points,
    }))
}
