use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use upliftforge::cate::RiskPolicy;
use upliftforge::cv::{CvRun, EnsemblePrediction};
use upliftforge::pipeline::{train_cohort, ModelSet, PipelineConfig};
use upliftforge::sim::{simulate_cohort, FeatureSchema, PatientRecord};
use upliftforge::Arm;
use upliftforge_service::{router, AppState, ServiceState};

struct Fixture {
    state: AppState,
    run: CvRun,
    records: Vec<PatientRecord>,
    schema: FeatureSchema,
}

/// An id present in the cohort file but absent from training.
const UNTRAINED_ID: u64 = 999_999;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut cfg = PipelineConfig::default().with_seed(5);
        cfg.sim.arm_sizes.values_mut().for_each(|n| *n = 24);
        cfg.sim.meda_targets = None;
        cfg.train.max_epochs = 3;
        cfg.train.patience = 1;
        let cohort = simulate_cohort(&cfg.sim).unwrap();
        let out = train_cohort(&cohort.records, &cohort.schema, &cfg.train, cfg.folds).unwrap();
        let models = ModelSet::from_run(&out.run).unwrap();
        let mut records = cohort.records.clone();
        let mut extra = records[0].clone();
        extra.id = UNTRAINED_ID;
        records.push(extra);
        let state = ServiceState::new(models, &cohort.schema, records.clone(), RiskPolicy::new(0.0).unwrap()).unwrap();
        Fixture {
            state: AppState::new(state),
            run: out.run,
            records,
            schema: cohort.schema,
        }
    })
}

async fn call(method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = router(fixture().state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    if status.is_success() {
        assert_eq!(resp.headers()[header::CONTENT_TYPE], "application/json");
    }
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode, code: &str) {
    assert_eq!(status, expected, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].is_string());
    assert!(body.get("detail").is_some());
}

fn named_features(record: &PatientRecord) -> Value {
    let names = fixture().schema.names();
    Value::Object(names.iter().cloned().zip(record.features.iter().map(|v| json!(v))).collect())
}

fn trained_id() -> u64 {
    fixture().records[3].id
}

#[tokio::test]
async fn health_reports_ok_and_digest_quickly() {
    let _ = fixture();
    let start = Instant::now();
    let (status, body) = json_call("GET", "/api/health", None).await;
    assert!(start.elapsed() < Duration::from_millis(100));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["schema_version"], 1);
    assert_eq!(body["model_digest"], fixture().state.models().digest());
    assert_eq!(body["members"], 16);
    assert_eq!(body["patients"], fixture().records.len());
}

#[tokio::test]
async fn patients_are_sorted_paginated_and_complete() {
    let (status, body) = json_call("GET", "/api/patients?limit=5000&colour=blue", None).await;
    assert_eq!(status, StatusCode::OK);
    let all = body["patients"].as_array().unwrap();
    assert_eq!(all.len(), fixture().records.len());
    assert_eq!(body["total"], fixture().records.len());
    let ids: Vec<u64> = all.iter().map(|p| p["id"].as_u64().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(all[0]["clinical"]["edss"].is_number());

    let (_, page) = json_call("GET", "/api/patients?offset=10&limit=7", None).await;
    let page_ids: Vec<u64> = page["patients"].as_array().unwrap().iter().map(|p| p["id"].as_u64().unwrap()).collect();
    assert_eq!(page_ids, ids[10..17]);
    assert_eq!((page["offset"].as_u64(), page["limit"].as_u64()), (Some(10), Some(7)));

    let (_, beyond) = json_call("GET", "/api/patients?offset=100000", None).await;
    assert_eq!(beyond["patients"].as_array().unwrap().len(), 0);

    let (status, err) = json_call("GET", "/api/patients?limit=ten", None).await;
    assert_error(status, &err, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");
    assert_eq!(err["detail"]["limit"], "ten");
}

#[tokio::test]
async fn profile_for_known_id_has_every_arm() {
    let (status, body) = json_call("POST", "/api/profile", Some(json!({ "patient_id": trained_id() }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let arms: Vec<&str> = body["arms"].as_array().unwrap().iter().map(|a| a["arm"].as_str().unwrap()).collect();
    assert_eq!(arms, ["placebo", "NE", "LE", "ME", "HE"]);
    for a in body["arms"].as_array().unwrap() {
        assert!(a["outcome"].as_f64().unwrap() >= 0.0);
        assert!(a["spread"].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(body["arms"][0]["tau"], 0.0);
    assert_eq!(body["meda_threshold"], 3.0);
    assert_eq!(body["scale"], "count");
    assert_eq!(body["ensemble"]["source"], "held_out_fold");
    assert_eq!(body["ensemble"]["members"], 4);
}

#[tokio::test]
async fn known_id_uses_only_models_that_never_saw_it() {
    let f = fixture();
    for record in f.records.iter().take(12) {
        let (_, body) = json_call("POST", "/api/profile", Some(json!({ "patient_id": record.id }))).await;
        let fold = body["ensemble"]["outer_fold"].as_u64().unwrap() as usize;
        let plan = &f.run.plan;
        assert_eq!(plan.outer[&record.id], fold);
        let members: Vec<_> = f.run.members.iter().filter(|m| m.outer == fold).collect();
        assert_eq!(members.len(), plan.k_inner);
        for m in &members {
            let (train, val) = plan.member_split(m.outer, m.inner);
            assert!(!train.contains(&record.id) && !val.contains(&record.id));
        }
        // the response equals the mean over exactly those members
        let preds: Vec<BTreeMap<Arm, f64>> =
            members.iter().map(|m| m.model.predict_all_heads(&record.features).unwrap()).collect();
        let expected = EnsemblePrediction::from_members(&preds).unwrap();
        let profile = upliftforge::cate::build_profile(&expected, f.state.models().loss()).unwrap();
        for a in body["arms"].as_array().unwrap() {
            let arm: Arm = a["arm"].as_str().unwrap().parse().unwrap();
            assert_eq!(a["outcome"].as_f64().unwrap(), profile.outcome[&arm]);
        }
    }
}

#[tokio::test]
async fn raw_features_and_untrained_ids_use_the_serving_ensemble() {
    let record = &fixture().records[3];
    let (status, body) = json_call("POST", "/api/profile", Some(json!({ "features": named_features(record) }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["ensemble"]["source"], "serving");
    assert_eq!(body["ensemble"]["members"], 16);
    assert_eq!(body["subject"]["patient_id"], Value::Null);

    let (_, untrained) = json_call("POST", "/api/profile", Some(json!({ "patient_id": UNTRAINED_ID }))).await;
    assert_eq!(untrained["ensemble"]["source"], "serving");
    assert_eq!(untrained["ensemble"]["outer_fold"], Value::Null);
}

#[tokio::test]
async fn repeated_and_concurrent_requests_are_byte_identical() {
    let req = json!({ "patient_id": trained_id(), "lambda": 0.75 });
    let (_, first) = call("POST", "/api/recommend", Some(req.clone())).await;
    let (_, second) = call("POST", "/api/recommend", Some(req.clone())).await;
    assert_eq!(first, second);
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let r = req.clone();
            tokio::spawn(async move { call("POST", "/api/recommend", Some(r)).await.1 })
        })
        .collect();
    for h in handles {
        assert_eq!(h.await.unwrap(), first);
    }
}

#[tokio::test]
async fn recommend_at_zero_lambda_is_efficacy_argmin() {
    for record in fixture().records.iter().take(20) {
        let (status, body) = json_call("POST", "/api/recommend", Some(json!({ "patient_id": record.id, "lambda": 0.0 }))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let arms = body["arms"].as_array().unwrap();
        let min_tau = arms.iter().map(|a| a["tau"].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
        let rec = arms.iter().find(|a| a["arm"] == body["recommendation"]).unwrap();
        assert!(rec["tau"].as_f64().unwrap() <= min_tau + 1e-9);
        for a in arms {
            assert_eq!(a["tau_star"], a["tau"]);
        }
    }
}

#[tokio::test]
async fn recommend_echoes_policy_and_threshold() {
    let (status, body) = json_call("POST", "/api/recommend", Some(json!({ "patient_id": trained_id(), "lambda": 1.5 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["lambda"], 1.5);
    assert_eq!(body["meda_threshold"], 3.0);
    assert_eq!(body["risk_class"], json!({ "placebo": 0.0, "NE": 1.0, "LE": 1.0, "ME": 2.0, "HE": 3.0 }));
    assert_eq!(body["ne_risk_class_default"], true);
    for a in body["arms"].as_array().unwrap() {
        let expected = a["tau"].as_f64().unwrap() + a["risk_class"].as_f64().unwrap() * 1.5;
        assert_eq!(a["tau_star"].as_f64().unwrap(), expected);
    }

    let (_, huge) = json_call("POST", "/api/recommend", Some(json!({ "patient_id": trained_id(), "lambda": 1e6 }))).await;
    assert_eq!(huge["recommendation"], "placebo");
}

#[tokio::test]
async fn sweep_never_escalates() {
    for record in fixture().records.iter().take(20) {
        let (status, body) = json_call("POST", "/api/recommend/sweep", Some(json!({ "patient_id": record.id }))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let points = body["points"].as_array().unwrap();
        assert_eq!(points.len(), 13);
        let classes: Vec<f64> = points.iter().map(|p| p["risk_class"].as_f64().unwrap()).collect();
        assert!(classes.windows(2).all(|w| w[1] <= w[0]), "{classes:?}");
    }
    let (status, body) = json_call(
        "POST",
        "/api/recommend/sweep",
        Some(json!({ "patient_id": trained_id(), "lambdas": [0.0, 0.1, 10.0] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["points"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn client_errors_are_structured() {
    let (s, b) = json_call("POST", "/api/profile", Some(json!({ "patient_id": 123_456_789 }))).await;
    assert_error(s, &b, StatusCode::NOT_FOUND, "unknown_patient");

    let (s, b) = json_call("POST", "/api/recommend", Some(json!({ "patient_id": trained_id(), "lambda": -0.5 }))).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");
    assert_eq!(b["detail"]["lambda"], -0.5);

    let mut features = named_features(&fixture().records[0]);
    features.as_object_mut().unwrap().remove("latent2");
    features["bmi"] = json!(22.0);
    let (s, b) = json_call("POST", "/api/profile", Some(json!({ "features": features }))).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");
    let problems = b["detail"]["problems"].to_string();
    assert!(problems.contains("latent2: missing") && problems.contains("bmi"), "{problems}");

    let mut features = named_features(&fixture().records[0]);
    features["edss"] = json!(11.0);
    let (s, b) = json_call("POST", "/api/profile", Some(json!({ "features": features }))).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");

    let (s, b) = json_call("POST", "/api/profile", Some(json!({}))).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");

    let both = json!({ "patient_id": trained_id(), "features": named_features(&fixture().records[0]) });
    let (s, b) = json_call("POST", "/api/profile", Some(both)).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");

    let (s, b) = json_call("POST", "/api/recommend", Some(json!({ "patient_id": trained_id(), "lamda": 1.0 }))).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");

    let (s, b) = json_call("POST", "/api/recommend/sweep", Some(json!({ "patient_id": trained_id(), "lambdas": [1.0, 0.5] }))).await;
    assert_error(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");

    let (s, b) = json_call("GET", "/api/nothing", None).await;
    assert_error(s, &b, StatusCode::NOT_FOUND, "unknown_route");

    let req = Request::post("/api/profile")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = router(fixture().state.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let b: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(b["code"], "malformed_request");
}

#[tokio::test]
async fn cors_preflight_is_allowed() {
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/recommend")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = router(fixture().state.clone()).oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

#[test]
fn state_rejects_mismatched_cohort() {
    let f = fixture();
    let models = f.state.models().clone();
    let other = FeatureSchema::with_latents(2);
    assert!(ServiceState::new(models.clone(), &other, vec![], RiskPolicy::new(0.0).unwrap()).is_err());
    let dup = vec![f.records[0].clone(), f.records[0].clone()];
    assert!(ServiceState::new(models, &f.schema, dup, RiskPolicy::new(0.0).unwrap()).is_err());
}

#[tokio::test]
async fn serves_over_tcp_and_shuts_down_gracefully() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(upliftforge_service::serve(listener, fixture().state.clone(), async {
        let _ = rx.await;
    }));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /api/health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).await.unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""));
    tx.send(()).unwrap();
    tokio::time::timeout(Duration::from_secs(5), server).await.unwrap().unwrap().unwrap();
}
