mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sigver_cli::config;
use sigver_cli::service::{router, AppState};
use sigver_cli::store::EnrollmentStore;
use sigver_core::data::{Label, RawSignature};
use sigver_core::pipeline::{train_ae_stage, train_siamese_stage};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: config::ExperimentConfig,
    test: sigver_core::data::Dataset,
    ae: sigver_core::autoencoder::TrainedAutoencoder,
    sm: sigver_core::siamese::TrainedSiamese,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config::load(Some(&common::write_config(dir.path())), &[]).unwrap();
    let (train, test) = sigver_cli::datasets(&cfg).unwrap();
    let exp = cfg.experiment();
    let (ae, _) = train_ae_stage(&exp, &train, &test).unwrap();
    let (sm, _, _) = train_siamese_stage(&exp, &ae, &train, &test).unwrap();
    Fixture {
        _dir: dir,
        cfg,
        test,
        ae,
        sm,
    }
}

impl Fixture {
    fn state(&self, store: EnrollmentStore) -> Arc<AppState> {
        Arc::new(AppState::new(self.ae.clone(), self.sm.clone(), self.cfg.decision.clone(), store).unwrap())
    }

    fn samples(&self, label: Label) -> Vec<&RawSignature> {
        self.test.samples().iter().filter(|s| s.subject_id() == "s004" && s.label() == label).collect()
    }
}

fn points(sig: &RawSignature) -> Value {
    json!({ "points": sig.points() })
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

#[tokio::test]
async fn enroll_verify_delete_cycle() {
    let f = fixture();
    let app = router(f.state(EnrollmentStore::in_memory(f.ae.fingerprint())));

    let (status, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["autoencoder_fingerprint"], f.ae.fingerprint().to_string());
    assert_eq!(health["siamese_fingerprint"], f.sm.fingerprint().to_string());

    let refs = f.samples(Label::Reference);
    assert_eq!(refs.len(), 3);
    let (status, _) = call(&app, "POST", "/subjects/alice/verify", Some(points(refs[0]))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    for (i, r) in refs.iter().enumerate() {
        let (status, body) = call(&app, "POST", "/subjects/alice/references", Some(points(r))).await;
        assert_eq!(status, StatusCode::CREATED);
        assert_eq!(body, json!({ "reference_count": i + 1 }));
    }

    let genuine = f.samples(Label::Genuine)[0];
    let (status, decision) = call(&app, "POST", "/subjects/alice/verify", Some(points(genuine))).await;
    assert_eq!(status, StatusCode::OK);
    let probs = decision["probabilities"].as_array().unwrap();
    assert_eq!(probs.len(), 3);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(&p.as_f64().unwrap())));
    assert_eq!(decision["threshold"], 0.5);
    assert_eq!(decision["required_count"], 2);
    let votes = probs.iter().filter(|p| p.as_f64().unwrap() >= 0.5).count();
    assert_eq!(decision["accepted"], votes >= 2);
    let mean = probs.iter().map(|p| p.as_f64().unwrap()).sum::<f64>() / 3.0;
    assert!((decision["score"].as_f64().unwrap() - mean).abs() < 1e-12);

    // Same enrollment and payload, same answer.
    let (_, again) = call(&app, "POST", "/subjects/alice/verify", Some(points(genuine))).await;
    assert_eq!(again, decision);

    let (status, _) = call(&app, "DELETE", "/subjects/alice", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "POST", "/subjects/alice/verify", Some(points(genuine))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "DELETE", "/subjects/alice", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_payloads_are_rejected() {
    let f = fixture();
    let app = router(f.state(EnrollmentStore::in_memory(f.ae.fingerprint())));
    let (status, body) = call(&app, "POST", "/subjects/a/references", Some(json!({ "points": [{ "x": 1.0, "y": 2.0 }] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].is_string());
    let (status, _) = call(&app, "POST", "/subjects/a/references", Some(json!({}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "POST", "/subjects/a/references", Some(json!({ "points": "nope" }))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn enrollment_survives_restart() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    let refs = f.samples(Label::Reference);
    let query = points(f.samples(Label::Forged)[0]);

    let app = router(f.state(EnrollmentStore::open(&path, f.ae.fingerprint()).unwrap()));
    let body = json!({ "samples": refs.iter().map(|r| r.points()).collect::<Vec<_>>() });
    let (status, created) = call(&app, "POST", "/subjects/bob/references", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["reference_count"], 3);
    let (_, before) = call(&app, "POST", "/subjects/bob/verify", Some(query.clone())).await;
    drop(app);

    let app = router(f.state(EnrollmentStore::open(&path, f.ae.fingerprint()).unwrap()));
    let (status, after) = call(&app, "POST", "/subjects/bob/verify", Some(query)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    let (_, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(health["subjects"], 1);
}

#[tokio::test]
async fn concurrent_requests() {
    let f = fixture();
    let app = router(f.state(EnrollmentStore::in_memory(f.ae.fingerprint())));
    let refs = f.samples(Label::Reference);
    let tasks: Vec<_> = (0..6)
        .map(|i| {
            let app = app.clone();
            let body = points(refs[i % refs.len()]);
            tokio::spawn(async move { call(&app, "POST", &format!("/subjects/u{}/references", i % 2), Some(body)).await })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap().0, StatusCode::CREATED);
    }
    let (_, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(health["subjects"], 2);
    for u in ["u0", "u1"] {
        let (_, d) = call(&app, "POST", &format!("/subjects/{u}/verify"), Some(points(refs[0]))).await;
        assert_eq!(d["probabilities"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn mismatched_models_refused() {
    let f = fixture();
    let other = sigver_core::preprocess::PreprocessConfig {
        downsample_rate: 2,
        ..f.ae.preprocess.clone()
    };
    let ae = sigver_core::autoencoder::build_autoencoder(&f.ae.config, &other, 1).unwrap();
    let store = EnrollmentStore::in_memory(ae.fingerprint());
    assert!(AppState::new(ae, f.sm.clone(), f.cfg.decision.clone(), store).is_err());
}
