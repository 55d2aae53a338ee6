#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use tower::ServiceExt;

use edgeref_api::{router, AppState};
use edgeref_core::metrics::Track;
use edgeref_core::referee::{ManualClock, Referee, RefereeOptions};
use edgeref_core::synth::{bundle, Variant};

pub const TOKEN: &str = "s3cret-admin";

/// A data directory holding a synthetic bundle for every track.
pub fn data_dir(items: usize, seed: u64) -> TempDir {
    let dir = TempDir::new().unwrap();
    for track in Track::ALL {
        let path = dir.path().join("bundles").join(track.number().to_string());
        bundle(track, items, seed).write(&path).unwrap();
    }
    dir
}

pub fn open_referee(dir: &TempDir, workers: usize) -> Arc<Referee> {
    let clock = ManualClock::new(
        DateTime::from_timestamp(1_760_000_000, 0).unwrap(),
        Duration::milliseconds(250),
    );
    let options = RefereeOptions {
        workers,
        ..RefereeOptions::default()
    };
    Arc::new(Referee::open(dir.path(), options, Arc::new(clock)).unwrap())
}

pub fn app(referee: &Arc<Referee>) -> Router {
    router(AppState::new(referee.clone(), Some(TOKEN.to_string())))
}

/// Twelve submissions over five teams and all tracks, mixing passing,
/// rejected and failing models. Segmentation only uses degrade levels that
/// stay under its gate.
pub fn workload(seed: u64) -> Vec<(String, Track, Variant)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(String, Track, Variant)> = (0..12)
        .map(|i| {
            let track = Track::ALL[i % 3];
            let variant = match rng.gen_range(0..6) {
                0 => Variant::Reject,
                1 => Variant::Fail,
                _ if track == Track::Segmentation => Variant::Pass { degrade: rng.gen_range(0..2) },
                _ => Variant::Pass { degrade: rng.gen_range(0..4) },
            };
            (format!("team-{}", rng.gen_range(0..5)), track, variant)
        })
        .collect();
    // guarantee every outcome class appears
    out[0].2 = Variant::Reject;
    out[1].2 = Variant::Fail;
    out[2].2 = Variant::Pass { degrade: 0 };
    out
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| {
            panic!("{e}: {}", String::from_utf8_lossy(&self.body))
        })
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<&serde_json::Value>, headers: &[(&str, &str)]) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None, &[]).await
}

/// Triggers a run over HTTP and polls until it completes.
pub async fn run_to_completion(app: &Router, track: Option<u8>) -> serde_json::Value {
    let body = serde_json::json!({ "track": track });
    let started = call(app, Method::POST, "/api/v1/admin/runs", Some(&body), &[("x-admin-token", TOKEN)]).await;
    assert_eq!(started.status, StatusCode::ACCEPTED, "{}", started.text());
    let run_id = started.json()["run_id"].as_str().unwrap().to_string();
    for _ in 0..6000 {
        let r = call(app, Method::GET, &format!("/api/v1/admin/runs/{run_id}"), None, &[("x-admin-token", TOKEN)]).await;
        let report = r.json();
        if report["state"] == "completed" {
            return report;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("run {run_id} did not finish");
}
