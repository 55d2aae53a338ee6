mod common;

use axum::http::{Method, StatusCode};
use proptest::prelude::*;
use serde_json::{json, Value};

use common::*;
use edgeref_core::ir::to_value;
use edgeref_core::metrics::Track;
use edgeref_core::referee::{leaderboard_from_records, Status};
use edgeref_core::synth::{toy_model, Variant};

fn submit_body(team: &str, track: Track, variant: Variant) -> Value {
    json!({ "team": team, "track": track.number(), "graph": to_value(&toy_model(track, variant)) })
}

async fn post_submission(app: &axum::Router, body: &Value, key: Option<&str>) -> Reply {
    let headers: Vec<(&str, &str)> = key.map(|k| ("idempotency-key", k)).into_iter().collect();
    call(app, Method::POST, "/api/v1/submissions", Some(body), &headers).await
}

#[tokio::test(flavor = "multi_thread")]
async fn submit_returns_created_with_location() {
    let dir = data_dir(2, 1);
    let app = app(&open_referee(&dir, 1));
    let r = post_submission(&app, &submit_body("a", Track::Classification, Variant::Pass { degrade: 0 }), None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let body = r.json();
    assert_eq!(body["status"], "Submitted");
    let id = body["id"].as_str().unwrap();
    assert_eq!(r.headers["location"], format!("/api/v1/submissions/{id}").as_str());

    let view = get(&app, &format!("/api/v1/submissions/{id}")).await;
    assert_eq!(view.status, StatusCode::OK);
    assert_eq!(view.json()["submission"]["status"], "Submitted");
    assert!(view.json().get("score_record").is_none());
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_submissions_are_400_with_detail() {
    let dir = data_dir(2, 1);
    let referee = open_referee(&dir, 1);
    let app = app(&referee);

    let mut body = submit_body("a", Track::Classification, Variant::Pass { degrade: 0 });
    body["graph"]["nodes"][0]["inputs"][0] = json!("dangling");
    let r = post_submission(&app, &body, None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let err = r.json();
    assert_eq!(err["code"], "bad_request");
    assert_eq!(err["detail"]["kind"], "validation");
    assert!(err["detail"]["detail"]["node"].is_string());

    let r = post_submission(&app, &json!({ "team": "a" }), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["code"], "bad_request");

    let mut body = submit_body("a", Track::Classification, Variant::Pass { degrade: 0 });
    body["track"] = json!(7);
    let r = post_submission(&app, &body, None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(referee.submissions().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn idempotency_key_replays_original_id() {
    let dir = data_dir(2, 1);
    let referee = open_referee(&dir, 1);
    let app = app(&referee);
    let body = submit_body("a", Track::Depth, Variant::Pass { degrade: 0 });
    let first = post_submission(&app, &body, Some("job-17")).await;
    let again = post_submission(&app, &body, Some("job-17")).await;
    assert_eq!(again.status, StatusCode::CREATED);
    assert_eq!(first.json()["id"], again.json()["id"]);
    assert_eq!(referee.submissions().len(), 1);

    let other = submit_body("a", Track::Depth, Variant::Pass { degrade: 2 });
    let clash = post_submission(&app, &other, Some("job-17")).await;
    assert_eq!(clash.status, StatusCode::CONFLICT);
    assert_eq!(clash.json()["code"], "conflict");
}

#[tokio::test(flavor = "multi_thread")]
async fn read_endpoints_on_empty_and_unknown() {
    let dir = data_dir(2, 1);
    let app = app(&open_referee(&dir, 1));
    let r = get(&app, "/api/v1/leaderboard/1").await;
    assert_eq!((r.status, r.json()), (StatusCode::OK, json!([])));
    for uri in [
        "/api/v1/leaderboard/9",
        "/api/v1/leaderboard/x",
        "/api/v1/submissions/s000042",
        "/api/v1/teams/ghost/history?track=1",
        "/api/v1/nope",
    ] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(r.json()["code"], "not_found");
    }
    let r = get(&app, "/api/v1/teams/ghost/history").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn admin_runs_need_the_token() {
    let dir = data_dir(2, 1);
    let app = app(&open_referee(&dir, 1));
    let none = call(&app, Method::POST, "/api/v1/admin/runs", None, &[]).await;
    assert_eq!(none.status, StatusCode::UNAUTHORIZED);
    let wrong = call(&app, Method::POST, "/api/v1/admin/runs", None, &[("x-admin-token", "guess")]).await;
    assert_eq!(wrong.status, StatusCode::UNAUTHORIZED);
    let poll = call(&app, Method::GET, "/api/v1/admin/runs/run-000001", None, &[]).await;
    assert_eq!(poll.status, StatusCode::UNAUTHORIZED);
    let bearer = call(
        &app,
        Method::POST,
        "/api/v1/admin/runs",
        None,
        &[("authorization", &format!("Bearer {TOKEN}"))],
    )
    .await;
    assert_eq!(bearer.status, StatusCode::ACCEPTED);
}

#[tokio::test(flavor = "multi_thread")]
async fn run_reports_and_terminal_status_payloads() {
    let dir = data_dir(3, 2);
    let app = app(&open_referee(&dir, 2));
    let mut ids = Vec::new();
    for (team, variant) in [("a", Variant::Pass { degrade: 0 }), ("b", Variant::Reject), ("c", Variant::Fail)] {
        let r = post_submission(&app, &submit_body(team, Track::Classification, variant), None).await;
        ids.push(r.json()["id"].as_str().unwrap().to_string());
    }
    let report = run_to_completion(&app, Some(1)).await;
    assert_eq!((report["scored"].as_u64(), report["rejected"].as_u64(), report["failed"].as_u64()), (Some(1), Some(1), Some(1)));

    let scored = get(&app, &format!("/api/v1/submissions/{}", ids[0])).await.json();
    assert_eq!(scored["submission"]["status"], "Scored");
    assert!(scored["score_record"]["final_score"].as_f64().unwrap() > 0.0);
    assert!(scored["score_record"]["latency_ms"].as_f64().unwrap() > 0.0);

    let rejected = get(&app, &format!("/api/v1/submissions/{}", ids[1])).await.json();
    assert_eq!(rejected["submission"]["status"], "LatencyRejected");
    assert!(rejected["latency_ms"].as_f64().unwrap() >= 10.0);
    assert_eq!(rejected["latency_limit_ms"], json!(10.0));
    assert!(rejected.get("score_record").is_none());

    let failed = get(&app, &format!("/api/v1/submissions/{}", ids[2])).await.json();
    assert_eq!(failed["submission"]["status"], "Failed");
    assert!(failed["submission"]["failure_reason"].as_str().unwrap().contains("shape"));

    let history = get(&app, "/api/v1/teams/a/history?track=1").await.json();
    assert_eq!(history["points"].as_array().unwrap().len(), 1);
    let empty = get(&app, "/api/v1/teams/a/history?track=2").await;
    assert_eq!(empty.status, StatusCode::OK);
    assert_eq!(empty.json()["points"], json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn overlapping_triggers_split_the_pending_set() {
    let dir = data_dir(2, 3);
    let referee = open_referee(&dir, 1);
    let app = app(&referee);
    let first_ids: Vec<String> = {
        let mut v = Vec::new();
        for team in ["a", "b"] {
            let r = post_submission(&app, &submit_body(team, Track::Depth, Variant::Pass { degrade: 1 }), None).await;
            v.push(r.json()["id"].as_str().unwrap().to_string());
        }
        v
    };
    let first = call(&app, Method::POST, "/api/v1/admin/runs", None, &[("x-admin-token", TOKEN)]).await;
    assert_eq!(first.status, StatusCode::ACCEPTED);
    let late = post_submission(&app, &submit_body("c", Track::Depth, Variant::Pass { degrade: 0 }), None).await;
    let late_id = late.json()["id"].as_str().unwrap().to_string();
    let second = run_to_completion(&app, None).await;

    let first_id = first.json()["run_id"].as_str().unwrap().to_string();
    assert_ne!(second["run_id"].as_str().unwrap(), first_id);
    let first_report = referee.run_report(&first_id).unwrap();
    assert_eq!(first_report.submission_ids, first_ids);
    assert_eq!(second["submission_ids"], json!([late_id]));
}

#[tokio::test(flavor = "multi_thread")]
async fn ground_truth_is_never_served() {
    let dir = data_dir(2, 4);
    let referee = open_referee(&dir, 1);
    let app = app(&referee);
    post_submission(&app, &submit_body("a", Track::Segmentation, Variant::Pass { degrade: 0 }), None).await;
    run_to_completion(&app, None).await;
    for uri in [
        "/api/v1/submissions/..%2F..%2Fbundles%2F2%2Fmanifest.json",
        "/api/v1/submissions/../../bundles/2/manifest.json",
        "/api/v1/leaderboard/..%2Fbundles",
        "/api/v1/teams/..%2F..%2Fbundles/history?track=2",
        "/api/v1/bundles/2",
        "/bundles/2/manifest.json",
        "/api/v1/submissions/s000001/../../bundles",
        "/api/v1/admin/runs/..%2F..%2Fbundles",
    ] {
        let r = get(&app, uri).await;
        assert_ne!(r.status, StatusCode::OK, "{uri}");
        let text = r.text();
        assert!(!text.contains("items/") && !text.contains("\"mask\""), "{uri}: {text}");
    }
    let ok = get(&app, "/api/v1/submissions/s000001").await.text();
    assert!(!ok.contains("items/") && !ok.contains("\"mask\""));
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_serves_identical_reads() {
    let dir = data_dir(2, 5);
    let uris: Vec<String>;
    let before: Vec<Vec<u8>>;
    {
        let referee = open_referee(&dir, 2);
        let app = app(&referee);
        for (team, track, variant) in workload(5) {
            post_submission(&app, &submit_body(&team, track, variant), None).await;
        }
        run_to_completion(&app, None).await;
        let mut u: Vec<String> = referee.submissions().iter().map(|s| format!("/api/v1/submissions/{}", s.id)).collect();
        for t in 1..=3 {
            u.push(format!("/api/v1/leaderboard/{t}"));
            for team in 0..5 {
                u.push(format!("/api/v1/teams/team-{team}/history?track={t}"));
            }
        }
        let mut b = Vec::new();
        for uri in &u {
            b.push(get(&app, uri).await.body);
        }
        uris = u;
        before = b;
    }
    let app = app(&open_referee(&dir, 1));
    for (uri, old) in uris.iter().zip(&before) {
        assert_eq!(&get(&app, uri).await.body, old, "{uri}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn leaderboard_and_history_match_core(seed in 0u64..1000) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let dir = data_dir(2, seed);
            let referee = open_referee(&dir, 2);
            let app = app(&referee);
            for (team, track, variant) in workload(seed) {
                referee.submit(&team, track, &toy_model(track, variant), None).unwrap();
            }
            referee.run_batch(None).unwrap();
            let raw = referee.raw_records().unwrap();
            for track in Track::ALL {
                let http = get(&app, &format!("/api/v1/leaderboard/{}", track.number())).await.body;
                let core = referee.leaderboard(track);
                assert_eq!(http, serde_json::to_vec(&core).unwrap());
                assert_eq!(leaderboard_from_records(&raw, track), core);
                for team in 0..5 {
                    let name = format!("team-{team}");
                    let r = get(&app, &format!("/api/v1/teams/{name}/history?track={}", track.number())).await;
                    match referee.score_history(&name, track) {
                        Ok(h) => assert_eq!(r.body, serde_json::to_vec(&h).unwrap()),
                        Err(_) => assert_eq!(r.status, StatusCode::NOT_FOUND),
                    }
                }
            }
            for s in referee.submissions() {
                let r = get(&app, &format!("/api/v1/submissions/{}", s.id)).await;
                assert_eq!(r.body, serde_json::to_vec(&referee.status(&s.id).unwrap()).unwrap());
                assert!(s.status.is_terminal() || s.status == Status::Submitted);
            }
        });
    }
}
