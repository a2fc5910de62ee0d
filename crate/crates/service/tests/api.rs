use std::path::Path;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use envaware_core::envsim::{generate_synthetic_task, write_task, SyntheticTaskSpec};
use envaware_core::trajectory::from_jsonl;
use envaware_core::{EpisodeConfig, StrategyId};
use envaware_service::{load_tasks_dir, router, AppState};

fn write_tasks(root: &Path) {
    let ds = generate_synthetic_task(&SyntheticTaskSpec::new(4, 12, 3, 3, 40, 7)).unwrap();
    write_task(&root.join("lunch"), &ds).unwrap();
}

fn open_app(root: &Path) -> Router {
    let tasks = load_tasks_dir(&root.join("tasks")).unwrap();
    router(AppState::open(tasks, root.join("sessions")).unwrap())
}

fn setup() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    write_tasks(&dir.path().join("tasks"));
    let app = open_app(dir.path());
    (dir, app)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn create_body(mode: &str, strategy: StrategyId, budget: u32, time: u32) -> Value {
    let config = EpisodeConfig::new(budget, time, 10, strategy, 11);
    json!({ "v": 1, "task": "lunch", "config": config, "mode": mode })
}

async fn create(app: &Router, body: Value) -> Value {
    let (status, v) = call_json(app, Method::POST, "/v1/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v
}

async fn demonstrate(app: &Router, id: &str, token: u64, action: Value) -> (StatusCode, Value) {
    let uri = format!("/v1/sessions/{id}/demonstrate");
    call_json(app, Method::POST, &uri, Some(json!({ "v": 1, "turnToken": token, "action": action }))).await
}

#[tokio::test]
async fn health_and_task_list() {
    let (_dir, app) = setup();
    let (status, v) = call_json(&app, Method::GET, "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["v"], 1);
    assert_eq!(v["status"], "ok");

    let (status, v) = call_json(&app, Method::GET, "/v1/tasks", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["tasks"][0]["name"], "lunch");
    assert_eq!(v["tasks"][0]["concepts"].as_array().unwrap().len(), 4);
    assert_eq!(v["tasks"][0]["featureDim"], 12);
}

#[tokio::test]
async fn create_demonstrate_session_mirrors_training_setup() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    assert_eq!(v["status"], "active");
    assert_eq!(v["turn"], 1);
    assert_eq!(v["turnToken"], 0);
    assert_eq!(v["budgetTotal"], 15);
    assert_eq!(v["timeTotal"], 30);
    assert_eq!(v["scene"]["instances"].as_array().unwrap().len(), 8);
    let kinds: Vec<&str> = v["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["action"]["kind"].as_str().unwrap())
        .collect();
    for k in ["NQ", "LQ", "DQ", "FSQ"] {
        assert!(kinds.contains(&k), "missing {k} in {kinds:?}");
    }

    let id = v["id"].as_str().unwrap();
    let (status, c) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}/candidates"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["candidates"], v["candidates"]);
}

#[tokio::test]
async fn duplicate_create_with_same_key_returns_same_session() {
    let (_dir, app) = setup();
    let mut body = create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30);
    body["idempotencyKey"] = json!("abc");
    let a = create(&app, body.clone()).await;
    let b = create(&app, body).await;
    assert_eq!(a["id"], b["id"]);

    let c = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    assert_ne!(a["id"], c["id"]);
}

#[tokio::test]
async fn create_rejects_bad_requests() {
    let (_dir, app) = setup();
    let (status, v) = call_json(
        &app,
        Method::POST,
        "/v1/sessions",
        Some(create_body("demonstrate", StrategyId::DtTaskEnv, 0, 30)),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "invalid_config");

    let mut body = create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30);
    body["task"] = json!("nope");
    let (status, v) = call_json(&app, Method::POST, "/v1/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_task");

    let mut body = create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30);
    body["v"] = json!(2);
    let (status, v) = call_json(&app, Method::POST, "/v1/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "unsupported_version");

    let (status, v) = call_json(&app, Method::POST, "/v1/sessions", Some(json!({ "v": 1 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "invalid_request");

    let (status, v) = call_json(&app, Method::GET, "/v1/sessions/s999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_session");
}

#[tokio::test]
async fn no_query_costs_nothing_and_advances() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    let id = v["id"].as_str().unwrap();
    let (status, r) = demonstrate(&app, id, 0, json!({ "kind": "NQ" })).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["answer"]["kind"], "none");
    assert_eq!(r["session"]["turn"], 2);
    assert_eq!(r["session"]["turnToken"], 1);
    assert_eq!(r["session"]["budgetSpent"], 0);
    assert_eq!(r["session"]["history"][0]["cost"], 0);
}

#[tokio::test]
async fn label_query_over_budget_is_rejected() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 1, 30)).await;
    let id = v["id"].as_str().unwrap();
    let first = v["scene"]["instances"][0]["id"].clone();
    let (status, r) = demonstrate(&app, id, 0, json!({ "kind": "LQ", "arg": first })).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["answer"]["kind"], "label");
    assert_eq!(r["session"]["budgetSpent"], 1);
    assert!(r["session"]["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["action"]["kind"] == "NQ"));

    let other = r["session"]["scene"]["instances"][1]["id"].clone();
    let (status, e) = demonstrate(&app, id, 1, json!({ "kind": "LQ", "arg": other })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "budget_exceeded");
    assert!(e["message"].as_str().unwrap().contains("budget"));

    let (_, after) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(after["turnToken"], 1);
    assert_eq!(after["budgetSpent"], 1);
}

#[tokio::test]
async fn instance_outside_scene_is_illegal() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    let id = v["id"].as_str().unwrap();
    let (status, e) = demonstrate(&app, id, 0, json!({ "kind": "LQ", "arg": 987654321u64 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "illegal_action");
}

#[tokio::test]
async fn finished_session_exports_its_trajectory() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    let id = v["id"].as_str().unwrap().to_string();

    let (status, e) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e["code"], "session_active");

    let mut view = v;
    for token in 0..30u64 {
        let action = match token {
            1 => json!({ "kind": "FSQ" }),
            t if t % 3 == 0 => json!({ "kind": "LQ", "arg": view["scene"]["instances"][0]["id"] }),
            _ => json!({ "kind": "NQ" }),
        };
        let (status, r) = demonstrate(&app, &id, token, action).await;
        assert_eq!(status, StatusCode::OK, "turn {token}: {r}");
        view = r["session"].clone();
    }
    assert_eq!(view["status"], "finished");
    assert!(view.get("candidates").is_none());

    let (status, e) = demonstrate(&app, &id, 30, json!({ "kind": "NQ" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e["code"], "session_finished");

    let uri = format!("/v1/sessions/{id}/export");
    let (status, a) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, b) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(a, b);

    let trajectories = from_jsonl("export", std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(trajectories.len(), 1);
    let t = &trajectories[0];
    assert_eq!(t.len(), 30);
    assert_eq!(t.steps[1].action.to_string(), "FSQ");

    let summary = std::str::from_utf8(&a).unwrap().lines().last().unwrap();
    let summary: Value = serde_json::from_str(summary).unwrap();
    let recomputed = t.feature_counts();
    for (k, c) in recomputed.iter().enumerate() {
        let logged = summary["featureCounts"][k].as_f64().unwrap();
        assert!((logged - c).abs() < 1e-12, "feature {k}: {logged} vs {c}");
    }
}

#[tokio::test]
async fn stale_token_is_a_conflict() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    let id = v["id"].as_str().unwrap();
    let (status, _) = demonstrate(&app, id, 0, json!({ "kind": "NQ" })).await;
    assert_eq!(status, StatusCode::OK);
    let (status, e) = demonstrate(&app, id, 0, json!({ "kind": "NQ" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e["code"], "stale_token");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_steps_exactly_one_succeeds() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    let id = v["id"].as_str().unwrap().to_string();
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move { demonstrate(&app, &id, 0, json!({ "kind": "NQ" })).await })
        })
        .collect();
    let mut ok = 0;
    for h in handles {
        let (status, body) = h.await.unwrap();
        match status {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT => assert_eq!(body["code"], "stale_token"),
            s => panic!("unexpected status {s}: {body}"),
        }
    }
    assert_eq!(ok, 1);
    let (_, after) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(after["turnToken"], 1);
}

#[tokio::test]
async fn wrong_mode_is_a_conflict() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("observe", StrategyId::USampling, 15, 30)).await;
    let id = v["id"].as_str().unwrap();
    let (status, e) = demonstrate(&app, id, 0, json!({ "kind": "NQ" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e["code"], "wrong_mode");
}

#[tokio::test]
async fn observe_plays_the_strategy() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("observe", StrategyId::USampling, 2, 4)).await;
    let id = v["id"].as_str().unwrap();
    let uri = format!("/v1/sessions/{id}/observe");
    let mut kinds = Vec::new();
    for token in 0..4u64 {
        let (status, r) = call_json(&app, Method::POST, &uri, Some(json!({ "v": 1, "turnToken": token }))).await;
        assert_eq!(status, StatusCode::OK, "{r}");
        kinds.push(r["action"]["kind"].as_str().unwrap().to_string());
    }
    assert_eq!(kinds, ["LQ", "LQ", "NQ", "NQ"]);
}

fn teach_body(weights: [f64; 7]) -> Value {
    let mut body = create_body("teach", StrategyId::DtTaskEnv, 15, 30);
    body["weights"] = json!(weights);
    body
}

// Weights under which the greedy learner asks for a feature subset first.
const FSQ_FIRST: [f64; 7] = [-1.0, 0.0, -1.0, 0.0, -0.1, 0.0, -1.0];

#[tokio::test]
async fn teach_feature_subset_answer_installs_subset() {
    let (_dir, app) = setup();
    let v = create(&app, teach_body(FSQ_FIRST)).await;
    assert_eq!(v["pending"]["action"]["kind"], "FSQ", "{}", v["pending"]);
    assert!(v.get("activeSubset").is_none());
    let id = v["id"].as_str().unwrap();
    let token = v["turnToken"].as_u64().unwrap();
    let uri = format!("/v1/sessions/{id}/teach");

    let bad = json!({ "v": 1, "turnToken": token, "answer": { "kind": "featureSubset", "features": [0, 99] } });
    let (status, e) = call_json(&app, Method::POST, &uri, Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "invalid_request");

    let wrong_kind = json!({ "v": 1, "turnToken": token, "answer": { "kind": "label", "concept": "fruit" } });
    let (status, _) = call_json(&app, Method::POST, &uri, Some(wrong_kind)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let good = json!({ "v": 1, "turnToken": token, "answer": { "kind": "featureSubset", "features": [2, 0, 1] } });
    let (status, r) = call_json(&app, Method::POST, &uri, Some(good)).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["action"]["kind"], "FSQ");
    assert_eq!(r["session"]["activeSubset"], json!([0, 1, 2]));
    assert!(r["session"]["turnToken"].as_u64().unwrap() > token);
}

#[tokio::test]
async fn teach_label_answers_are_validated() {
    let (_dir, app) = setup();
    let v = create(&app, create_body("teach", StrategyId::USampling, 15, 30)).await;
    assert_eq!(v["pending"]["action"]["kind"], "LQ");
    let id = v["id"].as_str().unwrap();
    let uri = format!("/v1/sessions/{id}/teach");

    let unknown = json!({ "v": 1, "turnToken": 0, "answer": { "kind": "label", "concept": "dessert" } });
    let (status, e) = call_json(&app, Method::POST, &uri, Some(unknown)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "invalid_request");
    assert!(e["message"].as_str().unwrap().contains("dessert"));

    let (_, tasks) = call_json(&app, Method::GET, "/v1/tasks", None).await;
    let concept = tasks["tasks"][0]["concepts"][0].clone();
    let ok = json!({ "v": 1, "turnToken": 0, "answer": { "kind": "label", "concept": concept } });
    let (status, r) = call_json(&app, Method::POST, &uri, Some(ok)).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["answer"]["kind"], "label");
    assert_eq!(r["session"]["pending"]["action"]["kind"], "LQ");
    assert_eq!(r["session"]["budgetSpent"], 1);
}

#[tokio::test]
async fn teach_skips_no_query_turns_without_input() {
    let (_dir, app) = setup();
    // Only spending is penalized, so no query ever pays off.
    let v = create(&app, teach_body([0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0])).await;
    assert_eq!(v["status"], "finished");
    assert!(v.get("pending").is_none());
    let history = v["history"].as_array().unwrap();
    assert_eq!(history.len(), 30);
    assert!(history.iter().all(|s| s["action"]["kind"] == "NQ"));
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    write_tasks(&dir.path().join("tasks"));
    let (id, before) = {
        let app = open_app(dir.path());
        let mut body = create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30);
        body["idempotencyKey"] = json!("k1");
        let v = create(&app, body).await;
        let id = v["id"].as_str().unwrap().to_string();
        let (_, r) = demonstrate(&app, &id, 0, json!({ "kind": "FSQ" })).await;
        let lq = json!({ "kind": "LQ", "arg": r["session"]["scene"]["instances"][3]["id"] });
        let (status, _) = demonstrate(&app, &id, 1, lq).await;
        assert_eq!(status, StatusCode::OK);
        let (_, after) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await;
        (id, after)
    };

    let app = open_app(dir.path());
    let (status, after) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);

    let mut body = create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30);
    body["idempotencyKey"] = json!("k1");
    assert_eq!(create(&app, body).await["id"], json!(id));
    let fresh = create(&app, create_body("demonstrate", StrategyId::DtTaskEnv, 15, 30)).await;
    assert_ne!(fresh["id"], json!(id));
}
