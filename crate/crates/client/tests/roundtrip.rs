use envaware_client::Client;
use envaware_core::api::{CreateSession, HumanAnswer, SessionMode, SessionStatus, API_VERSION};
use envaware_core::envsim::{generate_synthetic_task, write_task, SyntheticTaskSpec};
use envaware_core::trajectory::from_jsonl;
use envaware_core::{ActionKind, EpisodeConfig, StrategyId};
use envaware_service::{load_tasks_dir, serve, AppState};

async fn spawn_server(dir: &std::path::Path) -> Client {
    let ds = generate_synthetic_task(&SyntheticTaskSpec::new(4, 12, 3, 3, 40, 3)).unwrap();
    write_task(&dir.join("tasks/lunch"), &ds).unwrap();
    let tasks = load_tasks_dir(&dir.join("tasks")).unwrap();
    let state = AppState::open(tasks, dir.join("sessions")).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, state));
    Client::new(format!("http://{addr}/"))
}

fn request(mode: SessionMode, strategy: StrategyId, budget: u32, time: u32) -> CreateSession {
    CreateSession {
        v: API_VERSION,
        task: "lunch".into(),
        config: EpisodeConfig::new(budget, time, 10, strategy, 5),
        mode,
        weights: None,
        idempotency_key: None,
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn demonstrate_session_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let client = spawn_server(dir.path()).await;

    assert_eq!(client.health().await.unwrap().status, "ok");
    assert_eq!(client.tasks().await.unwrap().tasks[0].name, "lunch");

    let view = client
        .create_session(&request(SessionMode::Demonstrate, StrategyId::DtTaskEnv, 15, 6))
        .await
        .unwrap();
    let id = view.id.clone();
    let c = client.candidates(&id).await.unwrap();
    assert_eq!(c.turn_token, 0);
    assert!(c.candidates.iter().any(|c| c.action == ActionKind::FeatureSubsetQuery));

    let err = client.export(&id).await.unwrap_err();
    assert_eq!(err.code(), Some("session_active"));

    let r = client.demonstrate(&id, 0, ActionKind::FeatureSubsetQuery).await.unwrap();
    assert!(r.session.active_subset.is_some());
    let err = client.demonstrate(&id, 0, ActionKind::NoQuery).await.unwrap_err();
    assert_eq!(err.code(), Some("stale_token"));

    let mut token = r.session.turn_token;
    while client.session(&id).await.unwrap().status == SessionStatus::Active {
        token = client.demonstrate(&id, token, ActionKind::NoQuery).await.unwrap().session.turn_token;
    }
    let text = client.export(&id).await.unwrap();
    let t = from_jsonl("export", &text).unwrap();
    assert_eq!(t[0].len(), 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn teach_and_observe_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let client = spawn_server(dir.path()).await;

    let view = client
        .create_session(&request(SessionMode::Teach, StrategyId::USampling, 2, 5))
        .await
        .unwrap();
    let pending = view.pending.expect("u-sampling asks at once");
    assert!(matches!(pending.action, ActionKind::LabelQuery(_)));
    let err = client
        .teach(&view.id, view.turn_token, HumanAnswer::Label { concept: "nope".into() })
        .await
        .unwrap_err();
    assert_eq!(err.code(), Some("invalid_request"));
    let concept = client.tasks().await.unwrap().tasks[0].concepts[1].clone();
    let r = client
        .teach(&view.id, view.turn_token, HumanAnswer::Label { concept })
        .await
        .unwrap();
    assert_eq!(r.session.budget_spent, 1);

    let view = client
        .create_session(&request(SessionMode::Observe, StrategyId::USampling, 2, 5))
        .await
        .unwrap();
    let r = client.observe(&view.id, 0).await.unwrap();
    assert!(matches!(r.action, ActionKind::LabelQuery(_)));
    let err = client.demonstrate(&view.id, 1, ActionKind::NoQuery).await.unwrap_err();
    assert_eq!(err.code(), Some("wrong_mode"));
}

#[tokio::test]
async fn unreachable_server_is_a_transport_error() {
    let client = Client::new("http://127.0.0.1:1");
    assert!(matches!(
        client.health().await.unwrap_err(),
        envaware_client::ClientError::Transport(_)
    ));
}
