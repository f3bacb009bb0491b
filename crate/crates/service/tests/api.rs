use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use curator_core::workflow::create_project;
use curator_core::{views, DocumentRef, GateConfig, PhaseConfig, ProjectConfig, Repository, Researcher};
use curator_service::{router, ServiceConfig};

fn setup(dir: &Path) -> Repository {
    let config = ProjectConfig::new(
        "P1",
        PhaseConfig::standard(),
        vec![Researcher::new("R0", "junior", 1), Researcher::new("R1", "senior", 0)],
        GateConfig::default(),
    );
    let mut repo = create_project(dir, config).unwrap();
    let a = repo.new_artefact(DocumentRef::text("research question"), &"R0".into()).unwrap();
    repo.stage_add(&a, "rq").unwrap();
    repo.commit("rq", &"R0".into(), None).unwrap();
    repo
}

fn app(dir: &Path) -> Router {
    let mut config = ServiceConfig::new(dir.to_path_buf());
    config.poll_cap = Duration::from_millis(300);
    config.poll_interval = Duration::from_millis(20);
    router(config)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, String) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, text) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_str(&text).unwrap())
}

async fn post(app: &Router, uri: &str, author: Option<&str>, body: Value) -> (StatusCode, Value) {
    let mut req = Request::post(uri).header("content-type", "application/json");
    if let Some(a) = author {
        req = req.header("X-Curator-Author", a);
    }
    let (status, text) = send(app, req.body(Body::from(body.to_string())).unwrap()).await;
    (status, serde_json::from_str(&text).unwrap())
}

async fn open_cycle_round(app: &Router) -> String {
    let (status, round) = post(app, "/rounds", Some("R0"), json!({"kind": "CYCLE_CLOSE"})).await;
    assert_eq!(status, StatusCode::CREATED, "{round}");
    round["id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn read_endpoints_match_the_shared_views() {
    let dir = tempfile::tempdir().unwrap();
    let repo = setup(dir.path());
    let app = app(dir.path());

    let expected = format!("{}\n", views::render(&views::stats(&repo).unwrap()).unwrap());
    let (status, text) = send(&app, Request::get("/stats").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(text, expected);

    let expected = format!("{}\n", views::render(&views::project(&repo).unwrap()).unwrap());
    assert_eq!(send(&app, Request::get("/project").body(Body::empty()).unwrap()).await.1, expected);

    let (status, log) = get(&app, "/log/G1/main").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(log.as_array().unwrap().len(), 2);

    let id = repo.resolve_path("rq").unwrap();
    let (status, doc) = get(&app, &format!("/artefact/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["artefact"]["content"]["text"], "research question");

    assert_eq!(get(&app, "/releases").await.1, json!([]));
    assert_eq!(get(&app, "/rounds").await.1, json!([]));
}

#[tokio::test]
async fn unknown_ids_are_404_and_bad_ids_400() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let (status, body) = get(&app, "/rounds/r99").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UnknownRound");
    assert_eq!(get(&app, &format!("/artefact/{}", "0".repeat(64))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/artefact/nothex").await.1["code"], "InvalidId");
    assert_eq!(get(&app, "/log/G1/nope").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn vote_is_visible_on_read() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let id = open_cycle_round(&app).await;
    let (status, _) = post(&app, &format!("/rounds/{id}/votes"), Some("R0"), json!({"pref": 0.8})).await;
    assert_eq!(status, StatusCode::OK);
    let (_, round) = get(&app, &format!("/rounds/{id}")).await;
    assert_eq!(round["ballots"][0]["voter"], "R0");
    assert_eq!(round["ballots"][0]["pref"], 0.8);
    assert_eq!(round["live"], Value::Null);

    post(&app, &format!("/rounds/{id}/votes"), Some("R1"), json!({"pref": 0.4})).await;
    let (_, round) = get(&app, &format!("/rounds/{id}")).await;
    assert!((round["live"]["score"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert!((round["live"]["disagreement"].as_f64().unwrap() - 0.4).abs() < 1e-12);
}

#[tokio::test]
async fn closing_twice_returns_the_stored_verdict() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let id = open_cycle_round(&app).await;
    post(&app, &format!("/rounds/{id}/votes"), Some("R0"), json!({"pref": 0.9})).await;
    post(&app, &format!("/rounds/{id}/votes"), Some("R1"), json!({"pref": 0.7})).await;
    let (status, first) = post(&app, &format!("/rounds/{id}/close"), Some("R1"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["verdict"], "ACCEPT");
    let (status, second) = post(&app, &format!("/rounds/{id}/close"), Some("R0"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, second);

    let (status, commit) = post(&app, "/cycles/close", Some("R0"), json!({"round": id})).await;
    assert_eq!(status, StatusCode::CREATED, "{commit}");
    assert_eq!(commit["kind"], "cycleClose");
    assert_eq!(get(&app, "/project").await.1["currentCycle"], 2);
}

#[tokio::test]
async fn mutations_require_an_author() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let (status, body) = post(&app, "/rounds", None, json!({"kind": "CYCLE_CLOSE"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "MissingAuthor");
    let (status, body) = post(&app, "/rounds", Some("R7"), json!({"kind": "CYCLE_CLOSE"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UnknownResearcher");
}

#[tokio::test]
async fn domain_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let id = open_cycle_round(&app).await;

    let (status, body) = post(&app, &format!("/rounds/{id}/votes"), Some("R0"), json!({"pref": 1.5})).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("PrefOutOfRange")));

    let (status, body) = post(&app, "/cycles/close", Some("R0"), json!({"round": id})).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("GateNotPassed")));

    let (status, body) = post(&app, "/cycles/close", Some("R0"), json!({})).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedRequest")));

    let (status, body) = post(&app, "/phases/advance", Some("R0"), json!({"round": id})).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("WrongSubjectKind")));
}

#[tokio::test]
async fn long_poll_waits_for_a_new_ballot_or_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let id = open_cycle_round(&app).await;

    let started = Instant::now();
    let (_, round) = get(&app, &format!("/rounds/{id}?since=0")).await;
    assert!(started.elapsed() >= Duration::from_millis(300));
    assert_eq!(round["ballots"], json!([]));

    let waiter = {
        let app = app.clone();
        let uri = format!("/rounds/{id}?since=0");
        tokio::spawn(async move { get(&app, &uri).await })
    };
    tokio::time::sleep(Duration::from_millis(50)).await;
    post(&app, &format!("/rounds/{id}/votes"), Some("R1"), json!({"pref": 0.5})).await;
    let (_, round) = waiter.await.unwrap();
    assert_eq!(round["ballots"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn upload_stages_a_document_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let boundary = "XBOUNDARY";
    let body = format!(
        "--{b}\r\nContent-Disposition: form-data; name=\"path\"\r\n\r\nphotos/0001\r\n\
         --{b}\r\nContent-Disposition: form-data; name=\"metadata\"\r\n\r\n{{\"area\":\"north\"}}\r\n\
         --{b}\r\nContent-Disposition: form-data; name=\"document\"; filename=\"a.jpg\"\r\n\
         Content-Type: image/jpeg\r\n\r\n\u{1}\u{2}\u{3}\r\n--{b}--\r\n",
        b = boundary
    );
    let req = Request::post("/artefacts")
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .header("X-Curator-Author", "R1")
        .body(Body::from(body))
        .unwrap();
    let (status, text) = send(&app, req).await;
    assert_eq!(status, StatusCode::CREATED, "{text}");
    let created: Value = serde_json::from_str(&text).unwrap();

    let repo = Repository::open(dir.path()).unwrap();
    let staged = repo.resolve_path("photos/0001").unwrap();
    assert_eq!(created["id"], json!(staged));
    let a = repo.artefact(&staged).unwrap();
    assert_eq!(a.meta_data[0].key, "area");
    match a.content {
        DocumentRef::Blob { media_type, size, .. } => assert_eq!((media_type.as_str(), size), ("image/jpeg", 3)),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn branches_and_merges_go_through_rounds() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let app = app(dir.path());
    let (status, b) = post(&app, "/branches", Some("R0"), json!({"name": "ml"})).await;
    assert_eq!(status, StatusCode::CREATED, "{b}");
    assert_eq!(get(&app, "/log/G1/ml").await.0, StatusCode::OK);

    let (_, round) = post(&app, "/rounds", Some("R0"), json!({"kind": "MERGE", "target": "branch:ml"})).await;
    let id = round["id"].as_str().unwrap().to_owned();
    let (status, body) = post(&app, "/merges", Some("R0"), json!({"from": "ml", "into": "main", "round": id})).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("GateNotPassed")));
    post(&app, &format!("/rounds/{id}/votes"), Some("R0"), json!({"pref": 0.9})).await;
    post(&app, &format!("/rounds/{id}/votes"), Some("R1"), json!({"pref": 0.9})).await;
    post(&app, &format!("/rounds/{id}/close"), Some("R0"), json!({})).await;
    let (status, commit) = post(&app, "/merges", Some("R0"), json!({"from": "ml", "into": "main", "round": id})).await;
    assert_eq!(status, StatusCode::CREATED, "{commit}");
    assert_eq!(commit["parentIds"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn serves_static_ui_assets() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>curator</html>").unwrap();
    let mut config = ServiceConfig::new(dir.path().to_path_buf());
    config.ui = Some(ui.path().to_path_buf());
    let app = router(config);
    let (status, text) = send(&app, Request::get("/ui/index.html").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(text, "<html>curator</html>");
}
