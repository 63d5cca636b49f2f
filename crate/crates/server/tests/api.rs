use std::sync::Arc;

use kisbench_core::analytics::{aggregate, ResultsReport};
use kisbench_core::clock::VirtualClock;
use kisbench_core::fixtures::{self, TARGET_BOUNDS_MS, TASK_VIDEOS, TEXTUAL_HINTS};
use kisbench_server::{build_app, serve, SearchResponse, ServerConfig, ADMIN_HEADER, SESSION_HEADER};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

const ADMIN: &str = "admin-token-123";

struct TestServer {
    base: String,
    clock: VirtualClock,
    http: Client,
    _shutdown: tokio::sync::oneshot::Sender<()>,
}

impl TestServer {
    async fn start(mutate: impl FnOnce(&mut ServerConfig)) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let mut cfg = ServerConfig::demo(ADMIN, vec![format!("{base}/retrieval")]);
        cfg.retrieval.as_mut().unwrap().fixture_distractors = 50;
        mutate(&mut cfg);
        let clock = VirtualClock::new(5_000_001);
        let (state, app) = build_app(&cfg, Arc::new(clock.clone())).unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel();
        tokio::spawn(serve(listener, state, app, 0, async {
            let _ = rx.await;
        }));
        Self {
            base,
            clock,
            http: Client::new(),
            _shutdown: tx,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn open(&self, pid: &str) -> (StatusCode, Value) {
        let r = self
            .http
            .post(self.url("/api/v1/session"))
            .json(&json!({ "participantId": pid }))
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn current(&self, token: &str) -> (StatusCode, Value) {
        let r = self
            .http
            .get(self.url("/api/v1/task/current"))
            .header(SESSION_HEADER, token)
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn submit(&self, token: &str, video: &str, time_ms: i64) -> (StatusCode, Value) {
        let r = self
            .http
            .post(self.url("/api/v1/submit"))
            .header(SESSION_HEADER, token)
            .json(&json!({ "videoId": video, "timeMs": time_ms, "queryTerms": "some words" }))
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn admin_get(&self, path: &str) -> reqwest::Response {
        self.http.get(self.url(path)).header(ADMIN_HEADER, ADMIN).send().await.unwrap()
    }
}

fn mid(task: usize) -> i64 {
    (TARGET_BOUNDS_MS[task].0 + TARGET_BOUNDS_MS[task].1) / 2
}

#[tokio::test]
async fn participant_flow_and_error_codes() {
    let s = TestServer::start(|_| {}).await;
    let (status, session) = s.open("P1").await;
    assert_eq!(status, StatusCode::OK);
    let token = session["token"].as_str().unwrap().to_string();
    assert_eq!(session["backendUri"], json!(format!("{}/retrieval", s.base)));

    // nothing fetched yet
    assert_eq!(s.submit(&token, "01140", 0).await.0, StatusCode::CONFLICT);

    let (status, task) = s.current(&token).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(task["state"], "active");
    assert_eq!(task["taskOrdinal"], 1);
    assert_eq!(task["remainingMs"], 180_000);
    assert_eq!(task["hint"]["type"], "media");

    let (status, wrong) = s.submit(&token, "14607", 5_000).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(wrong["bucket"], "Wrong");
    assert_eq!(wrong["taskEnded"], false);

    let (_, ok) = s.submit(&token, "01140", mid(0)).await;
    assert_eq!(ok["bucket"], "Correct");
    assert_eq!(ok["taskEnded"], true);

    s.current(&token).await;
    s.clock.advance(180_001);
    let (status, body) = s.submit(&token, "02024", mid(1)).await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(body["error"], "DeadlineExceeded");
    assert_eq!(s.current(&token).await.1["taskOrdinal"], 3);

    assert_eq!(s.current("nope").await.0, StatusCode::UNAUTHORIZED);
    let r = s.http.get(s.url("/api/v1/task/current")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);

    let r = s
        .http
        .post(s.url("/api/v1/submit"))
        .header(SESSION_HEADER, &token)
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    let r = s
        .http
        .post(s.url("/api/v1/session"))
        .json(&json!({ "participantId": "P9", "evaluationId": "missing" }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn participant_id_from_query_and_capacity() {
    let s = TestServer::start(|c| c.generate_credentials = 1).await;
    let r = s.http.post(s.url("/api/v1/session?PROLIFIC_PID=abc")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["participantId"], "abc");
    let (status, body) = s.open("def").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "CapacityExceeded");
    let r = s.http.post(s.url("/api/v1/session")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn finishing_yields_completion_code() {
    let s = TestServer::start(|c| c.redirect_url = Some("https://example.org/c?cc={code}".into())).await;
    let (_, session) = s.open("P1").await;
    let token = session["token"].as_str().unwrap();
    for task in 0..5 {
        s.current(token).await;
        s.clock.advance(1_000);
        assert_eq!(s.submit(token, TASK_VIDEOS[task], mid(task)).await.1["bucket"], "Correct");
    }
    let (_, done) = s.current(token).await;
    assert_eq!(done["state"], "finished");
    let code = done["completionCode"].as_str().unwrap();
    assert_eq!(code, kisbench_core::evalserver::completion_code("demo-completion-key", "P1"));
    assert_eq!(done["redirectUrl"], json!(format!("https://example.org/c?cc={code}")));
    assert_eq!(s.submit(token, "01140", 0).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn admin_endpoints() {
    let s = TestServer::start(|_| {}).await;
    let (_, session) = s.open("P1").await;
    let token = session["token"].as_str().unwrap();
    s.current(token).await;
    s.submit(token, "01140", mid(0)).await;

    let r = s.http.get(s.url("/api/v1/admin/evaluations/default/log")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let r = s
        .http
        .get(s.url("/api/v1/admin/evaluations/default/log"))
        .header("authorization", "Bearer wrong-token")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);

    let r = s.admin_get("/api/v1/admin/evaluations/default/log").await;
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()["content-type"], "application/x-ndjson");
    let log = r.text().await.unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().last().unwrap().contains("\"reason\":\"SolvedCorrect\""));

    let report: ResultsReport = s.admin_get("/api/v1/admin/evaluations/default/report").await.json().await.unwrap();
    assert_eq!(report, aggregate(log.as_bytes()).unwrap());
    let csv = s.admin_get("/api/v1/admin/evaluations/default/report?format=csv").await.text().await.unwrap();
    assert!(csv.starts_with("scope,"));
    let md = s.admin_get("/api/v1/admin/evaluations/default/report?format=markdown").await.text().await.unwrap();
    assert!(md.contains("| Original | 1 (100.0%)"), "{md}");
    assert_eq!(
        s.admin_get("/api/v1/admin/evaluations/default/report?format=xml").await.status(),
        StatusCode::BAD_REQUEST
    );
    assert_eq!(s.admin_get("/api/v1/admin/evaluations/zzz/log").await.status(), StatusCode::NOT_FOUND);

    let r = s
        .http
        .post(s.url("/api/v1/admin/evaluations"))
        .header(ADMIN_HEADER, ADMIN)
        .body(fixtures::study_plan().to_json())
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let id = r.json::<Value>().await.unwrap()["evaluationId"].as_str().unwrap().to_string();
    assert_eq!(id, "eval-1");
    let list: Value = s.admin_get("/api/v1/admin/evaluations").await.json().await.unwrap();
    assert_eq!(list["evaluations"], json!(["default", "eval-1"]));
    assert_eq!(
        s.admin_get(&format!("/api/v1/admin/evaluations/{id}/log")).await.text().await.unwrap(),
        ""
    );

    let mut bad = fixtures::study_plan();
    bad.conditions[0][1] = bad.conditions[0][0];
    let r = s
        .http
        .post(s.url("/api/v1/admin/evaluations"))
        .header(ADMIN_HEADER, ADMIN)
        .body(bad.to_json())
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"], "InvalidPlan");
    assert!(!body["violations"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn retrieval_backend() {
    let s = TestServer::start(|_| {}).await;
    let r: SearchResponse = s
        .http
        .post(s.url("/retrieval/search"))
        .json(&json!({ "query": TEXTUAL_HINTS[3], "k": 5 }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r.hits.len(), 5);
    assert_eq!(r.hits[0].rank, 1);
    assert_eq!(r.hits[0].video_id, "13872");
    assert_eq!(r.hits[0].submit_time_ms, mid(3));
    let seg: Value = s
        .http
        .get(s.url(&format!("/retrieval/segment/{}", r.hits[0].segment_id)))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(seg["videoId"], "13872");
    let empty: SearchResponse = s
        .http
        .post(s.url("/retrieval/search"))
        .json(&json!({ "query": "   " }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(empty.hits.is_empty());
    let r = s.http.get(s.url("/retrieval/segment/nope")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn retrieval_disabled_is_not_found() {
    let s = TestServer::start(|c| c.retrieval = None).await;
    let r = s
        .http
        .post(s.url("/retrieval/search"))
        .json(&json!({ "query": "bike" }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_media_and_app() {
    let media = tempfile::tempdir().unwrap();
    let app = tempfile::tempdir().unwrap();
    std::fs::write(media.path().join("clip.mp4"), b"not really a video").unwrap();
    std::fs::write(app.path().join("index.html"), "<html>app</html>").unwrap();
    let (m, a) = (media.path().to_path_buf(), app.path().to_path_buf());
    let s = TestServer::start(move |c| {
        c.media_dir = Some(m);
        c.app_dir = Some(a);
    })
    .await;
    let body = s.http.get(s.url("/media/clip.mp4")).send().await.unwrap().bytes().await.unwrap();
    assert_eq!(&body[..], b"not really a video");
    assert_eq!(s.http.get(s.url("/media/other.mp4")).send().await.unwrap().status(), StatusCode::NOT_FOUND);
    let page = s.http.get(s.url("/app/some/route")).send().await.unwrap().text().await.unwrap();
    assert_eq!(page, "<html>app</html>");
    assert_eq!(s.http.get(s.url("/healthz")).send().await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn participant_responses_never_reveal_targets() {
    let s = TestServer::start(|_| {}).await;
    let mut bodies = Vec::new();
    for p in 0..5 {
        let (_, session) = s.open(&format!("P{p}")).await;
        bodies.push(session.to_string());
        let token = session["token"].as_str().unwrap().to_string();
        for task in 0..5 {
            bodies.push(s.current(&token).await.1.to_string());
            s.clock.advance(1_234);
            for t in [mid(task) + 31_000, mid(task) - 45_000, mid(task) + 10_000, mid(task)] {
                bodies.push(s.submit(&token, TASK_VIDEOS[task], t).await.1.to_string());
            }
        }
        bodies.push(s.current(&token).await.1.to_string());
    }
    for body in &bodies {
        for key in ["startMs", "endMs", "distanceMs", "deadlineMs"] {
            assert!(!body.contains(key), "{body}");
        }
        for (start, end) in TARGET_BOUNDS_MS {
            assert!(!body.contains(&start.to_string()) && !body.contains(&end.to_string()), "{body}");
        }
    }
}
