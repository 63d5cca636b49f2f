//! Scripted participants that drive a running server over HTTP.
//!
//! With a virtual clock the participants are stepped by a discrete-event
//! loop in a fixed order, so a run is reproducible down to the event log.
//! With the real clock each participant is its own task and requests go
//! through a shared rate limiter.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use kisbench_core::analytics::ResultsReport;
use kisbench_core::clock::{Clock, SystemClock, VirtualClock};
use kisbench_core::evalserver::DEFAULT_EVALUATION;
use kisbench_core::fixtures::{NEIGHBOUR_CAPTIONS, TEXTUAL_HINTS, VOCAB};
use kisbench_server::{build_app, serve, SearchResponse, ServerConfig, ADMIN_HEADER, SESSION_HEADER};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimAction {
    pub query: String,
    /// 1-based rank of the result to submit.
    #[serde(default = "one")]
    pub pick_rank: usize,
    /// Wait before this action, measured from the previous one (or task start).
    #[serde(default)]
    pub delay_ms: i64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StopPolicy {
    /// Repeat the task's actions until the task ends.
    UntilCorrect,
    /// Run the actions once, then wait for the deadline.
    FixedActions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimScript {
    pub participant_id: String,
    /// Actions per task ordinal; missing entries mean "do nothing".
    pub tasks: Vec<Vec<SimAction>>,
    pub stop: StopPolicy,
}

impl SimScript {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.participant_id.trim().is_empty() {
            out.push("participantId is empty".to_string());
        }
        for (t, actions) in self.tasks.iter().enumerate() {
            for (i, a) in actions.iter().enumerate() {
                if a.delay_ms < 0 {
                    out.push(format!("{}: task {} action {}: negative delay", self.participant_id, t + 1, i + 1));
                }
                if a.pick_rank == 0 {
                    out.push(format!("{}: task {} action {}: pickRank must be >= 1", self.participant_id, t + 1, i + 1));
                }
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot reach server at {uri}: {message}")]
    Connect { uri: String, message: String },
    #[error("invalid scripts: {}", .0.join("; "))]
    InvalidScript(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskOutcome {
    pub ordinal: usize,
    pub solved: bool,
    pub submissions: u32,
    pub late_submissions: u32,
    pub skipped_actions: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParticipantOutcome {
    pub participant_id: String,
    pub condition_index: Option<usize>,
    pub tasks: Vec<TaskOutcome>,
    pub completion_code: Option<String>,
    pub error: Option<String>,
}

impl ParticipantOutcome {
    pub fn solved(&self) -> usize {
        self.tasks.iter().filter(|t| t.solved).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimReport {
    pub participants: Vec<ParticipantOutcome>,
    pub requests: u64,
    pub elapsed_ms: i64,
}

impl SimReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for p in &self.participants {
            let tasks: Vec<String> = p
                .tasks
                .iter()
                .map(|t| {
                    format!(
                        "{}:{}{}",
                        t.ordinal,
                        if t.solved { "solved" } else { "expired" },
                        if t.skipped_actions > 0 { format!("(skipped {})", t.skipped_actions) } else { String::new() }
                    )
                })
                .collect();
            s.push_str(&format!(
                "{} condition={} solved={}/{} [{}]{}\n",
                p.participant_id,
                p.condition_index.map_or("-".into(), |c| (c + 1).to_string()),
                p.solved(),
                p.tasks.len(),
                tasks.join(" "),
                p.error.as_ref().map_or(String::new(), |e| format!(" error: {e}"))
            ));
        }
        s.push_str(&format!("{} requests in {} ms\n", self.requests, self.elapsed_ms));
        s
    }
}

/// Spaces requests so that at most `per_second` start in any one-second window.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: tokio::sync::Mutex<tokio::time::Instant>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        assert!(per_second > 0.0);
        Self {
            interval: Duration::from_secs_f64(1.0 / per_second),
            next: tokio::sync::Mutex::new(tokio::time::Instant::now()),
        }
    }

    pub async fn acquire(&self) {
        let at = {
            let mut next = self.next.lock().await;
            let at = (*next).max(tokio::time::Instant::now());
            *next = at + self.interval;
            at
        };
        tokio::time::sleep_until(at).await;
    }
}

pub enum ClockMode {
    /// Wall-clock pacing; `max_requests_per_sec` bounds the request rate.
    Real { max_requests_per_sec: Option<f64> },
    /// Drives the given clock, which the server must share.
    Virtual(VirtualClock),
}

struct Http {
    client: reqwest::Client,
    base: String,
    limiter: Option<Arc<RateLimiter>>,
    requests: Arc<AtomicU64>,
}

impl Http {
    async fn send(&self, req: reqwest::RequestBuilder) -> Result<(u16, Value), String> {
        if let Some(l) = &self.limiter {
            l.acquire().await;
        }
        self.requests.fetch_add(1, Ordering::Relaxed);
        let resp = req.send().await.map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.json::<Value>().await.unwrap_or(Value::Null);
        Ok((status, body))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Open,
    Fetch,
    Act(usize),
    AwaitExpiry,
    Done,
}

struct Runner {
    script: SimScript,
    http: Arc<Http>,
    token: String,
    backend: String,
    deadline: i64,
    phase: Phase,
    outcome: ParticipantOutcome,
}

impl Runner {
    fn new(script: SimScript, http: Arc<Http>) -> Self {
        Self {
            outcome: ParticipantOutcome {
                participant_id: script.participant_id.clone(),
                ..Default::default()
            },
            script,
            http,
            token: String::new(),
            backend: String::new(),
            deadline: 0,
            phase: Phase::Open,
        }
    }

    fn actions(&self) -> &[SimAction] {
        self.outcome
            .tasks
            .last()
            .and_then(|t| self.script.tasks.get(t.ordinal - 1))
            .map_or(&[], Vec::as_slice)
    }

    fn task(&mut self) -> &mut TaskOutcome {
        self.outcome.tasks.last_mut().expect("a task is active")
    }

    fn fail(&mut self, message: String) -> Option<i64> {
        self.outcome.error = Some(message);
        self.phase = Phase::Done;
        None
    }

    /// Runs everything due at `now`; returns when to call again.
    async fn step(&mut self, now: i64) -> Option<i64> {
        loop {
            match self.phase {
                Phase::Done => return None,
                Phase::Open => {
                    let req = self
                        .http
                        .client
                        .post(format!("{}/api/v1/session", self.http.base))
                        .json(&json!({ "participantId": self.script.participant_id }));
                    match self.http.send(req).await {
                        Ok((200, body)) => {
                            self.token = body["token"].as_str().unwrap_or_default().to_string();
                            self.backend = body["backendUri"].as_str().unwrap_or_default().to_string();
                            self.outcome.condition_index = body["conditionIndex"].as_u64().map(|c| c as usize);
                            self.phase = Phase::Fetch;
                        }
                        Ok((status, body)) => return self.fail(format!("open session: HTTP {status} {body}")),
                        Err(e) => return self.fail(format!("open session: {e}")),
                    }
                }
                Phase::Fetch => {
                    let req = self
                        .http
                        .client
                        .get(format!("{}/api/v1/task/current", self.http.base))
                        .header(SESSION_HEADER, &self.token);
                    let body = match self.http.send(req).await {
                        Ok((200, body)) => body,
                        Ok((status, body)) => return self.fail(format!("current task: HTTP {status} {body}")),
                        Err(e) => return self.fail(format!("current task: {e}")),
                    };
                    if body["state"] == "finished" {
                        self.outcome.completion_code = body["completionCode"].as_str().map(str::to_string);
                        self.phase = Phase::Done;
                        return None;
                    }
                    let ordinal = body["taskOrdinal"].as_u64().unwrap_or(1) as usize;
                    self.deadline = now + body["remainingMs"].as_i64().unwrap_or(0);
                    if self.outcome.tasks.last().map(|t| t.ordinal) != Some(ordinal) {
                        self.outcome.tasks.push(TaskOutcome {
                            ordinal,
                            ..Default::default()
                        });
                    }
                    return match self.actions().first() {
                        Some(a) => {
                            let at = now + a.delay_ms;
                            self.phase = Phase::Act(0);
                            Some(at)
                        }
                        None => {
                            self.phase = Phase::AwaitExpiry;
                            Some(self.deadline + 1)
                        }
                    };
                }
                Phase::AwaitExpiry => self.phase = Phase::Fetch,
                Phase::Act(i) => {
                    let action = self.actions()[i].clone();
                    match self.act(&action).await {
                        Err(e) => return self.fail(e),
                        Ok(true) => {
                            self.phase = Phase::Fetch;
                            continue;
                        }
                        Ok(false) => {}
                    }
                    let actions = self.actions();
                    let cycle_delay: i64 = actions.iter().map(|a| a.delay_ms).sum();
                    let next = if i + 1 < actions.len() {
                        Some(i + 1)
                    } else if self.script.stop == StopPolicy::UntilCorrect && cycle_delay > 0 {
                        Some(0)
                    } else {
                        None
                    };
                    return match next {
                        Some(j) => {
                            let at = now + actions[j].delay_ms;
                            self.phase = Phase::Act(j);
                            Some(at)
                        }
                        None => {
                            self.phase = Phase::AwaitExpiry;
                            Some((self.deadline + 1).max(now))
                        }
                    };
                }
            }
        }
    }

    /// Queries the backend and submits the picked hit. `Ok(true)` when the task ended.
    async fn act(&mut self, action: &SimAction) -> Result<bool, String> {
        let req = self
            .http
            .client
            .post(format!("{}/search", self.backend))
            .json(&json!({ "query": action.query, "k": action.pick_rank }));
        let hits: SearchResponse = match self.http.send(req).await {
            Ok((200, body)) => serde_json::from_value(body).map_err(|e| format!("search: bad response: {e}"))?,
            Ok((status, body)) => return Err(format!("search: HTTP {status} {body}")),
            Err(e) => return Err(format!("search: {e}")),
        };
        let Some(hit) = hits.hits.get(action.pick_rank - 1) else {
            self.task().skipped_actions += 1;
            return Ok(false);
        };
        let req = self
            .http
            .client
            .post(format!("{}/api/v1/submit", self.http.base))
            .header(SESSION_HEADER, &self.token)
            .json(&json!({ "videoId": hit.video_id, "timeMs": hit.submit_time_ms, "queryTerms": action.query }));
        match self.http.send(req).await {
            Ok((200, body)) => {
                let task = self.task();
                task.submissions += 1;
                if body["bucket"] == "Correct" {
                    task.solved = true;
                }
                Ok(body["taskEnded"].as_bool().unwrap_or(false))
            }
            Ok((410, _)) => {
                self.task().late_submissions += 1;
                Ok(true)
            }
            Ok((409, _)) => Ok(true),
            Ok((status, body)) => Err(format!("submit: HTTP {status} {body}")),
            Err(e) => Err(format!("submit: {e}")),
        }
    }
}

async fn check_reachable(client: &reqwest::Client, base: &str) -> Result<(), SimError> {
    let connect = |message: String| SimError::Connect {
        uri: base.to_string(),
        message,
    };
    let resp = client
        .get(format!("{base}/healthz"))
        .timeout(Duration::from_secs(10))
        .send()
        .await
        .map_err(|e| connect(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(connect(format!("health check returned HTTP {}", resp.status())));
    }
    Ok(())
}

/// Runs every script against the server at `server_uri`.
pub async fn run_simulation(server_uri: &str, scripts: &[SimScript], mode: ClockMode) -> Result<SimReport, SimError> {
    let problems: Vec<String> = scripts.iter().flat_map(SimScript::problems).collect();
    if !problems.is_empty() {
        return Err(SimError::InvalidScript(problems));
    }
    let base = server_uri.trim_end_matches('/').to_string();
    let client = reqwest::Client::new();
    check_reachable(&client, &base).await?;
    let requests = Arc::new(AtomicU64::new(0));
    let limiter = match &mode {
        ClockMode::Real {
            max_requests_per_sec: Some(r),
        } => Some(Arc::new(RateLimiter::new(*r))),
        _ => None,
    };
    let http = Arc::new(Http {
        client,
        base,
        limiter,
        requests: Arc::clone(&requests),
    });
    let mut runners: Vec<Runner> = scripts.iter().map(|s| Runner::new(s.clone(), Arc::clone(&http))).collect();

    let elapsed_ms = match mode {
        ClockMode::Virtual(clock) => {
            let start = clock.now_ms();
            // (time, participant index) gives a total order, hence determinism.
            let mut queue: BinaryHeap<Reverse<(i64, usize)>> = (0..runners.len()).map(|i| Reverse((start, i))).collect();
            while let Some(Reverse((at, i))) = queue.pop() {
                clock.advance_to(at);
                if let Some(next) = runners[i].step(clock.now_ms()).await {
                    queue.push(Reverse((next.max(at), i)));
                }
            }
            clock.now_ms() - start
        }
        ClockMode::Real { .. } => {
            let origin = Instant::now();
            let handles: Vec<_> = runners
                .into_iter()
                .map(|mut r| {
                    tokio::spawn(async move {
                        let now = || origin.elapsed().as_millis() as i64;
                        while let Some(at) = r.step(now()).await {
                            let wait = (at - now()).max(0);
                            tokio::time::sleep(Duration::from_millis(wait as u64)).await;
                        }
                        r
                    })
                })
                .collect();
            runners = Vec::with_capacity(handles.len());
            for h in handles {
                runners.push(h.await.expect("participant task panicked"));
            }
            origin.elapsed().as_millis() as i64
        }
    };
    Ok(SimReport {
        participants: runners.into_iter().map(|r| r.outcome).collect(),
        requests: requests.load(Ordering::Relaxed),
        elapsed_ms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Behaviour {
    Expert,
    Neighbour,
    Lost,
    Slow,
    Idle,
}

const BEHAVIOURS: [Behaviour; 5] = [
    Behaviour::Expert,
    Behaviour::Neighbour,
    Behaviour::Lost,
    Behaviour::Expert,
    Behaviour::Slow,
];

fn random_query(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=4);
    (0..n).map(|_| *VOCAB.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

/// Scripts for `n` participants on the built-in study plan. Behaviour rotates
/// per participant and task so every run mixes solved, expired and late tasks.
pub fn demo_scripts(n: usize, seed: u64) -> Vec<SimScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|p| {
            let tasks = (0..TEXTUAL_HINTS.len())
                .map(|t| {
                    let behaviour = if (p + t) % 11 == 10 {
                        Behaviour::Idle
                    } else {
                        BEHAVIOURS[(p * 2 + t) % BEHAVIOURS.len()]
                    };
                    let delay = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| rng.random_range(lo..=hi);
                    match behaviour {
                        Behaviour::Expert => vec![
                            SimAction {
                                query: random_query(&mut rng),
                                pick_rank: rng.random_range(1..=3),
                                delay_ms: delay(&mut rng, 10_000, 40_000),
                            },
                            SimAction {
                                query: TEXTUAL_HINTS[t].to_string(),
                                pick_rank: 1,
                                delay_ms: delay(&mut rng, 5_000, 30_000),
                            },
                        ],
                        Behaviour::Neighbour => vec![
                            SimAction {
                                query: NEIGHBOUR_CAPTIONS[t][rng.random_range(0..2)].to_string(),
                                pick_rank: 1,
                                delay_ms: delay(&mut rng, 15_000, 45_000),
                            },
                            SimAction {
                                query: TEXTUAL_HINTS[t].to_string(),
                                pick_rank: 1,
                                delay_ms: delay(&mut rng, 20_000, 60_000),
                            },
                        ],
                        Behaviour::Lost => (0..3)
                            .map(|_| SimAction {
                                query: random_query(&mut rng),
                                pick_rank: rng.random_range(1..=25),
                                delay_ms: delay(&mut rng, 20_000, 50_000),
                            })
                            .collect(),
                        Behaviour::Slow => vec![SimAction {
                            query: TEXTUAL_HINTS[t].to_string(),
                            pick_rank: 1,
                            delay_ms: delay(&mut rng, 181_000, 240_000),
                        }],
                        Behaviour::Idle => Vec::new(),
                    }
                })
                .collect();
            SimScript {
                participant_id: format!("sim-{p:03}"),
                tasks,
                stop: if p % 4 == 3 {
                    StopPolicy::FixedActions
                } else {
                    StopPolicy::UntilCorrect
                },
            }
        })
        .collect()
}

/// Result of a simulation against an in-process server.
#[derive(Debug, Clone)]
pub struct InProcessRun {
    pub sim: SimReport,
    /// Event log of the default evaluation, as JSON Lines.
    pub log: String,
    /// Report as served by the admin endpoint at the end of the run.
    pub live_report: ResultsReport,
}

#[derive(Debug, Error)]
pub enum InProcessError {
    #[error(transparent)]
    Config(#[from] kisbench_server::ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("admin request failed: {0}")]
    Admin(String),
}

/// Starts a server from `cfg` on an ephemeral port and runs `scripts` against
/// it. When `cfg` lists no backends the server's own retrieval endpoint is
/// used. A virtual clock is shared with the server; otherwise both use the
/// system clock.
pub async fn simulate_in_process(
    mut cfg: ServerConfig,
    scripts: &[SimScript],
    virtual_start_ms: Option<i64>,
    max_requests_per_sec: Option<f64>,
) -> Result<InProcessRun, InProcessError> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    if cfg.backends.is_empty() {
        cfg.backends = vec![format!("{base}/retrieval")];
    }
    let virtual_clock = virtual_start_ms.map(VirtualClock::new);
    let clock: Arc<dyn Clock> = match &virtual_clock {
        Some(v) => Arc::new(v.clone()),
        None => Arc::new(SystemClock),
    };
    let (state, app) = build_app(&cfg, clock)?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    // The background sweep would read the clock on its own schedule, so it
    // stays off when time is virtual.
    let sweep = if virtual_clock.is_some() { 0 } else { cfg.sweep_interval_ms };
    let server = tokio::spawn(serve(listener, state, app, sweep, async {
        let _ = rx.await;
    }));
    let mode = match virtual_clock {
        Some(v) => ClockMode::Virtual(v),
        None => ClockMode::Real { max_requests_per_sec },
    };
    let sim = run_simulation(&base, scripts, mode).await;
    let result = match sim {
        Ok(sim) => {
            let client = reqwest::Client::new();
            let admin = |path: String| {
                client
                    .get(format!("{base}/api/v1/admin/evaluations/{DEFAULT_EVALUATION}/{path}"))
                    .header(ADMIN_HEADER, &cfg.admin_token)
                    .send()
            };
            let admin_err = |e: reqwest::Error| InProcessError::Admin(e.to_string());
            let log = admin("log".into()).await.map_err(admin_err)?.text().await.map_err(admin_err)?;
            let live_report = admin("report".into())
                .await
                .map_err(admin_err)?
                .json()
                .await
                .map_err(admin_err)?;
            Ok(InProcessRun { sim, log, live_report })
        }
        Err(e) => Err(e.into()),
    };
    let _ = tx.send(());
    let _ = server.await;
    result
}
