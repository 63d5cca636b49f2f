//! Participant sessions, credential pool, backend routing and the task
//! lifecycle. State lives in one append-only event log per evaluation; the
//! same reducer applies live events and replays persisted ones.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hmac::{Hmac, Mac};
use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::analytics::{ReportBuilder, ResultsReport};
use crate::clock::Clock;
use crate::domain::{validate_plan, EvaluationPlan, HintKind, HintPayload, Violation};
use crate::events::{parse_log, to_jsonl, EndReason, Event, LogParseError, LogRecord};
use crate::judge::{Bucket, LogEntry, RejectReason, Submission, SubmissionError, TaskState, TaskStatus};

pub const DEFAULT_EVALUATION: &str = "default";
pub const DEFAULT_SESSION_TTL_MS: i64 = 6 * 60 * 60 * 1000;
const PLAN_FILE: &str = "plan.json";
const LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub username: String,
    pub secret: String,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown or expired session token")]
    Unauthorized,
    #[error("task is not accepting submissions")]
    TaskClosed,
    #[error("submission arrived after the task deadline")]
    DeadlineExceeded,
    #[error("credential pool exhausted")]
    CapacityExceeded,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("no retrieval backends registered")]
    NoBackends,
    #[error("invalid evaluation plan: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<Violation>),
    #[error("corrupt event log for {evaluation}: {source}")]
    CorruptLog {
        evaluation: String,
        #[source]
        source: LogParseError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineConfig {
    pub credentials: Vec<Credential>,
    pub backends: Vec<String>,
    #[serde(default = "default_ttl")]
    pub session_ttl_ms: i64,
    pub completion_key: String,
    /// Redirect shown after the last task; `{code}` is replaced by the completion code.
    #[serde(default)]
    pub redirect_url: Option<String>,
    /// Seeds credential draws. Without it draws come from OS entropy.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Where evaluation logs live. `None` keeps everything in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

fn default_ttl() -> i64 {
    DEFAULT_SESSION_TTL_MS
}

impl EngineConfig {
    pub fn new(credentials: Vec<Credential>, backends: Vec<String>, completion_key: impl Into<String>) -> Self {
        Self {
            credentials,
            backends,
            session_ttl_ms: DEFAULT_SESSION_TTL_MS,
            completion_key: completion_key.into(),
            redirect_url: None,
            seed: None,
            data_dir: None,
        }
    }
}

/// Round-robin cursor over retrieval backends.
#[derive(Debug, Clone)]
pub struct BackendRegistry {
    backends: Vec<String>,
    next: usize,
}

impl BackendRegistry {
    pub fn new(backends: Vec<String>) -> Self {
        Self { backends, next: 0 }
    }

    pub fn assign(&mut self) -> Result<usize, EngineError> {
        if self.backends.is_empty() {
            return Err(EngineError::NoBackends);
        }
        let i = self.next;
        self.next = (self.next + 1) % self.backends.len();
        Ok(i)
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.backends.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.backends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Assignment {
    credential: Credential,
    backend_index: usize,
    evaluation_id: String,
}

struct Pool {
    available: Vec<Credential>,
    assigned: HashMap<String, Assignment>,
    rng: ChaCha8Rng,
}

impl Pool {
    fn draw(&mut self) -> Result<Credential, EngineError> {
        if self.available.is_empty() {
            return Err(EngineError::CapacityExceeded);
        }
        let i = self.rng.random_range(0..self.available.len());
        Ok(self.available.remove(i))
    }

    fn take(&mut self, username: &str) -> Credential {
        match self.available.iter().position(|c| c.username == username) {
            Some(i) => self.available.remove(i),
            None => {
                log::warn!("credential {username} from the log is not in the configured pool");
                Credential {
                    username: username.to_string(),
                    secret: String::new(),
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct SessionEntry {
    participant_id: String,
    evaluation_id: String,
    expires_at_ms: i64,
}

#[derive(Debug, Clone)]
struct Progress {
    condition_index: usize,
    task_index: usize,
    task: TaskState,
}

/// Reducer state of one evaluation.
struct EvalState {
    records: Vec<LogRecord>,
    participants: BTreeMap<String, Progress>,
    arrivals: usize,
    report: ReportBuilder,
    file: Option<File>,
}

impl EvalState {
    fn new(file: Option<File>) -> Self {
        Self {
            records: Vec::new(),
            participants: BTreeMap::new(),
            arrivals: 0,
            report: ReportBuilder::new(),
            file,
        }
    }

    fn apply(&mut self, plan: &EvaluationPlan, rec: &LogRecord) {
        match &rec.event {
            Event::SessionOpened {
                participant_id,
                condition_index,
                resumed,
                ..
            } => {
                if !*resumed {
                    self.arrivals += 1;
                    self.participants.insert(
                        participant_id.clone(),
                        Progress {
                            condition_index: *condition_index,
                            task_index: 0,
                            task: TaskState::pending(plan.task_duration_ms),
                        },
                    );
                }
            }
            Event::TaskStarted { participant_id, .. } => {
                if let Some(p) = self.participants.get_mut(participant_id) {
                    p.task.start(rec.at_ms);
                }
            }
            Event::SubmissionJudged {
                participant_id,
                submitted_video_id,
                time_ms,
                wall_clock_ms,
                bucket,
                distance_ms,
                query_terms,
                ..
            } => {
                if let Some(p) = self.participants.get_mut(participant_id) {
                    let sub = replayed_submission(participant_id, p.task_index, submitted_video_id, *time_ms, *wall_clock_ms, query_terms);
                    p.task.log.push(LogEntry::Judged(
                        sub,
                        crate::judge::Judgment {
                            bucket: *bucket,
                            distance_ms: *distance_ms,
                        },
                    ));
                    if *bucket == Bucket::Correct {
                        p.task.status = TaskStatus::SolvedCorrect;
                    }
                }
            }
            Event::SubmissionRejected {
                participant_id,
                submitted_video_id,
                time_ms,
                wall_clock_ms,
                reason,
                query_terms,
                ..
            } => {
                if let Some(p) = self.participants.get_mut(participant_id) {
                    let sub = replayed_submission(participant_id, p.task_index, submitted_video_id, *time_ms, *wall_clock_ms, query_terms);
                    p.task.log.push(LogEntry::Rejected(sub, *reason));
                }
            }
            Event::TaskEnded { participant_id, .. } => {
                if let Some(p) = self.participants.get_mut(participant_id) {
                    p.task_index += 1;
                    p.task = TaskState::pending(plan.task_duration_ms);
                }
            }
        }
        self.report.observe(rec);
    }

    fn append(&mut self, plan: &EvaluationPlan, at_ms: i64, event: Event) -> Result<(), EngineError> {
        let rec = LogRecord {
            seq: self.records.len() as u64,
            at_ms,
            event,
        };
        if let Some(f) = self.file.as_mut() {
            let mut line = rec.to_line();
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        self.apply(plan, &rec);
        self.records.push(rec);
        Ok(())
    }
}

fn replayed_submission(
    participant_id: &str,
    task_index: usize,
    video_id: &str,
    time_ms: i64,
    wall_clock_ms: i64,
    query_terms: &Option<String>,
) -> Submission {
    Submission {
        session_id: participant_id.to_string(),
        task_id: task_index.to_string(),
        video_id: video_id.to_string(),
        time_ms,
        wall_clock_ms,
        query_terms: query_terms.clone(),
    }
}

struct Evaluation {
    plan: EvaluationPlan,
    state: Mutex<EvalState>,
}

impl Evaluation {
    fn task_context(&self, p: &Progress) -> (String, HintKind) {
        let video = self.plan.videos[p.task_index].video_id.clone();
        let variant = self.plan.conditions[p.condition_index][p.task_index];
        (video, variant)
    }

    fn finished(&self, p: &Progress) -> bool {
        p.task_index >= self.plan.task_count()
    }

    /// Ends the running task if its deadline has passed.
    fn expire_if_overdue(&self, st: &mut EvalState, pid: &str, now: i64) -> Result<bool, EngineError> {
        let p = &st.participants[pid];
        if self.finished(p) || !p.task.is_overdue(now) {
            return Ok(false);
        }
        let (video_id, variant) = self.task_context(p);
        let task_index = p.task_index;
        st.append(
            &self.plan,
            now,
            Event::TaskEnded {
                participant_id: pid.to_string(),
                task_index,
                video_id,
                variant,
                reason: EndReason::Expired,
            },
        )?;
        Ok(true)
    }
}

/// Returned to a participant on `open_session`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub token: String,
    pub participant_id: String,
    pub evaluation_id: String,
    pub credential: Credential,
    pub backend_index: usize,
    pub backend_uri: String,
    pub condition_index: usize,
    pub current_task: usize,
    pub task_count: usize,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum TaskPresentation {
    Active {
        /// 1-based.
        task_ordinal: usize,
        task_count: usize,
        hint: HintPayload,
        remaining_ms: i64,
        duration_ms: i64,
    },
    Finished {
        task_count: usize,
        completion_code: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        redirect_url: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubmitOutcome {
    pub bucket: Bucket,
    /// 1-based ordinal of the task the submission was judged against.
    pub task_ordinal: usize,
    pub task_ended: bool,
    pub finished: bool,
}

pub fn completion_code(key: &str, participant_id: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key.as_bytes()).expect("hmac accepts any key length");
    mac.update(participant_id.as_bytes());
    hex::encode_upper(&mac.finalize().into_bytes()[..8])
}

pub fn verify_completion_code(key: &str, participant_id: &str, code: &str) -> bool {
    completion_code(key, participant_id).eq_ignore_ascii_case(code.trim())
}

fn new_token() -> String {
    hex::encode(rand::rng().random::<[u8; 32]>())
}

pub struct Engine {
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    registry: Mutex<BackendRegistry>,
    pool: Mutex<Pool>,
    sessions: Mutex<HashMap<String, SessionEntry>>,
    evaluations: RwLock<BTreeMap<String, Arc<Evaluation>>>,
}

impl Engine {
    /// Builds an engine, replaying any evaluations found under the data
    /// directory. `default_plan` is registered as [`DEFAULT_EVALUATION`] unless
    /// one is already stored.
    pub fn open(
        config: EngineConfig,
        clock: Arc<dyn Clock>,
        default_plan: Option<EvaluationPlan>,
    ) -> Result<Self, EngineError> {
        let rng = match config.seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_os_rng(),
        };
        let engine = Self {
            registry: Mutex::new(BackendRegistry::new(config.backends.clone())),
            pool: Mutex::new(Pool {
                available: config.credentials.clone(),
                assigned: HashMap::new(),
                rng,
            }),
            sessions: Mutex::new(HashMap::new()),
            evaluations: RwLock::new(BTreeMap::new()),
            clock,
            config,
        };
        if let Some(dir) = engine.evaluations_dir() {
            fs::create_dir_all(&dir)?;
            let mut ids: Vec<String> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().join(PLAN_FILE).is_file())
                .filter_map(|e| e.file_name().into_string().ok())
                .collect();
            ids.sort();
            for id in ids {
                engine.load_evaluation(&id)?;
            }
        }
        if let Some(plan) = default_plan {
            let existing = engine.evaluations.read().get(DEFAULT_EVALUATION).cloned();
            match existing {
                Some(e) if e.plan != plan => {
                    log::warn!("stored default evaluation differs from the configured plan; keeping the stored one");
                }
                Some(_) => {}
                None => engine.insert_evaluation(DEFAULT_EVALUATION.to_string(), plan)?,
            }
        }
        Ok(engine)
    }

    fn evaluations_dir(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("evaluations"))
    }

    fn open_log(&self, id: &str) -> Result<Option<File>, EngineError> {
        match self.evaluations_dir() {
            None => Ok(None),
            Some(dir) => Ok(Some(
                OpenOptions::new().create(true).append(true).open(dir.join(id).join(LOG_FILE))?,
            )),
        }
    }

    fn load_evaluation(&self, id: &str) -> Result<(), EngineError> {
        let dir = self.evaluations_dir().expect("called only with a data dir").join(id);
        let plan = EvaluationPlan::from_json(&fs::read_to_string(dir.join(PLAN_FILE))?).map_err(|e| {
            EngineError::InvalidPlan(vec![Violation {
                path: format!("{id}/{PLAN_FILE}"),
                message: e.to_string(),
            }])
        })?;
        validate_plan(&plan).map_err(EngineError::InvalidPlan)?;
        let log_path = dir.join(LOG_FILE);
        let records = if log_path.exists() {
            parse_log(BufReader::new(File::open(&log_path)?)).map_err(|source| EngineError::CorruptLog {
                evaluation: id.to_string(),
                source,
            })?
        } else {
            Vec::new()
        };
        let mut st = EvalState::new(self.open_log(id)?);
        {
            let mut pool = self.pool.lock();
            let mut registry = self.registry.lock();
            for rec in &records {
                if let Event::SessionOpened {
                    participant_id,
                    credential,
                    backend_index,
                    resumed: false,
                    ..
                } = &rec.event
                {
                    let credential = pool.take(credential);
                    pool.assigned.insert(
                        participant_id.clone(),
                        Assignment {
                            credential,
                            backend_index: *backend_index,
                            evaluation_id: id.to_string(),
                        },
                    );
                    if !registry.is_empty() {
                        registry.next = (backend_index + 1) % registry.len();
                    }
                }
                st.apply(&plan, rec);
            }
        }
        st.records = records;
        self.evaluations.write().insert(
            id.to_string(),
            Arc::new(Evaluation {
                plan,
                state: Mutex::new(st),
            }),
        );
        Ok(())
    }

    fn insert_evaluation(&self, id: String, plan: EvaluationPlan) -> Result<(), EngineError> {
        validate_plan(&plan).map_err(EngineError::InvalidPlan)?;
        if let Some(dir) = self.evaluations_dir() {
            let d = dir.join(&id);
            fs::create_dir_all(&d)?;
            fs::write(d.join(PLAN_FILE), plan.to_json())?;
        }
        let st = EvalState::new(self.open_log(&id)?);
        self.evaluations.write().insert(
            id.clone(),
            Arc::new(Evaluation {
                plan,
                state: Mutex::new(st),
            }),
        );
        Ok(())
    }

    /// Registers a new evaluation and returns its id.
    pub fn create_evaluation(&self, plan: EvaluationPlan) -> Result<String, EngineError> {
        validate_plan(&plan).map_err(EngineError::InvalidPlan)?;
        let id = {
            let evals = self.evaluations.read();
            (1..).map(|n| format!("eval-{n}")).find(|id| !evals.contains_key(id)).expect("unbounded")
        };
        self.insert_evaluation(id.clone(), plan)?;
        Ok(id)
    }

    fn evaluation(&self, id: &str) -> Result<Arc<Evaluation>, EngineError> {
        self.evaluations
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::NotFound(format!("evaluation {id}")))
    }

    pub fn evaluation_ids(&self) -> Vec<String> {
        self.evaluations.read().keys().cloned().collect()
    }

    pub fn plan(&self, id: &str) -> Result<EvaluationPlan, EngineError> {
        Ok(self.evaluation(id)?.plan.clone())
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    pub fn backend_uri(&self, index: usize) -> Option<String> {
        self.registry.lock().get(index).map(str::to_string)
    }

    /// Opens (or resumes) a participant session. A participant stays bound
    /// to the evaluation, credential and backend of their first session.
    pub fn open_session(&self, participant_id: &str, evaluation_id: Option<&str>) -> Result<Session, EngineError> {
        let participant_id = participant_id.trim();
        if participant_id.is_empty() {
            return Err(EngineError::NotFound("participant id is empty".into()));
        }
        let mut pool = self.pool.lock();
        let (assignment, resumed) = match pool.assigned.get(participant_id) {
            Some(a) => (a.clone(), true),
            None => {
                let eval_id = evaluation_id.unwrap_or(DEFAULT_EVALUATION).to_string();
                self.evaluation(&eval_id)?;
                let mut registry = self.registry.lock();
                if registry.is_empty() {
                    return Err(EngineError::NoBackends);
                }
                let credential = pool.draw()?;
                let backend_index = registry.assign()?;
                (
                    Assignment {
                        credential,
                        backend_index,
                        evaluation_id: eval_id,
                    },
                    false,
                )
            }
        };
        if resumed && evaluation_id.is_some_and(|e| e != assignment.evaluation_id) {
            log::info!(
                "participant {participant_id} asked for {} but is bound to {}",
                evaluation_id.unwrap_or_default(),
                assignment.evaluation_id
            );
        }
        let eval = self.evaluation(&assignment.evaluation_id)?;
        let now = self.clock.now_ms();
        let (condition_index, current_task) = {
            let mut st = eval.state.lock();
            let condition_index = match st.participants.get(participant_id) {
                Some(p) => p.condition_index,
                None => st.arrivals % eval.plan.condition_count(),
            };
            st.append(
                &eval.plan,
                now,
                Event::SessionOpened {
                    participant_id: participant_id.to_string(),
                    credential: assignment.credential.username.clone(),
                    backend_index: assignment.backend_index,
                    condition_index,
                    resumed,
                },
            )?;
            (condition_index, st.participants[participant_id].task_index)
        };
        if !resumed {
            pool.assigned.insert(participant_id.to_string(), assignment.clone());
        }
        drop(pool);

        let token = new_token();
        {
            let mut sessions = self.sessions.lock();
            sessions.retain(|_, s| s.participant_id != participant_id);
            sessions.insert(
                token.clone(),
                SessionEntry {
                    participant_id: participant_id.to_string(),
                    evaluation_id: assignment.evaluation_id.clone(),
                    expires_at_ms: now + self.config.session_ttl_ms,
                },
            );
        }
        Ok(Session {
            token,
            participant_id: participant_id.to_string(),
            evaluation_id: assignment.evaluation_id,
            backend_uri: self.backend_uri(assignment.backend_index).unwrap_or_default(),
            credential: assignment.credential,
            backend_index: assignment.backend_index,
            condition_index,
            current_task: current_task.min(eval.plan.task_count()),
            task_count: eval.plan.task_count(),
            resumed,
        })
    }

    /// Resolves a token and slides its expiry forward.
    fn resolve(&self, token: &str) -> Result<SessionEntry, EngineError> {
        let now = self.clock.now_ms();
        let mut sessions = self.sessions.lock();
        match sessions.get_mut(token) {
            Some(s) if s.expires_at_ms > now => {
                s.expires_at_ms = now + self.config.session_ttl_ms;
                Ok(s.clone())
            }
            Some(_) => {
                sessions.remove(token);
                Err(EngineError::Unauthorized)
            }
            None => Err(EngineError::Unauthorized),
        }
    }

    pub fn participant_of(&self, token: &str) -> Result<String, EngineError> {
        Ok(self.resolve(token)?.participant_id)
    }

    /// Returns the hint for the participant's current task, starting its
    /// clock on first fetch. Overdue tasks are closed first.
    pub fn current_task(&self, token: &str) -> Result<TaskPresentation, EngineError> {
        let s = self.resolve(token)?;
        let eval = self.evaluation(&s.evaluation_id)?;
        let now = self.clock.now_ms();
        let mut st = eval.state.lock();
        let pid = s.participant_id.as_str();
        eval.expire_if_overdue(&mut st, pid, now)?;
        let p = st.participants[pid].clone();
        if eval.finished(&p) {
            let code = completion_code(&self.config.completion_key, pid);
            return Ok(TaskPresentation::Finished {
                task_count: eval.plan.task_count(),
                redirect_url: self.config.redirect_url.as_ref().map(|u| u.replace("{code}", &code)),
                completion_code: code,
            });
        }
        let (video_id, variant) = eval.task_context(&p);
        if p.task.status == TaskStatus::Pending {
            st.append(
                &eval.plan,
                now,
                Event::TaskStarted {
                    participant_id: pid.to_string(),
                    task_index: p.task_index,
                    video_id: video_id.clone(),
                    variant,
                    deadline_ms: now + eval.plan.task_duration_ms,
                },
            )?;
        }
        let task = &st.participants[pid].task;
        let hint = match eval.plan.hint(&video_id, variant) {
            Some(HintPayload::Media { uri, .. }) => HintPayload::Media {
                uri: uri.clone(),
                pipeline: None,
            },
            Some(h) => h.clone(),
            None => return Err(EngineError::NotFound(format!("hint for task {}", p.task_index + 1))),
        };
        Ok(TaskPresentation::Active {
            task_ordinal: p.task_index + 1,
            task_count: eval.plan.task_count(),
            hint,
            remaining_ms: task.remaining_ms(now),
            duration_ms: eval.plan.task_duration_ms,
        })
    }

    pub fn submit(
        &self,
        token: &str,
        video_id: &str,
        time_ms: i64,
        query_terms: Option<String>,
    ) -> Result<SubmitOutcome, EngineError> {
        let s = self.resolve(token)?;
        let eval = self.evaluation(&s.evaluation_id)?;
        let now = self.clock.now_ms();
        let mut st = eval.state.lock();
        let pid = s.participant_id.as_str();
        let p = st.participants[pid].clone();
        if eval.finished(&p) || p.task.status != TaskStatus::Running {
            return Err(EngineError::TaskClosed);
        }
        let (target_video, variant) = eval.task_context(&p);
        let target = &eval.plan.videos[p.task_index];
        let wall_clock_ms = p.task.elapsed_ms(now);
        let sub = Submission {
            session_id: pid.to_string(),
            task_id: p.task_index.to_string(),
            video_id: video_id.to_string(),
            time_ms,
            wall_clock_ms,
            query_terms: query_terms.clone(),
        };
        let mut probe = p.task.clone();
        let ended = |reason| Event::TaskEnded {
            participant_id: pid.to_string(),
            task_index: p.task_index,
            video_id: target_video.clone(),
            variant,
            reason,
        };
        match probe.apply_submission(sub, target, &eval.plan.judge) {
            Ok(j) => {
                st.append(
                    &eval.plan,
                    now,
                    Event::SubmissionJudged {
                        participant_id: pid.to_string(),
                        task_index: p.task_index,
                        video_id: target_video.clone(),
                        variant,
                        submitted_video_id: video_id.to_string(),
                        time_ms,
                        wall_clock_ms,
                        bucket: j.bucket,
                        distance_ms: j.distance_ms,
                        query_terms,
                    },
                )?;
                let task_ended = j.bucket == Bucket::Correct;
                if task_ended {
                    st.append(&eval.plan, now, ended(EndReason::SolvedCorrect))?;
                }
                Ok(SubmitOutcome {
                    bucket: j.bucket,
                    task_ordinal: p.task_index + 1,
                    task_ended,
                    finished: eval.finished(&st.participants[pid]),
                })
            }
            Err(SubmissionError::DeadlineExceeded) => {
                st.append(
                    &eval.plan,
                    now,
                    Event::SubmissionRejected {
                        participant_id: pid.to_string(),
                        task_index: p.task_index,
                        video_id: target_video.clone(),
                        variant,
                        submitted_video_id: video_id.to_string(),
                        time_ms,
                        wall_clock_ms,
                        reason: RejectReason::DeadlineExceeded,
                        query_terms,
                    },
                )?;
                st.append(&eval.plan, now, ended(EndReason::Expired))?;
                Err(EngineError::DeadlineExceeded)
            }
            Err(SubmissionError::TaskClosed) => Err(EngineError::TaskClosed),
        }
    }

    /// Closes every running task whose deadline has passed. Returns how many.
    pub fn sweep_expired(&self) -> Result<usize, EngineError> {
        let evals: Vec<_> = self.evaluations.read().values().cloned().collect();
        let now = self.clock.now_ms();
        let mut n = 0;
        for eval in evals {
            let mut st = eval.state.lock();
            let pids: Vec<String> = st.participants.keys().cloned().collect();
            for pid in pids {
                if eval.expire_if_overdue(&mut st, &pid, now)? {
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    pub fn export_log(&self, evaluation_id: &str) -> Result<Vec<LogRecord>, EngineError> {
        Ok(self.evaluation(evaluation_id)?.state.lock().records.clone())
    }

    pub fn export_log_jsonl(&self, evaluation_id: &str) -> Result<String, EngineError> {
        Ok(to_jsonl(&self.export_log(evaluation_id)?))
    }

    /// Live report, maintained incrementally as events are appended.
    pub fn report(&self, evaluation_id: &str) -> Result<ResultsReport, EngineError> {
        Ok(self.evaluation(evaluation_id)?.state.lock().report.report())
    }

    /// Per-backend participant counts.
    pub fn backend_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.registry.lock().len()];
        for a in self.pool.lock().assigned.values() {
            if let Some(c) = counts.get_mut(a.backend_index) {
                *c += 1;
            }
        }
        counts
    }

    /// Credential username held by a participant, if any.
    pub fn credential_of(&self, participant_id: &str) -> Option<String> {
        self.pool
            .lock()
            .assigned
            .get(participant_id)
            .map(|a| a.credential.username.clone())
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.config.data_dir.as_deref()
    }

    pub fn evaluation_exists(&self, id: &str) -> bool {
        self.evaluations.read().contains_key(id)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("evaluations", &self.evaluation_ids())
            .finish_non_exhaustive()
    }
}
