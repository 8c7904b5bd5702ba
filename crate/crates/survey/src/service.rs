use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use ecb_core::corpus::{Country, GoldItem, GoldResponse, RatingRecord, YesNo};
use ecb_core::humaneval::{qc_scan, QcConfig, QcKind};
use serde::{Deserialize, Serialize};

use crate::assign::{assign, session_id, Quota};
use crate::store::{Ack, GoldOutcome, LogEvent, Store, Submission};
use crate::types::{RaterSession, SurveyTask, TaskDefinition};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub seed: u64,
    /// Bearer token for admin endpoints; admin access is closed when unset.
    pub admin_token: Option<String>,
    pub quota: Quota,
    pub qc: QcConfig,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ServiceError {
    #[error("consent is required before a session can start")]
    ConsentRequired,
    #[error("rater {0} already has a session")]
    DuplicateSession(String),
    #[error("unknown session {0}")]
    SessionUnknown(String),
    #[error("task {0} is not assigned to this session")]
    UnknownTask(String),
    #[error("task {0} was already submitted")]
    AlreadySubmitted(String),
    #[error("invalid best/worst selection: {0}")]
    InvalidSelection(String),
    #[error("invalid ratings: {0}")]
    InvalidRating(String),
    #[error("task {task} is for {task_country}, rater is from {rater_country}")]
    EmicViolation { task: String, task_country: Country, rater_country: Country },
    #[error("not enough tasks for {0}")]
    InsufficientTasks(String),
    #[error("missing or invalid admin token")]
    Unauthorized,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("invalid task definitions: {0}")]
    InvalidTasks(String),
    #[error("log does not match current seed and tasks: {0}")]
    ReplayMismatch(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::ConsentRequired => "consent_required",
            ServiceError::DuplicateSession(_) => "duplicate_session",
            ServiceError::SessionUnknown(_) => "session_unknown",
            ServiceError::UnknownTask(_) => "unknown_task",
            ServiceError::AlreadySubmitted(_) => "already_submitted",
            ServiceError::InvalidSelection(_) => "invalid_selection",
            ServiceError::InvalidRating(_) => "invalid_rating",
            ServiceError::EmicViolation { .. } => "emic_violation",
            ServiceError::InsufficientTasks(_) => "insufficient_tasks",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::InvalidTasks(_) => "invalid_tasks",
            ServiceError::ReplayMismatch(_) => "replay_mismatch",
            ServiceError::Storage(_) => "storage",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::ConsentRequired | ServiceError::EmicViolation { .. } => 403,
            ServiceError::DuplicateSession(_) | ServiceError::AlreadySubmitted(_) => 409,
            ServiceError::SessionUnknown(_) | ServiceError::UnknownTask(_) => 404,
            ServiceError::InvalidSelection(_) | ServiceError::InvalidRating(_) => 422,
            ServiceError::InsufficientTasks(_) => 409,
            ServiceError::Unauthorized => 401,
            ServiceError::BadRequest(_) => 400,
            ServiceError::InvalidTasks(_) | ServiceError::ReplayMismatch(_) | ServiceError::Storage(_) => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartRequest {
    pub rater_id: String,
    pub country: Country,
    pub consent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRating {
    pub image_id: String,
    pub image_quality: u8,
    pub cultural_representation: u8,
    #[serde(default)]
    pub prompt_alignment: Option<u8>,
    #[serde(default)]
    pub rationale: Option<String>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub task_id: String,
    pub idempotency_key: String,
    pub ratings: Vec<CandidateRating>,
    pub best: String,
    pub worst: String,
    #[serde(default)]
    pub gold_answer: Option<YesNo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Task { task: SurveyTask, remaining: usize },
    Done,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub assigned: usize,
    pub completed: usize,
    pub completion_pct: f64,
}

impl Completion {
    fn add(&mut self, done: bool) {
        self.assigned += 1;
        self.completed += done as usize;
        self.completion_pct = 100.0 * self.completed as f64 / self.assigned as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterProgress {
    pub rater_id: String,
    pub country: Country,
    #[serde(flatten)]
    pub completion: Completion,
    pub flags: Vec<QcKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub sessions: usize,
    pub submissions: usize,
    pub raters: Vec<RaterProgress>,
    pub countries: BTreeMap<Country, Completion>,
    pub models: BTreeMap<String, Completion>,
    /// Number of raters carrying each flag kind.
    pub flags: BTreeMap<String, usize>,
    pub flagged_raters: usize,
    /// Median over submissions of the slowest candidate's elapsed time; 0 when empty.
    pub median_task_ms: f64,
}

#[derive(Debug, Default)]
struct State {
    sessions: BTreeMap<String, RaterSession>,
    by_rater: BTreeMap<String, String>,
    submissions: Vec<Submission>,
    /// (session, idempotency key) -> submission index.
    keys: BTreeMap<(String, String), usize>,
    /// (session, task) -> index of the current version.
    current: BTreeMap<(String, String), usize>,
}

impl State {
    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::Session(s) => {
                self.by_rater.insert(s.rater_id.clone(), s.session_id.clone());
                self.sessions.insert(s.session_id.clone(), s);
            }
            LogEvent::Submission(sub) => {
                let idx = self.submissions.len();
                let task_key = (sub.session_id.clone(), sub.task_id.clone());
                let supersedes = match self.current.get(&task_key) {
                    Some(&prev) => self.submissions[prev].version <= sub.version,
                    None => true,
                };
                if supersedes {
                    self.current.insert(task_key, idx);
                }
                if let Some(s) = self.sessions.get_mut(&sub.session_id) {
                    s.completed.insert(sub.task_id.clone());
                }
                self.keys.insert((sub.session_id.clone(), sub.idempotency_key.clone()), idx);
                self.submissions.push(sub);
            }
        }
    }

    fn current_submissions(&self) -> impl Iterator<Item = &Submission> {
        self.current.values().map(|&i| &self.submissions[i])
    }
}

/// The survey backend. Mutations go through one write lock, which also
/// serializes appends to the log.
pub struct SurveyService {
    config: ServiceConfig,
    tasks: BTreeMap<String, TaskDefinition>,
    defs: Vec<TaskDefinition>,
    state: RwLock<(State, Store)>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl SurveyService {
    /// Builds a service over `store`, replaying `history` and checking each
    /// logged session against a fresh derivation.
    pub fn new(
        config: ServiceConfig,
        defs: Vec<TaskDefinition>,
        store: Store,
        history: Vec<LogEvent>,
    ) -> Result<SurveyService, ServiceError> {
        let mut tasks = BTreeMap::new();
        for d in &defs {
            d.check().map_err(ServiceError::InvalidTasks)?;
            if tasks.insert(d.task_id.clone(), d.clone()).is_some() {
                return Err(ServiceError::InvalidTasks(format!("duplicate task id {}", d.task_id)));
            }
        }
        let svc = SurveyService { config, tasks, defs, state: RwLock::new((State::default(), store)) };
        {
            let mut guard = svc.state.write().expect("fresh lock");
            for event in history {
                if let LogEvent::Session(s) = &event {
                    let fresh = svc.derive_session(&s.rater_id, s.country, s.consent_at)?;
                    if fresh.assigned_tasks != s.assigned_tasks || fresh.model_order != s.model_order {
                        return Err(ServiceError::ReplayMismatch(format!("session of rater {}", s.rater_id)));
                    }
                }
                guard.0.apply(event);
            }
        }
        Ok(svc)
    }

    /// Opens a service backed by the log at `path`, or in memory when `None`.
    pub fn open(config: ServiceConfig, defs: Vec<TaskDefinition>, path: Option<&Path>) -> Result<SurveyService, ServiceError> {
        match path {
            None => SurveyService::new(config, defs, Store::in_memory(), Vec::new()),
            Some(p) => {
                let (store, history) = Store::open(p).map_err(|e| ServiceError::Storage(e.to_string()))?;
                SurveyService::new(config, defs, store, history)
            }
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn derive_session(&self, rater_id: &str, country: Country, consent_at: u64) -> Result<RaterSession, ServiceError> {
        let a = assign(&self.defs, country, self.config.seed, rater_id, self.config.quota).map_err(|s| {
            ServiceError::InsufficientTasks(format!("{country}: {:?} needs {}, pool has {}", s.kind, s.needed, s.available))
        })?;
        Ok(RaterSession {
            session_id: session_id(self.config.seed, rater_id),
            rater_id: rater_id.to_string(),
            country,
            consent_at,
            model_order: a.model_order,
            assigned_tasks: a.tasks,
            completed: Default::default(),
        })
    }

    pub fn start_session(&self, req: StartRequest) -> Result<RaterSession, ServiceError> {
        if !req.consent {
            return Err(ServiceError::ConsentRequired);
        }
        if req.rater_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("rater_id must not be empty".into()));
        }
        if req.country == Country::CountryAgnostic {
            return Err(ServiceError::BadRequest("raters need a country".into()));
        }
        let mut guard = self.state.write().map_err(|_| ServiceError::Storage("lock poisoned".into()))?;
        let (state, store) = &mut *guard;
        if state.by_rater.contains_key(&req.rater_id) {
            return Err(ServiceError::DuplicateSession(req.rater_id));
        }
        let session = self.derive_session(&req.rater_id, req.country, now_ms())?;
        let event = LogEvent::Session(session.clone());
        store.append(&event).map_err(|e| ServiceError::Storage(e.to_string()))?;
        state.apply(event);
        tracing::info!(rater = %session.rater_id, session = %session.session_id, "session started");
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<RaterSession, ServiceError> {
        let guard = self.state.read().map_err(|_| ServiceError::Storage("lock poisoned".into()))?;
        guard.0.sessions.get(id).cloned().ok_or_else(|| ServiceError::SessionUnknown(id.to_string()))
    }

    /// Read-only: repeated calls return the same task until it is submitted.
    pub fn next_task(&self, session_id: &str) -> Result<NextTask, ServiceError> {
        let s = self.session(session_id)?;
        let remaining = s.assigned_tasks.iter().filter(|t| !s.completed.contains(&t.task_id)).count();
        let Some(a) = s.assigned_tasks.iter().find(|t| !s.completed.contains(&t.task_id)) else {
            return Ok(NextTask::Done);
        };
        let d = &self.tasks[&a.task_id];
        let task = SurveyTask {
            task_id: d.task_id.clone(),
            country: d.country,
            kind: d.kind,
            model: d.model.clone(),
            prompt: d.prompt.clone(),
            candidates: d.candidate_ids(),
            presentation_order: a.presentation_order.clone(),
            gold_question: d.gold.as_ref().map(|g| g.question.clone()),
        };
        Ok(NextTask::Task { task, remaining })
    }

    pub fn submit(&self, session_id: &str, req: SubmitRequest) -> Result<Ack, ServiceError> {
        let mut guard = self.state.write().map_err(|_| ServiceError::Storage("lock poisoned".into()))?;
        let (state, store) = &mut *guard;
        let session = state
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::SessionUnknown(session_id.to_string()))?;
        if let Some(&i) = state.keys.get(&(session_id.to_string(), req.idempotency_key.clone())) {
            return Ok(state.submissions[i].ack.clone());
        }
        if req.idempotency_key.is_empty() {
            return Err(ServiceError::BadRequest("idempotency_key must not be empty".into()));
        }
        if !session.assigned_tasks.iter().any(|t| t.task_id == req.task_id) {
            return Err(ServiceError::UnknownTask(req.task_id));
        }
        let def = self.tasks.get(&req.task_id).ok_or_else(|| ServiceError::UnknownTask(req.task_id.clone()))?;
        if def.country != session.country {
            return Err(ServiceError::EmicViolation {
                task: def.task_id.clone(),
                task_country: def.country,
                rater_country: session.country,
            });
        }
        if session.completed.contains(&req.task_id) {
            return Err(ServiceError::AlreadySubmitted(req.task_id));
        }
        let ratings = validate_ratings(def, &req)?;
        let gold = match (&def.gold, req.gold_answer) {
            (None, _) => None,
            (Some(_), None) => return Err(ServiceError::InvalidRating("gold answer required".into())),
            (Some(g), Some(answer)) => Some(GoldOutcome {
                question: g.question.clone(),
                expected: g.expected,
                answer,
                passed: g.expected == answer,
            }),
        };
        let ratings: Vec<RatingRecord> = ratings
            .into_iter()
            .map(|r| RatingRecord {
                rater_id: session.rater_id.clone(),
                task_id: req.task_id.clone(),
                best_of_task: r.image_id == req.best,
                worst_of_task: r.image_id == req.worst,
                image_id: r.image_id,
                image_quality: r.image_quality,
                cultural_representation: r.cultural_representation,
                prompt_alignment: r.prompt_alignment,
                rationale: r.rationale,
                elapsed_ms: r.elapsed_ms,
            })
            .collect();
        let ack = Ack {
            session_id: session_id.to_string(),
            task_id: req.task_id.clone(),
            idempotency_key: req.idempotency_key.clone(),
            sequence: store.len(),
            stored_records: ratings.len(),
            gold_passed: gold.as_ref().map(|g| g.passed),
        };
        let event = LogEvent::Submission(Submission {
            session_id: session_id.to_string(),
            rater_id: session.rater_id.clone(),
            country: session.country,
            task_id: req.task_id,
            model: def.model.clone(),
            kind: def.kind,
            version: 1,
            idempotency_key: req.idempotency_key,
            ratings,
            gold,
            submitted_at: now_ms(),
            ack: ack.clone(),
        });
        store.append(&event).map_err(|e| ServiceError::Storage(e.to_string()))?;
        state.apply(event);
        Ok(ack)
    }

    pub fn check_admin(&self, bearer: Option<&str>) -> Result<(), ServiceError> {
        match (&self.config.admin_token, bearer) {
            (Some(expected), Some(given)) if constant_time_eq(expected.as_bytes(), given.as_bytes()) => Ok(()),
            _ => Err(ServiceError::Unauthorized),
        }
    }

    /// Current rating records, one set per (session, task).
    pub fn ratings(&self) -> Vec<RatingRecord> {
        let guard = self.state.read().expect("lock");
        guard.0.current_submissions().flat_map(|s| s.ratings.iter().cloned()).collect()
    }

    /// Gold items and the raters' answers, in the shape `qc_scan` takes.
    pub fn gold(&self) -> (Vec<GoldItem>, Vec<GoldResponse>) {
        let guard = self.state.read().expect("lock");
        let mut items: BTreeMap<String, GoldItem> = BTreeMap::new();
        let mut responses = Vec::new();
        for s in guard.0.current_submissions() {
            if let Some(g) = &s.gold {
                items.entry(s.task_id.clone()).or_insert_with(|| GoldItem {
                    task_id: s.task_id.clone(),
                    question: g.question.clone(),
                    expected: g.expected,
                });
                responses.push(GoldResponse { rater_id: s.rater_id.clone(), task_id: s.task_id.clone(), answer: g.answer });
            }
        }
        (items.into_values().collect(), responses)
    }

    /// Number of submission events in the log, including superseded ones.
    pub fn submission_count(&self) -> usize {
        self.state.read().expect("lock").0.submissions.len()
    }

    pub fn progress(&self) -> ProgressReport {
        let ratings = self.ratings();
        let (gold_items, gold_responses) = self.gold();
        let flags = qc_scan(&ratings, &gold_items, &gold_responses, &self.config.qc);
        let guard = self.state.read().expect("lock");
        let state = &guard.0;

        let mut report = ProgressReport {
            sessions: state.sessions.len(),
            submissions: state.current.len(),
            ..Default::default()
        };
        for kind in [QcKind::GoldFail, QcKind::IdenticalRationale, QcKind::Speed, QcKind::Inconsistent] {
            let n = flags.iter().filter(|f| f.kind == kind).map(|f| &f.rater_id).collect::<std::collections::BTreeSet<_>>();
            report.flags.insert(kind.as_str().to_string(), n.len());
        }
        report.flagged_raters =
            flags.iter().map(|f| &f.rater_id).collect::<std::collections::BTreeSet<_>>().len();

        for s in state.sessions.values() {
            let mut mine = Completion::default();
            for t in &s.assigned_tasks {
                let done = s.completed.contains(&t.task_id);
                mine.add(done);
                report.countries.entry(s.country).or_default().add(done);
                let model = &self.tasks[&t.task_id].model;
                report.models.entry(model.clone()).or_default().add(done);
            }
            let mut kinds: Vec<QcKind> = flags.iter().filter(|f| f.rater_id == s.rater_id).map(|f| f.kind).collect();
            kinds.dedup();
            report.raters.push(RaterProgress { rater_id: s.rater_id.clone(), country: s.country, completion: mine, flags: kinds });
        }
        report.raters.sort_by(|a, b| a.rater_id.cmp(&b.rater_id));

        let mut times: Vec<u64> = state
            .current_submissions()
            .map(|s| s.ratings.iter().map(|r| r.elapsed_ms).max().unwrap_or(0))
            .collect();
        times.sort_unstable();
        report.median_task_ms = match times.len() {
            0 => 0.0,
            n if n % 2 == 1 => times[n / 2] as f64,
            n => (times[n / 2 - 1] + times[n / 2]) as f64 / 2.0,
        };
        report
    }
}

fn validate_ratings(def: &TaskDefinition, req: &SubmitRequest) -> Result<Vec<CandidateRating>, ServiceError> {
    let mut expected = def.candidate_ids();
    expected.sort();
    let mut given: Vec<String> = req.ratings.iter().map(|r| r.image_id.clone()).collect();
    given.sort();
    if given != expected {
        return Err(ServiceError::InvalidRating(format!(
            "expected one rating for each of {} candidates",
            expected.len()
        )));
    }
    for r in &req.ratings {
        let likert = [Some(r.image_quality), Some(r.cultural_representation), r.prompt_alignment];
        if likert.iter().flatten().any(|v| !(1..=5).contains(v)) {
            return Err(ServiceError::InvalidRating(format!("{}: Likert values must be in 1..=5", r.image_id)));
        }
    }
    if !expected.contains(&req.best) || !expected.contains(&req.worst) {
        return Err(ServiceError::InvalidSelection("best and worst must be candidates of the task".into()));
    }
    if req.best == req.worst {
        return Err(ServiceError::InvalidSelection("best and worst must differ".into()));
    }
    Ok(req.ratings.clone())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
