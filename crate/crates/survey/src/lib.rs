//! Backend for the expert human survey.
//!
//! Raters consent, receive a deterministic set of own-country tasks, and
//! submit Likert ratings with a best and a worst pick per task. Every
//! accepted session and submission is appended to a JSON-lines log, which is
//! replayed on startup. Admins read progress and quality-control flags.

pub mod assign;
pub mod http;
pub mod service;
pub mod store;
pub mod types;

pub use assign::Quota;
pub use http::{router, serve};
pub use service::{
    CandidateRating, NextTask, ProgressReport, ServiceConfig, ServiceError, StartRequest, SubmitRequest, SurveyService,
};
pub use store::{Ack, LogEvent, Store};
pub use types::{tasks_from_records, GoldCheck, RaterSession, SurveyTask, TaskDefinition, TaskKind};
