//! Audit harness for unlearning evaluations on reasoning-formatted language
//! models.
//!
//! The crate covers the whole audit path: a synthetic forget corpus, the
//! `<think>`/`</think>` trace parser with its fallback conventions, probe and
//! prefill construction, the parser-split metrics, author-clustered bootstrap
//! statistics, a model backend contract with an HTTP wire client and server,
//! a deterministic simulator backend, teacher-forced continuation scoring,
//! and the audit runner with JSONL persistence and report rendering.

pub mod backend;
pub mod config;
pub mod error;
pub mod forget_set;
pub mod metrics;
pub mod probe_builder;
pub mod record;
pub mod report;
pub mod retain_set;
pub mod runner;
pub mod sim_model;
pub mod stats;
pub mod teacher_forced;
pub mod text;
pub mod trace_parser;

pub use backend::{Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResponse, TokenScore};
pub use config::{AuditConfig, BootstrapParams, TemplateSet};
pub use error::{AuditError, Result};
pub use forget_set::{AuthorRecord, ForgetSet, QAProbe};
pub use metrics::{Anatomy, GapEstimate, ProbeKind, ProbeOutcome};
pub use probe_builder::{CanaryProbe, ChatTemplate, PrefillArm};
pub use record::ResultRecord;
pub use runner::{run_audit, AuditSummary};
pub use sim_model::{RegimeConfig, SimBackend};
pub use stats::{ClusteredSample, ConfidenceInterval, PairedInterval};
pub use teacher_forced::TFResult;
pub use trace_parser::{ParsedGeneration, ParserConvention};
