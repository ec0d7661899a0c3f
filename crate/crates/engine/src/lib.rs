//! Runtime for batch-aware reflection: model backends, tools, the Actor and
//! Reflector, the per-batch driver, and the evaluation harness.

pub mod actor;
pub mod backend;
pub mod dataset;
pub mod harness;
pub mod lab;
pub mod live;
pub mod orchestrator;
pub mod reflector;
pub mod report;
pub mod scripted;
pub mod tools;

pub use dataset::{load_dataset, Schema};
pub use harness::{run_eval, EvalError, EvalOptions};
pub use report::{compare_reports, EvalReport};
pub use backend::{BackendError, ChatBackend, SharedLedger};
pub use orchestrator::{Method, Pipeline, RunConfig, RunError};
pub use scripted::ScriptedBackend;
