//! Batch-aware reflection: data types, prompt rendering, response
//! parsing, the refinement state machine, metrics, and the theory lab.
//!
//! Nothing here performs IO; the `bot-engine` crate supplies backends,
//! concurrency, file formats and the CLI.

#![no_std]

extern crate alloc;

pub mod batching;
pub mod chat;
pub mod ledger;
pub mod metrics;
pub mod parse;
pub mod prompts;
pub mod refine;
pub mod theory;
pub mod types;

pub use ledger::{Role, TokenLedger, TokenUsage};
pub use types::{
    ActorOutput, Choice, FinalAnswer, FinalizedReason, Query, ReflectionVerdict, ReflectiveContext,
    ToolStep,
};
