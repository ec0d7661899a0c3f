//! The act/reflect loop for one batch as a pure state machine. The driver
//! asks for actor jobs, runs them however it likes, submits the outputs,
//! asks for the reflective context, submits the verdicts, and repeats until
//! [`RefinementLoop::is_done`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    build_context, validate_batch, ActorOutput, BatchError, ContextError, FinalAnswer, FinalizedReason, Query,
    ReflectionVerdict, ReflectiveContext,
};

/// Round budget when none is configured.
pub const DEFAULT_MAX_ROUNDS: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("max_rounds must be at least 1")]
    BadMaxRounds,
    #[error("expected the {expected} phase, loop is in {actual:?}")]
    WrongPhase { expected: &'static str, actual: Phase },
    #[error("actor result for {0:?}, which is not active")]
    UnexpectedActorResult(String),
    #[error("missing actor result for {0:?}")]
    MissingActorResult(String),
    #[error("{got} verdicts for a context of {expected}")]
    VerdictCount { got: usize, expected: usize },
    #[error("verdict {index} is for {found:?}, expected {expected:?}")]
    VerdictMisaligned {
        index: usize,
        expected: String,
        found: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Act,
    Reflect,
    Done,
}

/// One actor invocation the driver must perform.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorJob<'a> {
    pub index: usize,
    pub query: &'a Query,
    /// `None` on round 1.
    pub critique: Option<&'a str>,
    pub round: u32,
}

/// What happened in one round, for reports and audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    pub acted: Vec<String>,
    pub actor_errors: Vec<String>,
    pub flagged: Vec<String>,
    pub accepted: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RefinementLoop {
    queries: Vec<Query>,
    max_rounds: u32,
    round: u32,
    phase: Phase,
    latest: Vec<Option<ActorOutput>>,
    critiques: Vec<Option<String>>,
    active: Vec<usize>,
    finalized: Vec<Option<FinalAnswer>>,
    trace: Vec<RoundTrace>,
}

/// Stand-in for an item whose actor never produced an answer, so the
/// reflector still sees all N positions.
fn placeholder(query: &Query, round: u32, error: &str) -> ActorOutput {
    ActorOutput {
        query_id: query.id.clone(),
        answer: String::new(),
        rationale: format!("(no answer: {error})"),
        trajectory: Vec::new(),
        usage: Default::default(),
        round,
        verbalized_confidence: None,
    }
}

impl RefinementLoop {
    pub fn new(queries: Vec<Query>, max_rounds: u32) -> Result<Self, LoopError> {
        validate_batch(&queries)?;
        if max_rounds == 0 {
            return Err(LoopError::BadMaxRounds);
        }
        let n = queries.len();
        Ok(Self {
            queries,
            max_rounds,
            round: 1,
            phase: Phase::Act,
            latest: alloc::vec![None; n],
            critiques: alloc::vec![None; n],
            active: (0..n).collect(),
            finalized: alloc::vec![None; n],
            trace: Vec::new(),
        })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Indices still under refinement.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn trace(&self) -> &[RoundTrace] {
        &self.trace
    }

    fn expect(&self, phase: Phase, name: &'static str) -> Result<(), LoopError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(LoopError::WrongPhase {
                expected: name,
                actual: self.phase,
            })
        }
    }

    /// Jobs for the active set, in batch order.
    pub fn actor_jobs(&self) -> Result<Vec<ActorJob<'_>>, LoopError> {
        self.expect(Phase::Act, "act")?;
        Ok(self
            .active
            .iter()
            .map(|&i| ActorJob {
                index: i,
                query: &self.queries[i],
                critique: self.critiques[i].as_deref(),
                round: self.round,
            })
            .collect())
    }

    /// Accept one result per active item. A failed item finalizes at once
    /// with its previous answer (if any) and confidence 0.
    pub fn submit_actor_results(
        &mut self,
        results: Vec<(usize, Result<ActorOutput, String>)>,
    ) -> Result<(), LoopError> {
        self.expect(Phase::Act, "act")?;
        let mut slots: Vec<Option<Result<ActorOutput, String>>> = alloc::vec![None; self.queries.len()];
        for (i, r) in results {
            if !self.active.contains(&i) || slots[i].is_some() {
                let id = self.queries.get(i).map_or_else(|| format!("#{i}"), |q| q.id.clone());
                return Err(LoopError::UnexpectedActorResult(id));
            }
            slots[i] = Some(r);
        }
        if let Some(&i) = self.active.iter().find(|&&i| slots[i].is_none()) {
            return Err(LoopError::MissingActorResult(self.queries[i].id.clone()));
        }

        let mut trace = RoundTrace {
            round: self.round,
            acted: Vec::new(),
            actor_errors: Vec::new(),
            flagged: Vec::new(),
            accepted: Vec::new(),
        };
        let mut still_active = Vec::new();
        for &i in &self.active {
            let id = self.queries[i].id.clone();
            trace.acted.push(id.clone());
            match slots[i].take().expect("checked above") {
                Ok(mut out) => {
                    if out.query_id != id {
                        return Err(ContextError::Misaligned {
                            index: i,
                            expected: id,
                            found: out.query_id,
                        }
                        .into());
                    }
                    out.round = self.round;
                    self.latest[i] = Some(out);
                    still_active.push(i);
                }
                Err(error) => {
                    let answer = self.latest[i].as_ref().map(|o| o.answer.clone()).unwrap_or_default();
                    if self.latest[i].is_none() {
                        self.latest[i] = Some(placeholder(&self.queries[i], self.round, &error));
                    }
                    log::warn!("actor failed on {id} in round {}: {error}", self.round);
                    trace.actor_errors.push(id.clone());
                    self.finalized[i] = Some(FinalAnswer {
                        query_id: id,
                        answer,
                        confidence: 0.0,
                        rounds_used: self.round,
                        finalized_reason: FinalizedReason::ActorError,
                        error: Some(error),
                    });
                }
            }
        }
        self.active = still_active;
        self.trace.push(trace);
        self.phase = if self.active.is_empty() { Phase::Done } else { Phase::Reflect };
        Ok(())
    }

    /// Context over all N items with their latest outputs, finalized or not.
    pub fn context(&self) -> Result<ReflectiveContext, LoopError> {
        self.expect(Phase::Reflect, "reflect")?;
        let outputs: Vec<ActorOutput> = self
            .latest
            .iter()
            .zip(&self.queries)
            .map(|(o, q)| o.clone().unwrap_or_else(|| placeholder(q, self.round, "not run")))
            .collect();
        Ok(build_context(&self.queries, &outputs, self.round)?)
    }

    /// Apply one verdict per batch position. Only active items react;
    /// flags on finalized items are ignored.
    pub fn submit_verdicts(&mut self, verdicts: Vec<ReflectionVerdict>) -> Result<(), LoopError> {
        self.expect(Phase::Reflect, "reflect")?;
        if verdicts.len() != self.queries.len() {
            return Err(LoopError::VerdictCount {
                got: verdicts.len(),
                expected: self.queries.len(),
            });
        }
        for (index, (v, q)) in verdicts.iter().zip(&self.queries).enumerate() {
            if v.query_id != q.id {
                return Err(LoopError::VerdictMisaligned {
                    index,
                    expected: q.id.clone(),
                    found: v.query_id.clone(),
                });
            }
        }
        let last_round = self.round >= self.max_rounds;
        let trace = self.trace.last_mut().expect("act phase always pushes a trace");
        let mut next = Vec::new();
        for &i in &self.active {
            let v = &verdicts[i];
            let out = self.latest[i].as_ref().expect("active items have output");
            let reason = if !v.reevaluate {
                trace.accepted.push(v.query_id.clone());
                FinalizedReason::Accepted
            } else {
                trace.flagged.push(v.query_id.clone());
                if !last_round {
                    self.critiques[i] = Some(String::from(v.feedback()));
                    next.push(i);
                    continue;
                }
                FinalizedReason::RoundCap
            };
            self.finalized[i] = Some(FinalAnswer {
                query_id: v.query_id.clone(),
                answer: out.answer.clone(),
                confidence: v.confidence,
                rounds_used: self.round,
                finalized_reason: reason,
                error: None,
            });
        }
        self.active = next;
        if self.active.is_empty() {
            self.phase = Phase::Done;
        } else {
            self.round += 1;
            self.phase = Phase::Act;
        }
        Ok(())
    }

    /// Answers in batch order. Errors unless the loop has finished.
    pub fn finish(self) -> Result<Vec<FinalAnswer>, LoopError> {
        self.expect(Phase::Done, "done")?;
        Ok(self
            .finalized
            .into_iter()
            .map(|f| f.expect("every item finalizes before Done"))
            .collect())
    }

    pub fn final_answers(&self) -> Vec<Option<&FinalAnswer>> {
        self.finalized.iter().map(Option::as_ref).collect()
    }

    pub fn latest_output(&self, index: usize) -> Option<&ActorOutput> {
        self.latest.get(index).and_then(Option::as_ref)
    }
}
