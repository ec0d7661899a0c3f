//! Drives the refinement state machine end to end with random reflector
//! behaviour and checks the loop's contract from the outside.

use bot_core::parse::parse_verdicts;
use bot_core::refine::{LoopError, Phase, RefinementLoop};
use bot_core::{ActorOutput, FinalizedReason, Query, ReflectionVerdict, TokenUsage};
use proptest::prelude::*;

fn queries(n: usize) -> Vec<Query> {
    (0..n).map(|i| Query::new(format!("q{i}"), format!("question {i}"))).collect()
}

fn output(q: &Query, round: u32) -> ActorOutput {
    ActorOutput {
        query_id: q.id.clone(),
        answer: format!("{}@{round}", q.id),
        rationale: String::new(),
        trajectory: vec![],
        usage: TokenUsage::new(1, 1),
        round,
        verbalized_confidence: None,
    }
}

/// Per-round reflector text in the wire format, for `n` items.
fn reflector_text(flags: &[bool], confidences: &[f64]) -> String {
    let entries: Vec<String> = flags
        .iter()
        .zip(confidences)
        .map(|(f, c)| {
            format!(r#"{{"trigger_reevaluation": {f}, "confidence_score": {c}, "summary_comment": "s", "suggestions": "try again"}}"#)
        })
        .collect();
    format!("Here is my assessment:\n[{}]\n", entries.join(", "))
}

#[derive(Debug)]
struct Scenario {
    n: usize,
    max_rounds: u32,
    /// flags[round][item]
    flags: Vec<Vec<bool>>,
    confidences: Vec<Vec<f64>>,
    /// actor failure at (round, item)
    failures: Vec<(u32, usize)>,
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (1usize..7, 1u32..6).prop_flat_map(|(n, t)| {
        (
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), t as usize),
            proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, n), t as usize),
            proptest::collection::vec((1..=t, 0..n), 0..3),
        )
            .prop_map(move |(flags, confidences, failures)| Scenario {
                n,
                max_rounds: t,
                flags,
                confidences,
                failures,
            })
    })
}

proptest! {
    #[test]
    fn loop_contract(s in scenario()) {
        let qs = queries(s.n);
        let mut lp = RefinementLoop::new(qs.clone(), s.max_rounds).unwrap();
        let mut calls = vec![0u32; s.n];
        let mut contexts = 0;
        while !lp.is_done() {
            let round = lp.round();
            prop_assert!(round <= s.max_rounds);
            let jobs: Vec<(usize, bool)> = lp.actor_jobs().unwrap().iter().map(|j| (j.index, j.critique.is_some())).collect();
            let mut results = Vec::new();
            for (i, has_critique) in jobs {
                // a critique exists exactly from round 2 on
                prop_assert_eq!(has_critique, round > 1);
                prop_assert!(lp.final_answers()[i].is_none());
                calls[i] += 1;
                let r = if s.failures.contains(&(round, i)) { Err("boom".to_string()) } else { Ok(output(&qs[i], round)) };
                results.push((i, r));
            }
            lp.submit_actor_results(results).unwrap();
            if lp.phase() == Phase::Done {
                break;
            }
            let ctx = lp.context().unwrap();
            // the reflector always sees the whole batch
            prop_assert_eq!(ctx.entries.len(), s.n);
            contexts += 1;
            let r = (round - 1) as usize;
            let text = reflector_text(&s.flags[r], &s.confidences[r]);
            let verdicts: Vec<ReflectionVerdict> = parse_verdicts(&text, s.n)
                .unwrap()
                .into_iter()
                .zip(&qs)
                .map(|(v, q)| v.for_query(q.id.clone()))
                .collect();
            lp.submit_verdicts(verdicts).unwrap();
        }
        prop_assert!(contexts as u32 <= s.max_rounds);
        let answers = lp.finish().unwrap();
        for (i, a) in answers.iter().enumerate() {
            prop_assert_eq!(&a.query_id, &qs[i].id);
            prop_assert!(a.rounds_used >= 1 && a.rounds_used <= s.max_rounds);
            prop_assert_eq!(calls[i], a.rounds_used);
            let r = (a.rounds_used - 1) as usize;
            match a.finalized_reason {
                FinalizedReason::Accepted => {
                    prop_assert!(!s.flags[r][i]);
                    prop_assert_eq!(a.confidence, s.confidences[r][i]);
                    prop_assert_eq!(&a.answer, &format!("q{i}@{}", a.rounds_used));
                }
                FinalizedReason::RoundCap => {
                    prop_assert_eq!(a.rounds_used, s.max_rounds);
                    prop_assert!(s.flags[r][i]);
                    prop_assert_eq!(a.confidence, s.confidences[r][i]);
                }
                FinalizedReason::ActorError => {
                    prop_assert!(s.failures.contains(&(a.rounds_used, i)));
                    prop_assert_eq!(a.confidence, 0.0);
                    let kept = if a.rounds_used == 1 { String::new() } else { format!("q{i}@{}", a.rounds_used - 1) };
                    prop_assert_eq!(&a.answer, &kept);
                }
            }
        }
    }
}

#[test]
fn phase_misuse_is_rejected() {
    let mut lp = RefinementLoop::new(queries(2), 3).unwrap();
    assert!(matches!(lp.context(), Err(LoopError::WrongPhase { .. })));
    let qs = lp.queries().to_vec();
    assert!(matches!(
        lp.submit_actor_results(vec![(0, Ok(output(&qs[0], 1)))]),
        Err(LoopError::MissingActorResult(id)) if id == "q1"
    ));
    lp.submit_actor_results(vec![(0, Ok(output(&qs[0], 1))), (1, Ok(output(&qs[1], 1)))]).unwrap();
    let short = parse_verdicts(&reflector_text(&[false], &[0.5]), 1).unwrap();
    let v: Vec<ReflectionVerdict> = short.into_iter().map(|v| v.for_query("q0")).collect();
    assert_eq!(lp.submit_verdicts(v), Err(LoopError::VerdictCount { got: 1, expected: 2 }));
    assert!(RefinementLoop::new(queries(2), 0).is_err());
}
