//! Drives one scripted operator through a full session on the in-process gateway.

use std::collections::BTreeSet;
use std::sync::Arc;

use convoforge_core::transcript::Entry;
use convoforge_core::{GatewayContext, Mode, Session};

use crate::policy::OperatorPolicy;
use crate::HarnessError;

/// Requests per item before the operator gives up on it.
pub const MAX_ATTEMPTS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub session_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub total_time_s: f64,
    pub steps_correct: usize,
    pub turns: usize,
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub record: MetricsRecord,
    /// JSONL transcript.
    pub transcript: String,
}

pub fn run_session(
    ctx: Arc<GatewayContext>,
    policy: &OperatorPolicy,
    mode: Mode,
    session_id: &str,
) -> Result<SessionRun, HarnessError> {
    policy.validate(&ctx.task)?;
    let mut rng = policy.rng();
    let mut s = Session::new(ctx, session_id, mode)?;
    s.start_message();

    for goal in &policy.plan {
        let mut using = BTreeSet::new();
        for item in &goal.items {
            let mark = s.transcript().len();
            let first = policy.request(item, mode, &mut rng).to_owned();
            match mode {
                Mode::Conversation => converse(&mut s, policy, item, first)?,
                Mode::Baseline => command(&mut s, policy, item, first)?,
            }
            using.extend(delivered_since(&s, mark));
        }
        let on_bench = s.task().on_workbench();
        using.retain(|i: &String| on_bench.contains(i.as_str()));
        s.assemble_step(goal.step, &using)?;
        s.take_pushed();
    }

    let done = policy.done(mode).to_owned();
    s.user_turn(&done)?;
    s.take_pushed();
    s.close("completed");

    let record = MetricsRecord {
        session_id: session_id.to_owned(),
        mode,
        seed: policy.seed,
        total_time_s: s.now().as_secs_f64(),
        steps_correct: s.task().steps_correct(),
        turns: s.turns(),
    };
    tracing::debug!(?record, "session finished");
    Ok(SessionRun {
        record,
        transcript: s.transcript_jsonl(),
    })
}

/// Keeps talking until the dialogue for `item` closes: answers elicitations,
/// accepts offered alternatives, and rephrases after a no-match.
fn converse(s: &mut Session, policy: &OperatorPolicy, item: &str, first: String) -> Result<(), HarnessError> {
    let mut utterance = first;
    for _ in 0..MAX_ATTEMPTS {
        let out = s.user_turn(&utterance)?;
        s.take_pushed();
        let last = out
            .last()
            .and_then(|m| m.robot_turn())
            .expect("every user turn gets a robot turn");
        utterance = match last.action.as_str() {
            "elicit" => policy.phrasing.items[item].answer.clone(),
            "respond" if s.conversation().active.as_deref() == Some("ProposeAlternative") => {
                policy.phrasing.accept_alternative.clone()
            }
            "respond" => policy.nominal_request(item, Mode::Conversation).to_owned(),
            _ => return Ok(()),
        };
    }
    tracing::warn!(session = s.id(), item, "operator gave up on item");
    Ok(())
}

/// One command; a rejected command is retried once in its nominal form.
fn command(s: &mut Session, policy: &OperatorPolicy, item: &str, first: String) -> Result<(), HarnessError> {
    let out = s.user_turn(&first)?;
    let rejected = out
        .last()
        .and_then(|m| m.robot_turn())
        .is_some_and(|t| t.text == convoforge_core::baseline::REJECT_RESPONSE);
    if rejected {
        s.user_turn(policy.nominal_request(item, Mode::Baseline))?;
    }
    Ok(())
}

/// Items the robot put on the bench since transcript position `mark`.
fn delivered_since(s: &Session, mark: usize) -> Vec<String> {
    s.transcript()[mark..]
        .iter()
        .filter_map(|e| match e {
            Entry::Fetch { item, outcome, .. } if outcome == "delivered" => Some(item.clone()),
            _ => None,
        })
        .collect()
}
