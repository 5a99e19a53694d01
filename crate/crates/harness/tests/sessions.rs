use std::sync::Arc;

use convoforge_core::sim::load_task;
use convoforge_core::transcript::{self, Entry};
use convoforge_core::{GatewayContext, Mode};
use convoforge_harness::experiment::session_id;
use convoforge_harness::replay::recorded_steps;
use convoforge_harness::*;

const GOLDEN: &str = include_str!("../../../fixtures/transcripts/conversation_seed42.jsonl");

fn ctx() -> Arc<GatewayContext> {
    Arc::new(GatewayContext::default_assembly())
}

fn run(mode: Mode, error_rate: f64, seed: u64) -> SessionRun {
    let ctx = ctx();
    let policy = OperatorPolicy::nominal(&ctx.task, error_rate, seed).unwrap();
    run_session(ctx, &policy, mode, "s1").unwrap()
}

fn entries(run: &SessionRun) -> Vec<Entry> {
    transcript::parse(&run.transcript).unwrap()
}

#[test]
fn nominal_conversation_matches_golden_transcript() {
    let r = run(Mode::Conversation, 0.0, 42);
    assert_eq!(r.transcript, GOLDEN);
    assert_eq!(r.record.steps_correct, 5);
    let task = load_task(convoforge_core::DEFAULT_TASK).unwrap();
    assert_eq!(score(&entries(&r), &task), 5);
}

#[test]
fn nominal_baseline_is_faster_by_speech_alone() {
    let conv = run(Mode::Conversation, 0.0, 42);
    let base = run(Mode::Baseline, 0.0, 42);
    assert_eq!(base.record.steps_correct, 5);
    assert!(base.record.total_time_s < conv.record.total_time_s);
    assert!(base.record.turns < conv.record.turns);

    // Both runs perform the same robot and human actions; the gap must be
    // exactly the speech difference at 0.4 s per whitespace token.
    let split = |r: &SessionRun| {
        let mut action_ms = 0u64;
        let mut tokens = 0u64;
        for e in entries(r) {
            match &e {
                Entry::User { text, .. } => tokens += text.split_whitespace().count() as u64,
                Entry::Robot { action, .. } => tokens += action.spoken_text().split_whitespace().count() as u64,
                Entry::Fetch { dur, .. } | Entry::Assemble { dur, .. } => action_ms += dur.as_millis(),
                _ => {}
            }
        }
        (action_ms, tokens)
    };
    let (conv_actions, conv_tokens) = split(&conv);
    let (base_actions, base_tokens) = split(&base);
    assert_eq!(conv_actions, base_actions);
    for (r, actions, tokens) in [(&conv, conv_actions, conv_tokens), (&base, base_actions, base_tokens)] {
        let expected = actions + tokens * 400;
        assert_eq!((r.record.total_time_s * 1000.0).round() as u64, expected);
    }
}

#[test]
fn vague_requests_are_recovered_only_by_conversation() {
    let conv = run(Mode::Conversation, 1.0, 42);
    let base = run(Mode::Baseline, 1.0, 42);
    assert_eq!(conv.record.steps_correct, 5);
    assert!(base.record.steps_correct < 5);
    // every vague conversational request was followed by an elicitation
    let elicits = entries(&conv)
        .iter()
        .filter(|e| matches!(e, Entry::Robot { action, .. } if action.kind() == "elicit"))
        .count();
    assert_eq!(elicits, 8);
}

#[test]
fn transcripts_replay_and_rescore() {
    let task = load_task(convoforge_core::DEFAULT_TASK).unwrap();
    let exp = run_experiment(
        ctx(),
        ExperimentConfig {
            n_per_mode: 5,
            error_rate: 0.5,
            base_seed: 3,
        },
    )
    .unwrap();
    for r in &exp.runs {
        let rep = replay_str(&r.transcript).unwrap();
        assert_eq!(rep.verified.total.as_secs_f64(), r.record.total_time_s);
        assert_eq!(rep.verified.turns, r.record.turns);
        assert_eq!(score(&rep.entries, &task), r.record.steps_correct);
        assert_eq!(recorded_steps(&rep.entries), Some(r.record.steps_correct));
    }
}

#[test]
fn truncated_transcript_is_corrupt() {
    let cut = &GOLDEN[..GOLDEN.len() / 2];
    assert!(matches!(
        replay_str(cut),
        Err(HarnessError::Transcript(transcript::TranscriptError::Corrupt { .. }))
    ));
}

#[test]
fn replay_reads_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    std::fs::write(&path, GOLDEN).unwrap();
    let rep = replay(&path).unwrap();
    assert!(rep.rendered.contains("user: could you bring me the base plate"));
    assert!(replay(&dir.path().join("missing.jsonl")).is_err());
}

#[test]
fn policy_must_cover_its_goals() {
    let ctx = ctx();
    let mut policy = OperatorPolicy::nominal(&ctx.task, 0.0, 1).unwrap();
    policy.plan[0].items.push("unicorn".into());
    assert!(matches!(
        run_session(ctx.clone(), &policy, Mode::Conversation, "s1"),
        Err(HarnessError::UnknownGoal(g)) if g == "unicorn"
    ));
    assert!(matches!(
        OperatorPolicy::nominal(&ctx.task, 1.5, 1),
        Err(HarnessError::ErrorRate(_))
    ));
}

#[test]
fn sessions_are_deterministic() {
    let a = run(Mode::Baseline, 0.3, 9);
    let b = run(Mode::Baseline, 0.3, 9);
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.record, b.record);
}

#[test]
fn session_ids_are_stable() {
    assert_eq!(session_id(Mode::Conversation, 7), "conversation-007");
}
