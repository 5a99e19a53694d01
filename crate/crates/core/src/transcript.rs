//! Session transcripts: one canonical JSON object per line.
//!
//! Every entry that takes simulated time carries its start `at` and duration
//! `dur`, so a transcript can be re-timed and re-checked without the simulator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{check_alternation, AlternationViolation, RobotAction, Speaker, Turn, TurnContent};
use crate::sim::{Fault, StepOutcome};
use crate::time::SimTime;
use crate::wire::canonical_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Entry {
    Start {
        session: String,
        mode: String,
        schema: String,
    },
    User {
        at: SimTime,
        dur: SimTime,
        text: String,
    },
    Robot {
        at: SimTime,
        dur: SimTime,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        initiated: bool,
        #[serde(flatten)]
        action: RobotAction,
    },
    Fetch {
        at: SimTime,
        dur: SimTime,
        item: String,
        outcome: String,
    },
    Pick {
        at: SimTime,
        dur: SimTime,
        item: String,
        outcome: String,
    },
    Assemble {
        at: SimTime,
        dur: SimTime,
        step: u32,
        using: Vec<String>,
        outcome: StepOutcome,
    },
    Fault {
        at: SimTime,
        #[serde(flatten)]
        fault: Fault,
    },
    Event {
        at: SimTime,
        dialogue: String,
        bindings: BTreeMap<String, String>,
    },
    End {
        at: SimTime,
        total_time_s: SimTime,
        steps_correct: usize,
        turns: usize,
    },
}

impl Entry {
    pub fn at(&self) -> Option<SimTime> {
        match self {
            Entry::Start { .. } => None,
            Entry::User { at, .. }
            | Entry::Robot { at, .. }
            | Entry::Fetch { at, .. }
            | Entry::Pick { at, .. }
            | Entry::Assemble { at, .. }
            | Entry::Fault { at, .. }
            | Entry::Event { at, .. }
            | Entry::End { at, .. } => Some(*at),
        }
    }

    pub fn dur(&self) -> SimTime {
        match self {
            Entry::User { dur, .. }
            | Entry::Robot { dur, .. }
            | Entry::Fetch { dur, .. }
            | Entry::Pick { dur, .. }
            | Entry::Assemble { dur, .. } => *dur,
            _ => SimTime::ZERO,
        }
    }

    pub fn is_turn(&self) -> bool {
        matches!(self, Entry::User { .. } | Entry::Robot { .. })
    }

    pub fn to_line(&self) -> String {
        canonical_string(&serde_json::to_value(self).expect("entries serialize"))
    }
}

pub fn to_jsonl(entries: &[Entry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("corrupt transcript at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("turn alternation violated: {0}")]
    Alternation(#[from] AlternationViolation),
    #[error("entry at line {line} starts at {found}, expected {expected}")]
    Timing { line: usize, expected: SimTime, found: SimTime },
    #[error("recorded total {recorded} differs from re-summed {summed}")]
    Total { recorded: SimTime, summed: SimTime },
    #[error("recorded {recorded} turns, found {found}")]
    Turns { recorded: usize, found: usize },
}

fn corrupt(line: usize, message: impl Into<String>) -> TranscriptError {
    TranscriptError::Corrupt {
        line,
        message: message.into(),
    }
}

/// Parses a complete transcript: a `start` line, entries, and a final `end` line.
pub fn parse(text: &str) -> Result<Vec<Entry>, TranscriptError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Entry = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        if matches!(e, Entry::Start { .. }) != entries.is_empty() {
            return Err(corrupt(i + 1, "start entry must come first and only once"));
        }
        if matches!(entries.last(), Some(Entry::End { .. })) {
            return Err(corrupt(i + 1, "entry after end"));
        }
        entries.push(e);
    }
    match entries.last() {
        None => Err(corrupt(0, "empty transcript")),
        Some(Entry::End { .. }) => Ok(entries),
        Some(_) => Err(corrupt(entries.len(), "missing end entry (truncated?)")),
    }
}

/// Conversation turns recovered from the transcript.
pub fn turns(entries: &[Entry]) -> Vec<Turn> {
    entries
        .iter()
        .filter_map(|e| match e {
            Entry::User { at, text, .. } => Some(Turn {
                speaker: Speaker::User,
                content: TurnContent::Utterance { text: text.clone() },
                at: *at,
                initiated: false,
            }),
            Entry::Robot {
                at, initiated, action, ..
            } => Some(Turn {
                speaker: Speaker::Robot,
                content: TurnContent::Action(action.clone()),
                at: *at,
                initiated: *initiated,
            }),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verified {
    pub total: SimTime,
    pub turns: usize,
}

/// Re-times the transcript from its durations and re-checks turn alternation.
pub fn verify(entries: &[Entry]) -> Result<Verified, TranscriptError> {
    let mut clock = SimTime::ZERO;
    let mut turns_seen = 0;
    for (i, e) in entries.iter().enumerate() {
        if let Some(at) = e.at() {
            if at != clock {
                return Err(TranscriptError::Timing {
                    line: i + 1,
                    expected: clock,
                    found: at,
                });
            }
        }
        clock += e.dur();
        if e.is_turn() {
            turns_seen += 1;
        }
        if let Entry::End {
            total_time_s, turns, ..
        } = e
        {
            if *total_time_s != clock {
                return Err(TranscriptError::Total {
                    recorded: *total_time_s,
                    summed: clock,
                });
            }
            if *turns != turns_seen {
                return Err(TranscriptError::Turns {
                    recorded: *turns,
                    found: turns_seen,
                });
            }
        }
    }
    check_alternation(&turns(entries))?;
    Ok(Verified {
        total: clock,
        turns: turns_seen,
    })
}

/// Human-readable log, one line per entry.
pub fn render(entries: &[Entry]) -> String {
    let mut out = String::new();
    for e in entries {
        let stamp = e.at().map(|t| format!("[{:>9}]", t.to_string())).unwrap_or_else(|| " ".repeat(11));
        let body = match e {
            Entry::Start { session, mode, schema } => format!("session {session} ({mode}, schema {schema})"),
            Entry::User { text, .. } => format!("user: {text}"),
            Entry::Robot { action, initiated, .. } => {
                let tag = if *initiated { " (initiated)" } else { "" };
                match action {
                    RobotAction::ApiCall { api, args } => format!("robot{tag}: <{api} {args:?}>"),
                    RobotAction::Elicit { slot, prompt } => format!("robot{tag}: {prompt} [{slot}?]"),
                    other => format!("robot{tag}: {}", other.spoken_text()),
                }
            }
            Entry::Fetch { item, outcome, .. } => format!("  robot fetches {item}: {outcome}"),
            Entry::Pick { item, outcome, .. } => format!("  human picks {item}: {outcome}"),
            Entry::Assemble {
                step, using, outcome, ..
            } => format!("  step {step} with {}: {outcome:?}", using.join(", ")),
            Entry::Fault { fault, .. } => format!("  fault {fault}"),
            Entry::Event { dialogue, .. } => format!("  event -> {dialogue}"),
            Entry::End {
                total_time_s,
                steps_correct,
                turns,
                ..
            } => format!("end: {total_time_s}, {steps_correct}/5 steps correct, {turns} turns"),
        };
        let _ = writeln!(out, "{stamp} {body}");
    }
    out
}
