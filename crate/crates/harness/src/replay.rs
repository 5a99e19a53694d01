//! Transcript replay and an independent scorer for correct steps.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use convoforge_core::sim::TaskConfig;
use convoforge_core::transcript::{self, Entry, Verified};

use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct Replay {
    pub entries: Vec<Entry>,
    pub verified: Verified,
    pub rendered: String,
}

/// Parses, re-times and re-checks a transcript, and renders it.
pub fn replay_str(text: &str) -> Result<Replay, HarnessError> {
    let entries = transcript::parse(text)?;
    let verified = transcript::verify(&entries)?;
    let rendered = transcript::render(&entries);
    Ok(Replay {
        entries,
        verified,
        rendered,
    })
}

pub fn replay(path: &Path) -> Result<Replay, HarnessError> {
    replay_str(&fs::read_to_string(path)?)
}

/// Recomputes correct steps from the recorded item sets alone: a step counts
/// when its set is the required components plus the required tool, nothing else.
pub fn score(entries: &[Entry], task: &TaskConfig) -> usize {
    entries
        .iter()
        .filter(|e| match e {
            Entry::Assemble { step, using, .. } => {
                let Some(def) = task.steps.iter().find(|s| s.index == *step) else {
                    return false;
                };
                let mut want: BTreeSet<&str> = def.required_components.iter().map(String::as_str).collect();
                want.extend(def.required_tool.as_deref());
                let have: BTreeSet<&str> = using.iter().map(String::as_str).collect();
                have == want
            }
            _ => false,
        })
        .count()
}

/// The `steps_correct` value a transcript records in its end entry.
pub fn recorded_steps(entries: &[Entry]) -> Option<usize> {
    entries.iter().rev().find_map(|e| match e {
        Entry::End { steps_correct, .. } => Some(*steps_correct),
        _ => None,
    })
}
