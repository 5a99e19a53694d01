//! Request-response command interface used as the comparison condition.
//!
//! One command, one reply. No elicitation, no clarification, no chaining.
//! Arguments are raw words: catalog synonyms are not resolved and a partial
//! name runs against the first item it prefixes.

use thiserror::Error;

use crate::engine::{RobotAction, Speaker, Turn, TurnContent};
use crate::sim::{FetchOutcome, TaskConfig, TaskState};
use crate::text::words;
use crate::time::SimTime;

pub const REJECT_RESPONSE: &str = "unknown command";
pub const HELP_RESPONSE: &str = "commands: bring <item>, status, help, done";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Bring,
    Status,
    Help,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub verb: Verb,
    pub argument: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{}", REJECT_RESPONSE)]
pub struct Reject;

/// `<verb> [argument]`, verb first. Only `bring` takes an argument, and needs one.
pub fn parse_command(input: &str) -> Result<Command, Reject> {
    let w = words(input);
    let Some((verb, rest)) = w.split_first() else {
        return Err(Reject);
    };
    let verb = match verb.as_str() {
        "bring" => Verb::Bring,
        "status" => Verb::Status,
        "help" => Verb::Help,
        "done" => Verb::Done,
        _ => return Err(Reject),
    };
    match (verb, rest.is_empty()) {
        (Verb::Bring, true) => Err(Reject),
        (Verb::Bring, false) => Ok(Command {
            verb,
            argument: Some(rest.join(" ")),
        }),
        (_, true) => Ok(Command { verb, argument: None }),
        (_, false) => Err(Reject),
    }
}

/// Item named by a raw argument: exact name, else the first item in
/// declaration order whose name, or any word-aligned tail of it, starts
/// with the argument.
pub fn resolve_item<'a>(config: &'a TaskConfig, argument: &str) -> Option<&'a str> {
    if let Some(item) = config.item(argument) {
        return Some(&item.name);
    }
    config
        .items
        .iter()
        .find(|i| word_tails(&i.name).any(|tail| tail.starts_with(argument)))
        .map(|i| i.name.as_str())
}

fn word_tails(name: &str) -> impl Iterator<Item = &str> {
    std::iter::once(name).chain(name.match_indices(' ').map(move |(i, _)| &name[i + 1..]))
}

/// Runs a command and returns the single reply.
pub fn execute_command(cmd: &Command, task: &mut TaskState) -> String {
    match cmd.verb {
        Verb::Bring => {
            let arg = cmd.argument.as_deref().unwrap_or_default();
            let Some(name) = resolve_item(task.config(), arg).map(str::to_owned) else {
                return format!("unknown item {arg}");
            };
            match task.robot_fetch(&name) {
                Ok(FetchOutcome::Delivered) => format!("delivered {name}"),
                Ok(FetchOutcome::Unavailable { .. }) => format!("{name} not available"),
                Ok(FetchOutcome::AccessDenied) => format!("{name} access denied"),
                Err(e) => e.to_string(),
            }
        }
        Verb::Status => format!(
            "{} of {} steps done",
            task.steps_finished(),
            task.config().steps.len()
        ),
        Verb::Help => HELP_RESPONSE.to_owned(),
        Verb::Done => format!("finished with {} steps done", task.steps_finished()),
    }
}

/// History of a baseline session, kept in the same turn format as the
/// conversation engine so the same invariant checks apply.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BaselineState {
    pub history: Vec<Turn>,
}

impl BaselineState {
    /// One exchange. The user turn is stamped at `now`; the reply at `replied`.
    pub fn exchange(&mut self, input: &str, now: SimTime, task: &mut TaskState) -> String {
        self.history.push(Turn {
            speaker: Speaker::User,
            content: TurnContent::Utterance { text: input.to_owned() },
            at: now,
            initiated: false,
        });
        let reply = match parse_command(input) {
            Ok(cmd) => execute_command(&cmd, task),
            Err(Reject) => REJECT_RESPONSE.to_owned(),
        };
        self.history.push(Turn {
            speaker: Speaker::Robot,
            content: TurnContent::Action(RobotAction::Respond { text: reply.clone() }),
            at: task.now().max(now),
            initiated: false,
        });
        reply
    }
}
