//! Turn-taking conversation engine.
//!
//! A conversation is a sequence of dialogues. Each user turn is matched to an
//! utterance set; the robot then responds, elicits the first missing required
//! slot, or dispatches the dialogue's API. API results either close the
//! dialogue with a rendered response or trigger a follow-up dialogue. The robot
//! may also open a dialogue itself ([`ConversationEngine::initiate_dialogue`]).
//!
//! Every operation is a pure transition: it consumes a [`ConversationState`] and
//! returns the successor together with the single [`RobotAction`] it emitted.
//! Timestamps are supplied by the caller.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::{match_utterance, MatchResult};
use crate::schema::{Dialogue, DialogueSchema, Route, SlotKind};
use crate::text::{normalize, render, words};
use crate::time::SimTime;

/// Consecutive unmatched inputs after which the dialogue is ended.
pub const MAX_NO_MATCH: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Robot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum RobotAction {
    Respond { text: String },
    Elicit { slot: String, prompt: String },
    ApiCall { api: String, args: BTreeMap<String, String> },
    EndDialogue { text: String },
}

impl RobotAction {
    /// Wire name of the action kind.
    pub fn kind(&self) -> &'static str {
        match self {
            RobotAction::Respond { .. } => "respond",
            RobotAction::Elicit { .. } => "elicit",
            RobotAction::ApiCall { .. } => "api_call",
            RobotAction::EndDialogue { .. } => "end_dialogue",
        }
    }

    /// What the robot says aloud; empty for API calls.
    pub fn spoken_text(&self) -> &str {
        match self {
            RobotAction::Respond { text } | RobotAction::EndDialogue { text } => text,
            RobotAction::Elicit { prompt, .. } => prompt,
            RobotAction::ApiCall { .. } => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TurnContent {
    Utterance { text: String },
    Action(RobotAction),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub content: TurnContent,
    pub at: SimTime,
    /// Opens a robot-initiated dialogue.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub initiated: bool,
}

impl Turn {
    pub fn action(&self) -> Option<&RobotAction> {
        match &self.content {
            TurnContent::Action(a) => Some(a),
            TurnContent::Utterance { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    /// Between dialogues.
    Idle,
    /// Inside a dialogue, or at session start, waiting for the user.
    AwaitingUser,
    Eliciting { dialogue: String, slot: String },
    AwaitingApi {
        dialogue: String,
        api: String,
        args: BTreeMap<String, String>,
    },
    Ended,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::AwaitingUser => "awaiting_user",
            Phase::Eliciting { .. } => "eliciting",
            Phase::AwaitingApi { .. } => "awaiting_api",
            Phase::Ended => "ended",
        }
    }

    /// A robot-initiated dialogue cannot start now.
    pub fn is_busy(&self) -> bool {
        matches!(self, Phase::Eliciting { .. } | Phase::AwaitingApi { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationState {
    pub session_id: String,
    pub phase: Phase,
    pub active: Option<String>,
    pub bindings: BTreeMap<String, String>,
    pub history: Vec<Turn>,
    pub no_match_count: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("protocol violation: operation not allowed in phase {0}")]
    ProtocolViolation(&'static str),
    #[error("busy: a dialogue is in progress ({0})")]
    Busy(&'static str),
    #[error("unknown dialogue `{0}`")]
    UnknownDialogue(String),
}

type Step = Result<(ConversationState, RobotAction), EngineError>;

#[derive(Debug, Clone)]
pub struct ConversationEngine {
    schema: Arc<DialogueSchema>,
}

impl ConversationEngine {
    pub fn new(schema: Arc<DialogueSchema>) -> Self {
        ConversationEngine { schema }
    }

    pub fn schema(&self) -> &DialogueSchema {
        &self.schema
    }

    pub fn start_session(&self, session_id: &str) -> ConversationState {
        ConversationState {
            session_id: session_id.to_owned(),
            phase: Phase::AwaitingUser,
            active: None,
            bindings: BTreeMap::new(),
            history: Vec::new(),
            no_match_count: 0,
        }
    }

    pub fn end_session(&self, mut state: ConversationState) -> ConversationState {
        state.phase = Phase::Ended;
        state
    }

    pub fn user_turn(&self, mut state: ConversationState, input: &str, now: SimTime) -> Step {
        if matches!(state.phase, Phase::AwaitingApi { .. } | Phase::Ended) {
            return Err(EngineError::ProtocolViolation(state.phase.name()));
        }
        state.history.push(Turn {
            speaker: Speaker::User,
            content: TurnContent::Utterance { text: input.to_owned() },
            at: now,
            initiated: false,
        });

        let action = if let Phase::Eliciting { dialogue, slot } = state.phase.clone() {
            let d = self.dialogue(&dialogue)?;
            match self.fill_slot(d, &slot, input) {
                Some(value) => {
                    state.bindings.insert(slot, value);
                    state.no_match_count = 0;
                    self.advance(&mut state, d)
                }
                None => self.no_match(&mut state),
            }
        } else {
            match match_utterance(&self.schema, input, state.active.as_deref()) {
                MatchResult::Matched(m) => {
                    if state.active.as_deref() != Some(m.dialogue.as_str()) {
                        state.bindings.clear();
                        state.active = Some(m.dialogue.clone());
                    }
                    state.bindings.extend(m.bindings);
                    state.no_match_count = 0;
                    let d = self.dialogue(&m.dialogue)?;
                    self.advance(&mut state, d)
                }
                MatchResult::NoMatch => self.no_match(&mut state),
            }
        };
        Ok(self.emit(state, action, now, false))
    }

    pub fn apply_api_result(
        &self,
        mut state: ConversationState,
        status: &str,
        payload: &BTreeMap<String, String>,
        now: SimTime,
    ) -> Step {
        let Phase::AwaitingApi { dialogue, api, .. } = state.phase.clone() else {
            return Err(EngineError::ProtocolViolation(state.phase.name()));
        };
        let def = self
            .schema
            .api(&api)
            .expect("awaiting_api always names a declared api");
        let action = match def.route(status) {
            Route::Respond(template) => {
                let mut vars = state.bindings.clone();
                vars.extend(payload.iter().map(|(k, v)| (k.clone(), v.clone())));
                let text = render(template, &vars);
                close(&mut state);
                RobotAction::EndDialogue { text }
            }
            Route::Trigger(next) => {
                tracing::debug!(from = %dialogue, to = %next, status, "api result triggers dialogue");
                let d = self.dialogue(next)?;
                self.activate(&mut state, d, payload)
            }
        };
        Ok(self.emit(state, action, now, false))
    }

    /// Robot-initiated dialogue. Deferred by the caller while the engine is busy.
    pub fn initiate_dialogue(
        &self,
        mut state: ConversationState,
        dialogue: &str,
        bindings: &BTreeMap<String, String>,
        now: SimTime,
    ) -> Step {
        match &state.phase {
            Phase::Eliciting { .. } | Phase::AwaitingApi { .. } => {
                return Err(EngineError::Busy(state.phase.name()));
            }
            Phase::Ended => return Err(EngineError::ProtocolViolation("ended")),
            Phase::Idle | Phase::AwaitingUser => {}
        }
        let d = self.dialogue(dialogue)?;
        let action = self.activate(&mut state, d, bindings);
        Ok(self.emit(state, action, now, true))
    }

    fn dialogue(&self, name: &str) -> Result<&Dialogue, EngineError> {
        self.schema
            .dialogue(name)
            .ok_or_else(|| EngineError::UnknownDialogue(name.to_owned()))
    }

    /// Bare answers during elicitation: any catalog surface inside the input,
    /// or the whole input for free-text slots.
    fn fill_slot(&self, d: &Dialogue, slot: &str, input: &str) -> Option<String> {
        let slot = d.slot(slot)?;
        match &slot.kind {
            SlotKind::Catalog(c) => self.schema.catalog(c)?.find_in(&words(input)).map(str::to_owned),
            SlotKind::Text => Some(normalize(input)).filter(|s| !s.is_empty()),
        }
    }

    /// Missing-slot rule for a dialogue the user completed: elicit, call, or finish.
    fn advance(&self, state: &mut ConversationState, d: &Dialogue) -> RobotAction {
        if let Some(missing) = d.required_slots().find(|s| !state.bindings.contains_key(&s.name)) {
            state.phase = Phase::Eliciting {
                dialogue: d.name.clone(),
                slot: missing.name.clone(),
            };
            return RobotAction::Elicit {
                slot: missing.name.clone(),
                prompt: missing.elicit_prompt.clone(),
            };
        }
        if let Some(api) = &d.api {
            let def = self.schema.api(api).expect("validated api reference");
            let args: BTreeMap<String, String> = def
                .args
                .iter()
                .map(|a| (a.clone(), state.bindings[a].clone()))
                .collect();
            state.phase = Phase::AwaitingApi {
                dialogue: d.name.clone(),
                api: api.clone(),
                args: args.clone(),
            };
            return RobotAction::ApiCall { api: api.clone(), args };
        }
        let text = render(&d.responses.on_complete, &state.bindings);
        close(state);
        RobotAction::EndDialogue { text }
    }

    /// Missing-slot rule for a dialogue the robot opened: elicit or speak its
    /// opening line, then wait for the user.
    fn activate(&self, state: &mut ConversationState, d: &Dialogue, given: &BTreeMap<String, String>) -> RobotAction {
        state.active = Some(d.name.clone());
        state.bindings = given
            .iter()
            .filter(|(k, v)| d.slot(k).is_some_and(|s| self.accepts(&s.kind, v)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        state.no_match_count = 0;
        if let Some(missing) = d.required_slots().find(|s| !state.bindings.contains_key(&s.name)) {
            state.phase = Phase::Eliciting {
                dialogue: d.name.clone(),
                slot: missing.name.clone(),
            };
            return RobotAction::Elicit {
                slot: missing.name.clone(),
                prompt: missing.elicit_prompt.clone(),
            };
        }
        state.phase = Phase::AwaitingUser;
        RobotAction::Respond {
            text: render(&d.responses.on_complete, &state.bindings),
        }
    }

    /// Pre-bound values must already be canonical; anything else is elicited.
    fn accepts(&self, kind: &SlotKind, value: &str) -> bool {
        match kind {
            SlotKind::Catalog(c) => self.schema.catalog(c).is_some_and(|c| c.contains(value)),
            SlotKind::Text => !value.is_empty(),
        }
    }

    fn no_match(&self, state: &mut ConversationState) -> RobotAction {
        let text = state
            .active
            .as_deref()
            .and_then(|a| self.schema.dialogue(a))
            .or_else(|| self.schema.dialogues.first())
            .map(|d| d.responses.on_no_match.clone())
            .unwrap_or_default();
        state.no_match_count += 1;
        if state.no_match_count >= MAX_NO_MATCH {
            close(state);
            RobotAction::EndDialogue { text }
        } else {
            RobotAction::Respond { text }
        }
    }

    fn emit(
        &self,
        mut state: ConversationState,
        action: RobotAction,
        now: SimTime,
        initiated: bool,
    ) -> (ConversationState, RobotAction) {
        state.history.push(Turn {
            speaker: Speaker::Robot,
            content: TurnContent::Action(action.clone()),
            at: now,
            initiated,
        });
        (state, action)
    }
}

fn close(state: &mut ConversationState) {
    state.phase = Phase::Idle;
    state.active = None;
    state.bindings.clear();
    state.no_match_count = 0;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlternationViolation {
    #[error("turn {0}: a robot-initiated dialogue must not open on a user turn")]
    InitiatedUser(usize),
    #[error("turn {0}: consecutive {1:?} turns")]
    SameSpeaker(usize, Speaker),
    #[error("turn {0}: timestamp decreases")]
    TimeReversal(usize),
}

/// Turn alternation over a history: speakers alternate, except that a robot
/// turn may follow a robot turn when it carries the result of the preceding API
/// call, or when it opens a robot-initiated dialogue.
pub fn check_alternation(history: &[Turn]) -> Result<(), AlternationViolation> {
    for (i, turn) in history.iter().enumerate() {
        if turn.initiated && turn.speaker == Speaker::User {
            return Err(AlternationViolation::InitiatedUser(i));
        }
        if i == 0 {
            if turn.speaker == Speaker::Robot && !turn.initiated {
                return Err(AlternationViolation::SameSpeaker(i, Speaker::Robot));
            }
            continue;
        }
        let prev = &history[i - 1];
        if turn.at < prev.at {
            return Err(AlternationViolation::TimeReversal(i));
        }
        if turn.speaker != prev.speaker {
            continue;
        }
        let after_api = matches!(prev.action(), Some(RobotAction::ApiCall { .. }));
        if turn.speaker == Speaker::Robot && (turn.initiated || after_api) {
            continue;
        }
        return Err(AlternationViolation::SameSpeaker(i, turn.speaker));
    }
    Ok(())
}
