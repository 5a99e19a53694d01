//! In-process session gateway.
//!
//! A [`Session`] owns one conversation (or baseline) state, one simulated
//! task, and the wire logs for both channels: the client channel (user turns
//! in, robot turns out) and the back-end channel (API calls, results, events).
//! All time is simulated: speech costs `speech_s_per_token` per token on both
//! sides, and robot and human actions cost their configured durations.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::BaselineState;
use crate::engine::{ConversationEngine, ConversationState, EngineError, RobotAction, Turn};
use crate::orchestrator::{on_sim_event, ApiHandlerTable, HandlerError};
use crate::schema::{parse_schema, DialogueSchema, SchemaError};
use crate::sim::{load_task, Fault, PickOutcome, SimError, SimEvent, SimRecord, StepOutcome, TaskConfig, TaskError, TaskState};
use crate::text::token_count;
use crate::time::SimTime;
use crate::transcript::{to_jsonl, Entry};
use crate::wire::{self, ApiCall, Body, Event, RobotTurn, SessionEnd, SessionStart, UserTurn, WireError, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Conversation,
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Conversation => "conversation",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conversation" => Ok(Mode::Conversation),
            "baseline" => Ok(Mode::Baseline),
            other => Err(GatewayError::BadRequest(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no session `{0}`")]
    NoSession(String),
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error("session id must not be empty")]
    EmptySessionId,
    #[error("session `{0}` has ended")]
    Ended(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Handler(#[from] HandlerError),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::NoSession(_) => "NO_SESSION",
            GatewayError::DuplicateSession(_) => "DUPLICATE_SESSION",
            GatewayError::EmptySessionId => "INVALID_SESSION",
            GatewayError::Ended(_) => "SESSION_ENDED",
            GatewayError::BadRequest(_) => "BAD_REQUEST",
            GatewayError::Wire(e) => e.code(),
            GatewayError::Engine(EngineError::Busy(_)) => "BUSY",
            GatewayError::Engine(_) => "PROTOCOL_VIOLATION",
            GatewayError::Sim(_) => "SIM_ERROR",
            GatewayError::Schema(_) | GatewayError::Task(_) | GatewayError::Handler(_) => "INVALID_CONFIG",
        }
    }

    pub fn to_wire(&self, session: &str, seq: u64) -> WireMessage {
        WireMessage::error(session, seq, self.code(), self.to_string())
    }
}

/// Everything sessions share: the validated schema, task layout and handlers.
#[derive(Debug)]
pub struct GatewayContext {
    pub schema: Arc<DialogueSchema>,
    pub task: TaskConfig,
    pub handlers: ApiHandlerTable,
    pub engine: ConversationEngine,
}

impl GatewayContext {
    pub fn new(schema: DialogueSchema, task: TaskConfig) -> Result<Self, GatewayError> {
        for item in &task.items {
            if !schema.catalogs.iter().any(|c| c.contains(&item.name)) {
                return Err(TaskError::NotInCatalog(item.name.clone()).into());
            }
        }
        let handlers = ApiHandlerTable::for_schema(&schema)?;
        let schema = Arc::new(schema);
        Ok(GatewayContext {
            engine: ConversationEngine::new(schema.clone()),
            schema,
            task,
            handlers,
        })
    }

    pub fn from_documents(schema: &str, task: &str) -> Result<Self, GatewayError> {
        GatewayContext::new(parse_schema(schema)?, load_task(task)?)
    }

    /// The shipped assembly schema and task.
    pub fn default_assembly() -> Self {
        GatewayContext::from_documents(crate::DEFAULT_SCHEMA, crate::DEFAULT_TASK)
            .expect("shipped fixtures are valid")
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    mode: Mode,
    ctx: Arc<GatewayContext>,
    conv: ConversationState,
    baseline: BaselineState,
    task: TaskState,
    pending: VecDeque<(String, BTreeMap<String, String>)>,
    pushed: Vec<WireMessage>,
    out_seq: u64,
    in_seq: u64,
    backend_seq: u64,
    wire_log: Vec<WireMessage>,
    backend_log: Vec<WireMessage>,
    transcript: Vec<Entry>,
    ended: bool,
}

impl Session {
    pub fn new(ctx: Arc<GatewayContext>, id: &str, mode: Mode) -> Result<Self, GatewayError> {
        if id.is_empty() {
            return Err(GatewayError::EmptySessionId);
        }
        let mut s = Session {
            id: id.to_owned(),
            mode,
            conv: ctx.engine.start_session(id),
            baseline: BaselineState::default(),
            task: TaskState::new(ctx.task.clone()),
            ctx,
            pending: VecDeque::new(),
            pushed: Vec::new(),
            out_seq: 0,
            in_seq: 0,
            backend_seq: 0,
            wire_log: Vec::new(),
            backend_log: Vec::new(),
            transcript: Vec::new(),
            ended: false,
        };
        s.transcript.push(Entry::Start {
            session: s.id.clone(),
            mode: mode.to_string(),
            schema: s.ctx.schema.name.clone(),
        });
        Ok(s)
    }

    /// Acknowledges the session: the first outbound message.
    pub fn start_message(&mut self) -> WireMessage {
        let body = Body::SessionStart(SessionStart {
            schema_name: self.ctx.schema.name.clone(),
            mode: self.mode.to_string(),
        });
        self.send(body)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn task(&self) -> &TaskState {
        &self.task
    }

    pub fn conversation(&self) -> &ConversationState {
        &self.conv
    }

    pub fn now(&self) -> SimTime {
        self.task.now()
    }

    /// Turn history of whichever interface the session runs.
    pub fn history(&self) -> &[Turn] {
        match self.mode {
            Mode::Conversation => &self.conv.history,
            Mode::Baseline => &self.baseline.history,
        }
    }

    /// Client-channel messages in both directions, in processing order.
    pub fn wire_log(&self) -> &[WireMessage] {
        &self.wire_log
    }

    /// Back-end channel: API calls, results and simulator events.
    pub fn backend_log(&self) -> &[WireMessage] {
        &self.backend_log
    }

    pub fn transcript(&self) -> &[Entry] {
        &self.transcript
    }

    pub fn transcript_jsonl(&self) -> String {
        to_jsonl(&self.transcript)
    }

    pub fn turns(&self) -> usize {
        self.transcript.iter().filter(|e| e.is_turn()).count()
    }

    /// Robot-initiated turns produced since the last call.
    pub fn take_pushed(&mut self) -> Vec<WireMessage> {
        std::mem::take(&mut self.pushed)
    }

    /// Convenience for in-process callers: wraps `text` in the next inbound UserTurn.
    pub fn user_turn(&mut self, text: &str) -> Result<Vec<WireMessage>, GatewayError> {
        let msg = WireMessage::new(
            self.id.clone(),
            self.in_seq + 1,
            Body::UserTurn(UserTurn { text: text.to_owned() }),
        );
        self.receive(msg)
    }

    /// Handles one inbound client message; returns the robot turns it produced, in order.
    pub fn receive(&mut self, msg: WireMessage) -> Result<Vec<WireMessage>, GatewayError> {
        if self.ended {
            return Err(GatewayError::Ended(self.id.clone()));
        }
        if msg.session != self.id {
            return Err(GatewayError::NoSession(msg.session));
        }
        if msg.seq <= self.in_seq {
            return Err(WireError::SeqRegression {
                last: self.in_seq,
                got: msg.seq,
            }
            .into());
        }
        let Body::UserTurn(UserTurn { text }) = &msg.body else {
            return Err(GatewayError::BadRequest(format!("expected UserTurn, got {}", msg.kind())));
        };
        let text = text.clone();
        if self.mode == Mode::Conversation && self.conv.phase.name() == "awaiting_api" {
            return Err(EngineError::ProtocolViolation("awaiting_api").into());
        }
        self.in_seq = msg.seq;
        self.wire_log.push(msg);

        let at = self.now();
        let dur = self.speech(&text);
        self.task.clock.advance(dur);
        self.transcript.push(Entry::User {
            at,
            dur,
            text: text.clone(),
        });

        let out = match self.mode {
            Mode::Conversation => self.conversation_turn(&text, at)?,
            Mode::Baseline => self.baseline_turn(&text, at),
        };
        self.flush_pending()?;
        Ok(out)
    }

    fn conversation_turn(&mut self, text: &str, user_at: SimTime) -> Result<Vec<WireMessage>, GatewayError> {
        let conv = self.conv.clone();
        let (conv, action) = self.ctx.engine.user_turn(conv, text, user_at)?;
        self.conv = conv;
        // the reply starts once the user has finished speaking
        self.restamp_last();
        let mut out = vec![self.robot_turn(&action, false)];
        if let RobotAction::ApiCall { api, args } = action {
            self.backend(Body::ApiCall(ApiCall {
                api: api.clone(),
                args: args.clone(),
            }));
            let result = self.ctx.handlers.handle_api(&api, &args, &mut self.task);
            self.drain_sim_log();
            self.backend(Body::ApiResult(result.clone()));
            let conv = self.conv.clone();
            let (conv, action) = self
                .ctx
                .engine
                .apply_api_result(conv, &result.status, &result.payload, self.now())?;
            self.conv = conv;
            out.push(self.robot_turn(&action, false));
        }
        Ok(out)
    }

    fn baseline_turn(&mut self, text: &str, user_at: SimTime) -> Vec<WireMessage> {
        let reply = self.baseline.exchange(text, user_at, &mut self.task);
        self.drain_sim_log();
        let action = RobotAction::Respond { text: reply };
        vec![self.robot_turn(&action, false)]
    }

    fn restamp_last(&mut self) {
        let now = self.now();
        if let Some(t) = self.conv.history.last_mut() {
            t.at = now;
        }
    }

    /// Emits a robot turn: transcript, speech time, client wire message.
    fn robot_turn(&mut self, action: &RobotAction, initiated: bool) -> WireMessage {
        let at = self.now();
        let dur = self.speech(action.spoken_text());
        self.task.clock.advance(dur);
        self.transcript.push(Entry::Robot {
            at,
            dur,
            initiated,
            action: action.clone(),
        });
        let (slot, api, args) = match action {
            RobotAction::Elicit { slot, .. } => (Some(slot.clone()), None, None),
            RobotAction::ApiCall { api, args } => (None, Some(api.clone()), Some(args.clone())),
            _ => (None, None, None),
        };
        self.send(Body::RobotTurn(RobotTurn {
            action: action.kind().to_owned(),
            text: action.spoken_text().to_owned(),
            slot,
            api,
            args,
        }))
    }

    fn speech(&self, text: &str) -> SimTime {
        self.ctx.task.durations.speech_per_token() * token_count(text)
    }

    fn send(&mut self, body: Body) -> WireMessage {
        self.out_seq += 1;
        let msg = WireMessage::new(self.id.clone(), self.out_seq, body);
        self.wire_log.push(msg.clone());
        msg
    }

    fn backend(&mut self, body: Body) {
        self.backend_seq += 1;
        self.backend_log
            .push(WireMessage::new(self.id.clone(), self.backend_seq, body));
    }

    fn drain_sim_log(&mut self) {
        for r in self.task.take_log() {
            self.transcript.push(match r {
                SimRecord::Fetch { at, dur, item, outcome } => Entry::Fetch { at, dur, item, outcome },
                SimRecord::Pick { at, dur, item, outcome } => Entry::Pick { at, dur, item, outcome },
                SimRecord::Assemble {
                    at,
                    dur,
                    step,
                    using,
                    outcome,
                } => Entry::Assemble {
                    at,
                    dur,
                    step,
                    using,
                    outcome,
                },
                SimRecord::Fault { at, fault } => Entry::Fault { at, fault },
            });
        }
    }

    pub fn human_pick(&mut self, item: &str) -> Result<PickOutcome, GatewayError> {
        self.ensure_live()?;
        let outcome = self.task.human_pick(item)?;
        self.drain_sim_log();
        Ok(outcome)
    }

    pub fn assemble_step(&mut self, step: u32, using: &BTreeSet<String>) -> Result<StepOutcome, GatewayError> {
        self.ensure_live()?;
        let (outcome, event) = self.task.assemble_step(step, using)?;
        self.drain_sim_log();
        self.dispatch(event)?;
        Ok(outcome)
    }

    pub fn inject_fault(&mut self, fault: Fault) -> Result<(), GatewayError> {
        self.ensure_live()?;
        let event = self.task.inject_fault(fault)?;
        self.drain_sim_log();
        self.dispatch(event)
    }

    fn ensure_live(&self) -> Result<(), GatewayError> {
        if self.ended {
            Err(GatewayError::Ended(self.id.clone()))
        } else {
            Ok(())
        }
    }

    /// Routes a simulator event to a robot-initiated dialogue, deferring it
    /// while the conversation is mid-dialogue.
    fn dispatch(&mut self, event: SimEvent) -> Result<(), GatewayError> {
        if self.mode == Mode::Baseline {
            tracing::debug!(session = %self.id, ?event, "baseline sessions ignore events");
            return Ok(());
        }
        let Some((dialogue, bindings)) = on_sim_event(&event, &self.task) else {
            return Ok(());
        };
        self.transcript.push(Entry::Event {
            at: self.now(),
            dialogue: dialogue.clone(),
            bindings: bindings.clone(),
        });
        self.backend(Body::Event(Event {
            dialogue: dialogue.clone(),
            bindings: bindings.clone(),
        }));
        self.pending.push_back((dialogue, bindings));
        self.flush_pending()
    }

    fn flush_pending(&mut self) -> Result<(), GatewayError> {
        if self.mode == Mode::Baseline {
            self.pending.clear();
            return Ok(());
        }
        while !self.conv.phase.is_busy() {
            let Some((dialogue, bindings)) = self.pending.pop_front() else {
                break;
            };
            let conv = self.conv.clone();
            let (conv, action) = self
                .ctx
                .engine
                .initiate_dialogue(conv, &dialogue, &bindings, self.now())?;
            self.conv = conv;
            let msg = self.robot_turn(&action, true);
            self.pushed.push(msg);
        }
        Ok(())
    }

    /// Ends the session and returns the final message. Idempotent.
    pub fn close(&mut self, reason: &str) -> WireMessage {
        if !self.ended {
            self.ended = true;
            if !self.pending.is_empty() {
                tracing::warn!(session = %self.id, dropped = self.pending.len(), "session ended with deferred events");
                self.pending.clear();
            }
            self.conv = self.ctx.engine.end_session(self.conv.clone());
            let now = self.now();
            let turns = self.turns();
            self.transcript.push(Entry::End {
                at: now,
                total_time_s: now,
                steps_correct: self.task.steps_correct(),
                turns,
            });
        }
        self.send(Body::SessionEnd(SessionEnd {
            reason: reason.to_owned(),
        }))
    }
}

/// In-process registry handing out ids `s1`, `s2`, ...
#[derive(Debug)]
pub struct Gateway {
    ctx: Arc<GatewayContext>,
    sessions: HashMap<String, Session>,
    next_id: u64,
}

impl Gateway {
    pub fn new(ctx: Arc<GatewayContext>) -> Self {
        Gateway {
            ctx,
            sessions: HashMap::new(),
            next_id: 0,
        }
    }

    pub fn context(&self) -> &Arc<GatewayContext> {
        &self.ctx
    }

    pub fn next_session_id(&mut self) -> String {
        loop {
            self.next_id += 1;
            let id = format!("s{}", self.next_id);
            if !self.sessions.contains_key(&id) {
                return id;
            }
        }
    }

    /// Opens a session; returns its id and the SessionStart acknowledgement.
    pub fn open(&mut self, mode: Mode) -> (String, WireMessage) {
        let id = self.next_session_id();
        let ack = self.open_with_id(&id, mode).expect("fresh id is unique and non-empty");
        (id, ack)
    }

    pub fn open_with_id(&mut self, id: &str, mode: Mode) -> Result<WireMessage, GatewayError> {
        if self.sessions.contains_key(id) {
            return Err(GatewayError::DuplicateSession(id.to_owned()));
        }
        let mut s = Session::new(self.ctx.clone(), id, mode)?;
        let ack = s.start_message();
        self.sessions.insert(id.to_owned(), s);
        Ok(ack)
    }

    pub fn session(&mut self, id: &str) -> Result<&mut Session, GatewayError> {
        self.sessions
            .get_mut(id)
            .ok_or_else(|| GatewayError::NoSession(id.to_owned()))
    }

    /// Decodes and dispatches raw client bytes.
    pub fn receive_bytes(&mut self, bytes: &[u8]) -> Result<Vec<WireMessage>, GatewayError> {
        let msg = wire::decode(bytes)?;
        let id = msg.session.clone();
        self.session(&id)?.receive(msg)
    }

    /// Ends and removes a session.
    pub fn end(&mut self, id: &str, reason: &str) -> Result<Session, GatewayError> {
        let mut s = self
            .sessions
            .remove(id)
            .ok_or_else(|| GatewayError::NoSession(id.to_owned()))?;
        s.close(reason);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::check_alternation;

    fn session(mode: Mode) -> Session {
        let mut s = Session::new(Arc::new(GatewayContext::default_assembly()), "s1", mode).unwrap();
        s.start_message();
        s
    }

    fn actions(msgs: &[WireMessage]) -> Vec<String> {
        msgs.iter().map(|m| m.robot_turn().unwrap().action.clone()).collect()
    }

    #[test]
    fn request_yields_call_then_result() {
        let mut s = session(Mode::Conversation);
        let out = s.user_turn("bring me the gear").unwrap();
        assert_eq!(actions(&out), ["api_call", "end_dialogue"]);
        assert_eq!(out[1].robot_turn().unwrap().text, "I placed the gear on the bench.");
        assert_eq!(out.iter().map(|m| m.seq).collect::<Vec<_>>(), [2, 3]);
        // 4 user tokens, fetch 8 + deliver 4, 7 robot tokens
        assert_eq!(s.now(), SimTime::from_millis(1600 + 12000 + 2800));
    }

    #[test]
    fn unavailable_item_chains_to_alternative() {
        let mut s = session(Mode::Conversation);
        s.inject_fault(Fault::ItemUnavailable("gear".into())).unwrap();
        let out = s.user_turn("bring me the gear").unwrap();
        assert_eq!(actions(&out), ["api_call", "respond"]);
        assert_eq!(
            out[1].robot_turn().unwrap().text,
            "The gear is not available. Shall I bring the spare gear instead?"
        );
        let out = s.user_turn("yes").unwrap();
        assert_eq!(actions(&out), ["api_call", "end_dialogue"]);
        assert_eq!(out[1].robot_turn().unwrap().text, "I placed the spare gear on the bench.");
        check_alternation(s.history()).unwrap();
    }

    #[test]
    fn robot_error_is_pushed_unless_busy() {
        let mut s = session(Mode::Conversation);
        s.user_turn("bring me a component").unwrap();
        s.inject_fault(Fault::RobotError("GRIPPER_FAULT".into())).unwrap();
        assert!(s.take_pushed().is_empty(), "deferred during elicitation");
        let out = s.user_turn("the cover").unwrap();
        assert_eq!(actions(&out), ["api_call", "end_dialogue"]);
        let pushed = s.take_pushed();
        assert_eq!(actions(&pushed), ["respond"]);
        assert_eq!(
            pushed[0].robot_turn().unwrap().text,
            "Attention: GRIPPER_FAULT detected. I have stopped, please check the cell before we continue."
        );
        assert!(pushed[0].seq > out[1].seq);
        check_alternation(s.history()).unwrap();
    }

    #[test]
    fn correct_step_offers_suggestion() {
        let mut s = session(Mode::Conversation);
        s.user_turn("bring me the base plate").unwrap();
        s.assemble_step(1, &["base plate".to_string()].into()).unwrap();
        let pushed = s.take_pushed();
        assert_eq!(
            pushed[0].robot_turn().unwrap().text,
            "Well done. Next is step 2: you will need the bracket and screwdriver."
        );
    }

    #[test]
    fn baseline_answers_once_and_ignores_events() {
        let mut s = session(Mode::Baseline);
        let out = s.user_turn("bring gear").unwrap();
        assert_eq!(actions(&out), ["respond"]);
        assert_eq!(out[0].robot_turn().unwrap().text, "delivered gear");
        s.inject_fault(Fault::RobotError("COLLISION".into())).unwrap();
        assert!(s.take_pushed().is_empty());
        let out = s.user_turn("bring").unwrap();
        assert_eq!(out[0].robot_turn().unwrap().text, "unknown command");
    }

    #[test]
    fn registry_errors() {
        let mut g = Gateway::new(Arc::new(GatewayContext::default_assembly()));
        let (id, ack) = g.open(Mode::Conversation);
        assert_eq!((id.as_str(), ack.kind()), ("s1", "SessionStart"));
        assert_eq!(g.session("nope").unwrap_err().code(), "NO_SESSION");
        assert_eq!(
            g.open_with_id("s1", Mode::Baseline).unwrap_err().code(),
            "DUPLICATE_SESSION"
        );
        assert_eq!(g.open_with_id("", Mode::Baseline).unwrap_err().code(), "INVALID_SESSION");
        let s = g.end("s1", "done").unwrap();
        assert!(s.is_ended());
        assert!(g.is_empty());
    }

    #[test]
    fn inbound_seq_must_increase() {
        let mut s = session(Mode::Conversation);
        s.user_turn("bring me the gear").unwrap();
        let again = WireMessage::new("s1", 1, Body::UserTurn(UserTurn { text: "hi".into() }));
        assert_eq!(
            s.receive(again).unwrap_err().code(),
            "SEQ_REGRESSION"
        );
    }

    #[test]
    fn transcript_verifies_after_close() {
        let mut s = session(Mode::Conversation);
        s.user_turn("bring me the gear").unwrap();
        s.user_turn("blorp").unwrap();
        s.close("done");
        let entries = crate::transcript::parse(&s.transcript_jsonl()).unwrap();
        let v = crate::transcript::verify(&entries).unwrap();
        assert_eq!(v.total, s.now());
    }
}
