//! JSON wire protocol between operator clients, the gateway and the back-end.
//!
//! Every message is an envelope `{body, kind, seq, session, version}`. Encoding
//! is canonical: keys sorted, no insignificant whitespace, UTF-8. Decoding
//! accepts any key order and whitespace.

use std::collections::{BTreeMap, HashMap};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserTurn {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotTurn {
    pub action: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiCall {
    pub api: String,
    pub args: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiResult {
    pub status: String,
    pub payload: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub dialogue: String,
    pub bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionStart {
    pub schema_name: String,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEnd {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    UserTurn(UserTurn),
    RobotTurn(RobotTurn),
    ApiCall(ApiCall),
    ApiResult(ApiResult),
    Event(Event),
    SessionStart(SessionStart),
    SessionEnd(SessionEnd),
    Error(ErrorBody),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::UserTurn(_) => "UserTurn",
            Body::RobotTurn(_) => "RobotTurn",
            Body::ApiCall(_) => "ApiCall",
            Body::ApiResult(_) => "ApiResult",
            Body::Event(_) => "Event",
            Body::SessionStart(_) => "SessionStart",
            Body::SessionEnd(_) => "SessionEnd",
            Body::Error(_) => "Error",
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Body::UserTurn(b) => serde_json::to_value(b),
            Body::RobotTurn(b) => serde_json::to_value(b),
            Body::ApiCall(b) => serde_json::to_value(b),
            Body::ApiResult(b) => serde_json::to_value(b),
            Body::Event(b) => serde_json::to_value(b),
            Body::SessionStart(b) => serde_json::to_value(b),
            Body::SessionEnd(b) => serde_json::to_value(b),
            Body::Error(b) => serde_json::to_value(b),
        };
        v.expect("wire bodies are plain data")
    }

    fn from_value(kind: &str, body: Value) -> Result<Body, WireError> {
        fn parse<T: DeserializeOwned>(kind: &str, v: Value) -> Result<T, WireError> {
            serde_json::from_value(v).map_err(|e| WireError::InvalidBody {
                kind: kind.to_owned(),
                message: e.to_string(),
            })
        }
        Ok(match kind {
            "UserTurn" => Body::UserTurn(parse(kind, body)?),
            "RobotTurn" => Body::RobotTurn(parse(kind, body)?),
            "ApiCall" => Body::ApiCall(parse(kind, body)?),
            "ApiResult" => Body::ApiResult(parse(kind, body)?),
            "Event" => Body::Event(parse(kind, body)?),
            "SessionStart" => Body::SessionStart(parse(kind, body)?),
            "SessionEnd" => Body::SessionEnd(parse(kind, body)?),
            "Error" => Body::Error(parse(kind, body)?),
            other => return Err(WireError::UnknownKind(other.to_owned())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub session: String,
    pub seq: u64,
    pub body: Body,
}

impl WireMessage {
    pub fn new(session: impl Into<String>, seq: u64, body: Body) -> Self {
        WireMessage {
            session: session.into(),
            seq,
            body,
        }
    }

    pub fn error(session: impl Into<String>, seq: u64, code: &str, message: impl Into<String>) -> Self {
        WireMessage::new(
            session,
            seq,
            Body::Error(ErrorBody {
                code: code.to_owned(),
                message: message.into(),
            }),
        )
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    pub fn robot_turn(&self) -> Option<&RobotTurn> {
        match &self.body {
            Body::RobotTurn(t) => Some(t),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("body".into(), self.body.to_value());
        m.insert("kind".into(), Value::String(self.kind().to_owned()));
        m.insert("seq".into(), Value::from(self.seq));
        m.insert("session".into(), Value::String(self.session.clone()));
        m.insert("version".into(), Value::String(VERSION.to_owned()));
        Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("unsupported version `{0}`")]
    VersionMismatch(String),
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("invalid {kind} body: {message}")]
    InvalidBody { kind: String, message: String },
    #[error("seq {got} does not increase past {last}")]
    SeqRegression { last: u64, got: u64 },
}

impl WireError {
    /// Stable machine-readable code carried in `Error` messages.
    pub fn code(&self) -> &'static str {
        match self {
            WireError::Malformed(_) => "MALFORMED_JSON",
            WireError::VersionMismatch(_) => "VERSION_MISMATCH",
            WireError::UnknownKind(_) => "UNKNOWN_KIND",
            WireError::InvalidBody { .. } => "INVALID_BODY",
            WireError::SeqRegression { .. } => "SEQ_REGRESSION",
        }
    }
}

/// Canonical bytes: sorted keys at every level, compact, UTF-8.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    canonical_string(&msg.to_value()).into_bytes()
}

/// Canonical compact JSON of any value.
pub fn canonical_string(value: &Value) -> String {
    // serde_json's default map is ordered by key
    serde_json::to_string(&sort_keys(value)).expect("JSON values serialize")
}

fn sort_keys(value: &Value) -> Value {
    match value {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    version: Value,
    session: String,
    seq: u64,
    kind: String,
    body: Value,
}

/// Decodes one message. Stateless; sequence checks live in [`SeqGuard`].
pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let raw: Value = serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    // check the version before the rest of the envelope so that a future
    // version with a different layout still reports the right error
    match raw.get("version") {
        Some(Value::String(v)) if v == VERSION => {}
        Some(Value::String(v)) => return Err(WireError::VersionMismatch(v.clone())),
        Some(other) => return Err(WireError::VersionMismatch(other.to_string())),
        None => return Err(WireError::Malformed("missing field `version`".into())),
    }
    let env: Envelope = serde_json::from_value(raw).map_err(|e| WireError::Malformed(e.to_string()))?;
    debug_assert!(env.version == VERSION);
    let body = Body::from_value(&env.kind, env.body)?;
    Ok(WireMessage {
        session: env.session,
        seq: env.seq,
        body,
    })
}

/// Enforces strictly increasing `seq` per session for one direction.
#[derive(Debug, Default, Clone)]
pub struct SeqGuard {
    last: HashMap<String, u64>,
}

impl SeqGuard {
    pub fn check(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        match self.last.get(&msg.session) {
            Some(&last) if msg.seq <= last => Err(WireError::SeqRegression { last, got: msg.seq }),
            _ => {
                self.last.insert(msg.session.clone(), msg.seq);
                Ok(())
            }
        }
    }

    /// Decodes and checks ordering in one step.
    pub fn decode(&mut self, bytes: &[u8]) -> Result<WireMessage, WireError> {
        let msg = decode(bytes)?;
        self.check(&msg)?;
        Ok(msg)
    }
}
