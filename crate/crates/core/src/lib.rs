//! Core of the convoforge stack: the dialogue schema and its matcher, the
//! turn-taking conversation engine, the JSON wire protocol, the collaborative
//! assembly simulator with its API handlers, the request-response baseline,
//! and the in-process session gateway that ties them together.

#![forbid(unsafe_code)]

pub mod baseline;
pub mod engine;
pub mod gateway;
pub mod matcher;
pub mod orchestrator;
pub mod schema;
pub mod sim;
pub mod text;
pub mod time;
pub mod transcript;
pub mod wire;

pub use engine::{ConversationEngine, ConversationState, Phase, RobotAction, Speaker, Turn};
pub use gateway::{Gateway, GatewayContext, GatewayError, Mode, Session};
pub use matcher::{expand_template, match_utterance, Grounding, Match, MatchResult, Score};
pub use schema::{parse_schema, DialogueSchema, SchemaError};
pub use sim::{load_task, TaskConfig, TaskState};
pub use time::SimTime;
pub use wire::{decode, encode, WireError, WireMessage};

/// The shipped dialogue schema document.
pub const DEFAULT_SCHEMA: &str = include_str!("../../../fixtures/assembly.schema.json");
/// The shipped assembly task document.
pub const DEFAULT_TASK: &str = include_str!("../../../fixtures/assembly.task.json");
