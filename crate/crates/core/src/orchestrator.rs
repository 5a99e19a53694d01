//! Back-end handlers for the dialogue APIs and the mapping from simulator
//! events to robot-initiated dialogues.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::schema::{DialogueSchema, Route};
use crate::sim::{FetchOutcome, SimEvent, StepOutcome, TaskState};
use crate::text::placeholders;
use crate::wire::ApiResult;

pub const DIALOGUE_REPORT_ISSUE: &str = "ReportIssue";
pub const DIALOGUE_OFFER_SUGGESTION: &str = "OfferSuggestion";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handler {
    FetchItem,
    ConfirmAlternative,
    QueryStatus,
    RequestAssistance,
    ReportDone,
}

impl Handler {
    pub fn for_api(name: &str) -> Option<Handler> {
        Some(match name {
            "fetch_item" => Handler::FetchItem,
            "confirm_alternative" => Handler::ConfirmAlternative,
            "query_status" => Handler::QueryStatus,
            "request_assistance" => Handler::RequestAssistance,
            "report_done" => Handler::ReportDone,
            _ => return None,
        })
    }

    /// Every status the handler can return, with the payload keys it carries.
    pub fn emits(self) -> &'static [(&'static str, &'static [&'static str])] {
        match self {
            Handler::FetchItem => &[
                ("ok", &["item"]),
                ("unavailable", &["alternative", "item"]),
                ("denied", &["item"]),
                ("error", &["detail", "item"]),
            ],
            Handler::ConfirmAlternative => &[("ok", &["alternative", "item"]), ("error", &["alternative", "detail"])],
            Handler::QueryStatus | Handler::RequestAssistance => {
                &[("ok", &["done", "next", "suggestion"]), ("error", &["detail"])]
            }
            Handler::ReportDone => &[("ok", &["done"]), ("error", &["detail"])],
        }
    }

    /// Arguments the handler reads.
    fn args(self) -> &'static [&'static str] {
        match self {
            Handler::FetchItem => &["item"],
            Handler::ConfirmAlternative => &["alternative"],
            Handler::QueryStatus | Handler::RequestAssistance | Handler::ReportDone => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandlerError {
    #[error("api `{0}` has no handler")]
    Unhandled(String),
    #[error("api `{api}` must take arguments {expected:?}")]
    Arguments { api: String, expected: Vec<String> },
    #[error("route `{status}` of api `{api}` uses `{{{var}}}`, which its payload does not provide")]
    Insufficient { api: String, status: String, var: String },
}

/// Handler per API of the active schema.
#[derive(Debug, Clone)]
pub struct ApiHandlerTable {
    handlers: BTreeMap<String, Handler>,
}

impl ApiHandlerTable {
    /// Builds the table and checks totality and payload sufficiency: every
    /// respond template reachable from a status a handler emits only uses
    /// variables present in that status's payload.
    pub fn for_schema(schema: &DialogueSchema) -> Result<Self, HandlerError> {
        let mut handlers = BTreeMap::new();
        for api in &schema.apis {
            let h = Handler::for_api(&api.name).ok_or_else(|| HandlerError::Unhandled(api.name.clone()))?;
            let mut declared = api.args.clone();
            declared.sort();
            if declared != h.args() {
                return Err(HandlerError::Arguments {
                    api: api.name.clone(),
                    expected: h.args().iter().map(|s| s.to_string()).collect(),
                });
            }
            for (status, keys) in h.emits() {
                if let Route::Respond(template) = api.route(status) {
                    if let Some(var) = placeholders(template).into_iter().find(|v| !keys.contains(&v.as_str())) {
                        return Err(HandlerError::Insufficient {
                            api: api.name.clone(),
                            status: status.to_string(),
                            var,
                        });
                    }
                }
            }
            handlers.insert(api.name.clone(), h);
        }
        Ok(ApiHandlerTable { handlers })
    }

    pub fn handler(&self, api: &str) -> Option<Handler> {
        self.handlers.get(api).copied()
    }

    /// Runs an API against the task. Never fails: problems become `error`.
    pub fn handle_api(&self, api: &str, args: &BTreeMap<String, String>, task: &mut TaskState) -> ApiResult {
        let Some(h) = self.handler(api) else {
            tracing::warn!(api, "call to unregistered api");
            return result("error", [("detail", format!("unknown api {api}"))]);
        };
        let arg = |name: &str| args.get(name).cloned().unwrap_or_default();
        match h {
            Handler::FetchItem => {
                let item = arg("item");
                match task.robot_fetch(&item) {
                    Ok(FetchOutcome::Delivered) => result("ok", [("item", item)]),
                    Ok(FetchOutcome::Unavailable { alternative: Some(alt) }) => {
                        result("unavailable", [("item", item), ("alternative", alt)])
                    }
                    Ok(FetchOutcome::Unavailable { alternative: None }) => result(
                        "error",
                        [("detail", format!("the {item} is not available")), ("item", item)],
                    ),
                    Ok(FetchOutcome::AccessDenied) => result("denied", [("item", item)]),
                    Err(_) => result("denied", [("item", item)]),
                }
            }
            Handler::ConfirmAlternative => {
                let alt = arg("alternative");
                match task.robot_fetch(&alt) {
                    Ok(FetchOutcome::Delivered) => result("ok", [("item", alt.clone()), ("alternative", alt)]),
                    Ok(_) => result(
                        "error",
                        [("detail", format!("the {alt} is not available")), ("alternative", alt)],
                    ),
                    Err(e) => result("error", [("detail", e.to_string()), ("alternative", alt)]),
                }
            }
            Handler::QueryStatus | Handler::RequestAssistance => {
                let (next, suggestion) = suggestion(task);
                result(
                    "ok",
                    [
                        ("done", task.steps_finished().to_string()),
                        ("next", next),
                        ("suggestion", suggestion),
                    ],
                )
            }
            Handler::ReportDone => result("ok", [("done", task.steps_finished().to_string())]),
        }
    }
}

fn result<const N: usize>(status: &str, payload: [(&str, String); N]) -> ApiResult {
    ApiResult {
        status: status.to_owned(),
        payload: payload.into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
    }
}

/// Rule-based suggestion: the next pending step and what it needs.
pub fn suggestion(task: &TaskState) -> (String, String) {
    match task.next_pending() {
        Some(step) => {
            let needs: Vec<&str> = step.requirements().collect();
            (format!("step {}", step.index), needs.join(" and "))
        }
        None => ("none".to_owned(), "nothing".to_owned()),
    }
}

/// Dialogue the robot should open in response to a simulator event.
pub fn on_sim_event(event: &SimEvent, task: &TaskState) -> Option<(String, BTreeMap<String, String>)> {
    match event {
        SimEvent::RobotError { code } => Some((
            DIALOGUE_REPORT_ISSUE.to_owned(),
            BTreeMap::from([("code".to_owned(), code.clone())]),
        )),
        SimEvent::StepCompleted {
            outcome: StepOutcome::DoneCorrect,
            ..
        } => {
            task.next_pending()?;
            let (next, suggestion) = suggestion(task);
            Some((
                DIALOGUE_OFFER_SUGGESTION.to_owned(),
                BTreeMap::from([("next".to_owned(), next), ("suggestion".to_owned(), suggestion)]),
            ))
        }
        SimEvent::StepCompleted { .. } | SimEvent::ItemUnavailable { .. } => None,
    }
}
