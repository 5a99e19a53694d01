//! Discrete-event model of the collaborative assembly cell: three areas with
//! access permissions, the items laid out in them, five assembly steps and a
//! simulated clock that every action advances.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

pub const AREA_COUNT: usize = 3;
pub const STEP_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("exactly 3 areas required, found {0}")]
    AreaCount(usize),
    #[error("exactly 5 steps required, found {0}")]
    StepCount(usize),
    #[error("at least one robot_only and one shared area required")]
    AccessMix,
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("item `{item}` placed in unknown area `{area}`")]
    UnknownArea { item: String, area: String },
    #[error("step {step} references unknown item `{item}`")]
    DanglingItem { step: u32, item: String },
    #[error("step {step} lists `{item}` with the wrong kind")]
    WrongKind { step: u32, item: String },
    #[error("steps must be numbered 1..5 in order, found {0}")]
    StepIndex(u32),
    #[error("duration `{0}` must be strictly positive")]
    Duration(&'static str),
    #[error("item `{0}` is not a catalog value of the schema")]
    NotInCatalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    RobotOnly,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub name: String,
    pub access: Access,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Component,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub name: String,
    pub kind: ItemKind,
    pub area: String,
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyStep {
    pub index: u32,
    pub required_components: Vec<String>,
    pub required_tool: Option<String>,
}

impl AssemblyStep {
    /// Components followed by the tool, if any.
    pub fn requirements(&self) -> impl Iterator<Item = &str> {
        self.required_components
            .iter()
            .map(String::as_str)
            .chain(self.required_tool.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDurations {
    pub robot_fetch_s: f64,
    pub robot_deliver_s: f64,
    pub human_pick_s: f64,
    pub human_assemble_s: f64,
    pub speech_s_per_token: f64,
}

impl ActionDurations {
    pub fn robot_fetch(&self) -> SimTime {
        SimTime::from_secs_f64(self.robot_fetch_s)
    }
    pub fn robot_deliver(&self) -> SimTime {
        SimTime::from_secs_f64(self.robot_deliver_s)
    }
    pub fn human_pick(&self) -> SimTime {
        SimTime::from_secs_f64(self.human_pick_s)
    }
    pub fn human_assemble(&self) -> SimTime {
        SimTime::from_secs_f64(self.human_assemble_s)
    }
    pub fn speech_per_token(&self) -> SimTime {
        SimTime::from_secs_f64(self.speech_s_per_token)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub areas: Vec<Area>,
    pub items: Vec<Item>,
    pub steps: Vec<AssemblyStep>,
    pub durations: ActionDurations,
}

impl TaskConfig {
    pub fn item(&self, name: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn item_index(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|i| i.name == name)
    }

    pub fn area(&self, name: &str) -> Option<&Area> {
        self.areas.iter().find(|a| a.name == name)
    }

    pub fn step(&self, index: u32) -> Option<&AssemblyStep> {
        self.steps.iter().find(|s| s.index == index)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.areas.len() != AREA_COUNT {
            return Err(TaskError::AreaCount(self.areas.len()));
        }
        if self.steps.len() != STEP_COUNT {
            return Err(TaskError::StepCount(self.steps.len()));
        }
        let has = |a: Access| self.areas.iter().any(|x| x.access == a);
        if !has(Access::RobotOnly) || !has(Access::Shared) {
            return Err(TaskError::AccessMix);
        }
        let mut names = HashSet::new();
        for a in &self.areas {
            if !names.insert(a.name.as_str()) {
                return Err(TaskError::Duplicate(a.name.clone()));
            }
        }
        let mut names = HashSet::new();
        for i in &self.items {
            if !names.insert(i.name.as_str()) {
                return Err(TaskError::Duplicate(i.name.clone()));
            }
            if self.area(&i.area).is_none() {
                return Err(TaskError::UnknownArea {
                    item: i.name.clone(),
                    area: i.area.clone(),
                });
            }
        }
        for (n, step) in self.steps.iter().enumerate() {
            if step.index as usize != n + 1 {
                return Err(TaskError::StepIndex(step.index));
            }
            let expect = |name: &str, kind: ItemKind| match self.item(name) {
                None => Err(TaskError::DanglingItem {
                    step: step.index,
                    item: name.to_owned(),
                }),
                Some(i) if i.kind != kind => Err(TaskError::WrongKind {
                    step: step.index,
                    item: name.to_owned(),
                }),
                Some(_) => Ok(()),
            };
            for c in &step.required_components {
                expect(c, ItemKind::Component)?;
            }
            if let Some(t) = &step.required_tool {
                expect(t, ItemKind::Tool)?;
            }
        }
        let d = &self.durations;
        for (name, v) in [
            ("robot_fetch_s", d.robot_fetch_s),
            ("robot_deliver_s", d.robot_deliver_s),
            ("human_pick_s", d.human_pick_s),
            ("human_assemble_s", d.human_assemble_s),
            ("speech_s_per_token", d.speech_s_per_token),
        ] {
            if !(v.is_finite() && v > 0.0) || SimTime::from_secs_f64(v) == SimTime::ZERO {
                return Err(TaskError::Duration(name));
            }
        }
        Ok(())
    }
}

/// Parses and validates a task document.
pub fn load_task(text: &str) -> Result<TaskConfig, TaskError> {
    let config: TaskConfig = serde_json::from_str(text).map_err(|e| TaskError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("unknown step {0}")]
    UnknownStep(u32),
    #[error("step {0} is already finished")]
    StepFinished(u32),
    #[error("item `{0}` is not on the workbench")]
    NotOnWorkbench(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Area(String),
    Workbench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    InProgress,
    DoneCorrect,
    DoneIncorrect,
}

impl StepStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, StepStatus::DoneCorrect | StepStatus::DoneIncorrect)
    }

    fn can_become(self, next: StepStatus) -> bool {
        use StepStatus::*;
        matches!(
            (self, next),
            (Pending, InProgress) | (InProgress, DoneCorrect) | (InProgress, DoneIncorrect)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchOutcome {
    Delivered,
    Unavailable { alternative: Option<String> },
    AccessDenied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PickOutcome {
    Picked,
    AccessDenied,
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    DoneCorrect,
    DoneIncorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", content = "target", rename_all = "snake_case")]
pub enum Fault {
    ItemUnavailable(String),
    RobotError(String),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::ItemUnavailable(item) => write!(f, "item_unavailable({item})"),
            Fault::RobotError(code) => write!(f, "robot_error({code})"),
        }
    }
}

/// Something the simulator raises for the orchestrator to act on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent {
    ItemUnavailable { item: String },
    RobotError { code: String },
    StepCompleted { step: u32, outcome: StepOutcome },
}

/// Record of one simulator action with the time it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimRecord {
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
        fault: Fault,
    },
}

/// Monotone simulated clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: SimTime,
}

impl SimClock {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn advance(&mut self, by: SimTime) -> SimTime {
        self.now += by;
        self.now
    }
}

/// Mutable world state for one session.
#[derive(Debug, Clone)]
pub struct TaskState {
    config: TaskConfig,
    locations: Vec<Location>,
    available: Vec<bool>,
    status: Vec<StepStatus>,
    pub clock: SimClock,
    log: Vec<SimRecord>,
}

impl TaskState {
    pub fn new(config: TaskConfig) -> Self {
        let locations = config.items.iter().map(|i| Location::Area(i.area.clone())).collect();
        let available = config.items.iter().map(|i| i.available).collect();
        let status = vec![StepStatus::Pending; config.steps.len()];
        TaskState {
            config,
            locations,
            available,
            status,
            clock: SimClock::default(),
            log: Vec::new(),
        }
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    fn index(&self, item: &str) -> Result<usize, SimError> {
        self.config
            .item_index(item)
            .ok_or_else(|| SimError::UnknownItem(item.to_owned()))
    }

    pub fn location(&self, item: &str) -> Option<&Location> {
        self.config.item_index(item).map(|i| &self.locations[i])
    }

    pub fn is_available(&self, item: &str) -> Option<bool> {
        self.config.item_index(item).map(|i| self.available[i])
    }

    pub fn on_workbench(&self) -> BTreeSet<&str> {
        self.config
            .items
            .iter()
            .zip(&self.locations)
            .filter(|(_, l)| **l == Location::Workbench)
            .map(|(i, _)| i.name.as_str())
            .collect()
    }

    pub fn step_status(&self, index: u32) -> Option<StepStatus> {
        self.config
            .steps
            .iter()
            .position(|s| s.index == index)
            .map(|p| self.status[p])
    }

    pub fn steps_finished(&self) -> usize {
        self.status.iter().filter(|s| s.is_finished()).count()
    }

    pub fn steps_correct(&self) -> usize {
        self.status.iter().filter(|s| **s == StepStatus::DoneCorrect).count()
    }

    /// The first step not yet finished.
    pub fn next_pending(&self) -> Option<&AssemblyStep> {
        self.config
            .steps
            .iter()
            .zip(&self.status)
            .find(|(_, s)| !s.is_finished())
            .map(|(step, _)| step)
    }

    /// Drains the action records accumulated since the last call.
    pub fn take_log(&mut self) -> Vec<SimRecord> {
        std::mem::take(&mut self.log)
    }

    /// The robot may fetch from any area. An unavailable item yields the
    /// nearest available item of the same kind (by declaration order) that is
    /// still in an area, if any.
    pub fn robot_fetch(&mut self, item: &str) -> Result<FetchOutcome, SimError> {
        let idx = self.index(item)?;
        let at = self.clock.now();
        let outcome = if !self.available[idx] {
            FetchOutcome::Unavailable {
                alternative: self.alternative_for(idx),
            }
        } else if self.locations[idx] == Location::Workbench {
            FetchOutcome::Delivered
        } else {
            self.clock
                .advance(self.config.durations.robot_fetch() + self.config.durations.robot_deliver());
            self.locations[idx] = Location::Workbench;
            FetchOutcome::Delivered
        };
        self.log.push(SimRecord::Fetch {
            at,
            dur: SimTime::from_millis(self.clock.now().as_millis() - at.as_millis()),
            item: item.to_owned(),
            outcome: match &outcome {
                FetchOutcome::Delivered => "delivered".to_owned(),
                FetchOutcome::Unavailable { .. } => "unavailable".to_owned(),
                FetchOutcome::AccessDenied => "access_denied".to_owned(),
            },
        });
        Ok(outcome)
    }

    fn alternative_for(&self, idx: usize) -> Option<String> {
        let kind = self.config.items[idx].kind;
        self.config
            .items
            .iter()
            .enumerate()
            .filter(|(j, i)| {
                *j != idx && i.kind == kind && self.available[*j] && matches!(self.locations[*j], Location::Area(_))
            })
            .min_by_key(|(j, _)| (j.abs_diff(idx), *j))
            .map(|(_, i)| i.name.clone())
    }

    /// Humans may only take items from shared areas. Every attempt costs a pick.
    pub fn human_pick(&mut self, item: &str) -> Result<PickOutcome, SimError> {
        let idx = self.index(item)?;
        let at = self.clock.now();
        self.clock.advance(self.config.durations.human_pick());
        let outcome = match &self.locations[idx] {
            Location::Workbench => PickOutcome::Picked,
            Location::Area(area) => {
                let shared = self.config.area(area).map(|a| a.access) == Some(Access::Shared);
                if !shared {
                    PickOutcome::AccessDenied
                } else if !self.available[idx] {
                    PickOutcome::Unavailable
                } else {
                    self.locations[idx] = Location::Workbench;
                    PickOutcome::Picked
                }
            }
        };
        self.log.push(SimRecord::Pick {
            at,
            dur: self.config.durations.human_pick(),
            item: item.to_owned(),
            outcome: match outcome {
                PickOutcome::Picked => "picked",
                PickOutcome::AccessDenied => "access_denied",
                PickOutcome::Unavailable => "unavailable",
            }
            .to_owned(),
        });
        Ok(outcome)
    }

    /// Finishes a step. Correct iff `using` is exactly the required components and tool.
    pub fn assemble_step(&mut self, index: u32, using: &BTreeSet<String>) -> Result<(StepOutcome, SimEvent), SimError> {
        let pos = self
            .config
            .steps
            .iter()
            .position(|s| s.index == index)
            .ok_or(SimError::UnknownStep(index))?;
        if self.status[pos].is_finished() {
            return Err(SimError::StepFinished(index));
        }
        for name in using {
            let idx = self.index(name)?;
            if self.locations[idx] != Location::Workbench {
                return Err(SimError::NotOnWorkbench(name.clone()));
            }
        }
        if self.status[pos] == StepStatus::Pending {
            self.status[pos] = StepStatus::InProgress;
        }
        let required: BTreeSet<&str> = self.config.steps[pos].requirements().collect();
        let correct = required.len() == using.len() && using.iter().all(|u| required.contains(u.as_str()));
        let (status, outcome) = if correct {
            (StepStatus::DoneCorrect, StepOutcome::DoneCorrect)
        } else {
            (StepStatus::DoneIncorrect, StepOutcome::DoneIncorrect)
        };
        debug_assert!(self.status[pos].can_become(status));
        self.status[pos] = status;
        let at = self.clock.now();
        self.clock.advance(self.config.durations.human_assemble());
        self.log.push(SimRecord::Assemble {
            at,
            dur: self.config.durations.human_assemble(),
            step: index,
            using: using.iter().cloned().collect(),
            outcome,
        });
        Ok((outcome, SimEvent::StepCompleted { step: index, outcome }))
    }

    pub fn inject_fault(&mut self, fault: Fault) -> Result<SimEvent, SimError> {
        let event = match &fault {
            Fault::ItemUnavailable(item) => {
                let idx = self.index(item)?;
                self.available[idx] = false;
                SimEvent::ItemUnavailable { item: item.clone() }
            }
            Fault::RobotError(code) => SimEvent::RobotError { code: code.clone() },
        };
        self.log.push(SimRecord::Fault {
            at: self.clock.now(),
            fault,
        });
        Ok(event)
    }
}
