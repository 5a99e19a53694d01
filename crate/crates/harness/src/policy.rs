//! Scripted operators: an ordered assembly plan, a phrasing table per mode,
//! and seeded noise that swaps nominal requests for vague ones.

use std::collections::BTreeMap;

use convoforge_core::sim::{ItemKind, TaskConfig};
use convoforge_core::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::HarnessError;

/// One step of the plan and the items the operator will ask for, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub step: u32,
    pub items: Vec<String>,
}

/// How the operator asks for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPhrasing {
    /// Full request naming the item.
    pub conversation: String,
    /// Request with the item left out, answered after elicitation.
    pub conversation_vague: String,
    /// Answer to an elicitation prompt.
    pub answer: String,
    pub baseline: String,
    /// Command with the item abbreviated to its first letter.
    pub baseline_vague: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhrasingTable {
    pub items: BTreeMap<String, ItemPhrasing>,
    pub conversation_done: String,
    pub baseline_done: String,
    pub accept_alternative: String,
}

impl PhrasingTable {
    /// Phrasing for every item of the task.
    pub fn for_task(task: &TaskConfig) -> Self {
        let items = task
            .items
            .iter()
            .map(|i| {
                let (verb, vague) = match i.kind {
                    ItemKind::Component => ("bring", "i need a component"),
                    ItemKind::Tool => ("hand", "i need a tool"),
                };
                let stem: String = i.name.chars().take(1).collect();
                let p = ItemPhrasing {
                    conversation: format!("could you {verb} me the {}", i.name),
                    conversation_vague: vague.to_owned(),
                    answer: format!("the {}", i.name),
                    baseline: format!("bring {}", i.name),
                    baseline_vague: format!("bring {stem}"),
                };
                (i.name.clone(), p)
            })
            .collect();
        PhrasingTable {
            items,
            conversation_done: "i am done".to_owned(),
            baseline_done: "done".to_owned(),
            accept_alternative: "yes".to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorPolicy {
    pub plan: Vec<Goal>,
    pub error_rate: f64,
    pub seed: u64,
    pub phrasing: PhrasingTable,
}

impl OperatorPolicy {
    /// Follows the task's steps in order and asks for every required item.
    pub fn nominal(task: &TaskConfig, error_rate: f64, seed: u64) -> Result<Self, HarnessError> {
        let plan = task
            .steps
            .iter()
            .map(|s| Goal {
                step: s.index,
                items: s.requirements().map(str::to_owned).collect(),
            })
            .collect();
        let p = OperatorPolicy {
            plan,
            error_rate,
            seed,
            phrasing: PhrasingTable::for_task(task),
        };
        p.validate(task)?;
        Ok(p)
    }

    pub fn validate(&self, task: &TaskConfig) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(HarnessError::ErrorRate(self.error_rate));
        }
        for goal in &self.plan {
            if task.step(goal.step).is_none() {
                return Err(HarnessError::UnknownGoal(format!("step {}", goal.step)));
            }
            for item in &goal.items {
                if !self.phrasing.items.contains_key(item) || task.item(item).is_none() {
                    return Err(HarnessError::UnknownGoal(item.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// The opening request for `item`, vague with probability `error_rate`.
    pub fn request(&self, item: &str, mode: Mode, rng: &mut ChaCha8Rng) -> &str {
        let p = &self.phrasing.items[item];
        let vague = rng.random_bool(self.error_rate);
        match (mode, vague) {
            (Mode::Conversation, false) => &p.conversation,
            (Mode::Conversation, true) => &p.conversation_vague,
            (Mode::Baseline, false) => &p.baseline,
            (Mode::Baseline, true) => &p.baseline_vague,
        }
    }

    pub fn nominal_request(&self, item: &str, mode: Mode) -> &str {
        let p = &self.phrasing.items[item];
        match mode {
            Mode::Conversation => &p.conversation,
            Mode::Baseline => &p.baseline,
        }
    }

    pub fn done(&self, mode: Mode) -> &str {
        match mode {
            Mode::Conversation => &self.phrasing.conversation_done,
            Mode::Baseline => &self.phrasing.baseline_done,
        }
    }
}
