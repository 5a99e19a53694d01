//! Test support shared by the integration suites: a random schema generator,
//! the expansion/matching inversion oracle, and random session drivers that
//! check the state-machine invariants after every step.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use convoforge_core::engine::{check_alternation, ConversationEngine, EngineError, Phase, RobotAction};
use convoforge_core::matcher::{expand_template, match_utterance, MatchResult};
use convoforge_core::schema::{DialogueSchema, SlotKind};
use convoforge_core::sim::Fault;
use convoforge_core::wire::{ApiCall, ApiResult, Body, ErrorBody, Event, RobotTurn, SessionEnd, SessionStart, UserTurn};
use convoforge_core::{GatewayContext, Mode, Session, SimTime, WireMessage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ru", "te", "zo", "pa", "ne", "shi", "vo", "da", "gu"];

/// Hands out pseudo-words, never the same one twice.
struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.random_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn phrase(&mut self, rng: &mut ChaCha8Rng) -> String {
        let n = rng.random_range(1..=2);
        (0..n).map(|_| self.fresh(rng)).collect::<Vec<_>>().join(" ")
    }
}

/// A random valid schema document: at most 5 dialogues, catalogs of at most
/// 10 entries with at most 2 synonyms each, catalog slots only. Every
/// template carries one literal word no other template uses, and literal
/// words never occur in catalogs, so every grounding has exactly one parse.
pub fn generate_schema(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = Words { used: HashSet::new() };

    let n_catalogs = rng.random_range(1..=3);
    let catalogs: Vec<Value> = (0..n_catalogs)
        .map(|c| {
            let entries: Vec<Value> = (0..rng.random_range(1..=10))
                .map(|_| {
                    let value = words.phrase(&mut rng);
                    let synonyms: Vec<String> = (0..rng.random_range(0..=2)).map(|_| words.phrase(&mut rng)).collect();
                    json!({ "value": value, "synonyms": synonyms })
                })
                .collect();
            json!({ "name": format!("cat{c}"), "entries": entries })
        })
        .collect();

    let shared: Vec<String> = (0..4).map(|_| words.fresh(&mut rng)).collect();
    let mut dialogues = Vec::new();
    let mut apis = Vec::new();
    for d in 0..rng.random_range(1..=5) {
        let slots: Vec<(String, usize, bool)> = (0..rng.random_range(0..=2))
            .map(|s| (format!("s{s}"), rng.random_range(0..n_catalogs), rng.random_bool(0.5)))
            .collect();
        let utterances: Vec<String> = (0..rng.random_range(1..=3))
            .map(|_| template(&mut rng, &mut words, &shared, &slots))
            .collect();
        let required: Vec<&String> = slots.iter().filter(|s| s.2).map(|s| &s.0).collect();
        let api = if rng.random_bool(0.5) {
            let name = format!("api{d}");
            apis.push(json!({
                "name": name,
                "args": required,
                "routes": { "ok": { "respond": "done" }, "error": { "respond": "failed" } }
            }));
            Value::String(name)
        } else {
            Value::Null
        };
        dialogues.push(json!({
            "name": format!("D{d}"),
            "utterances": utterances,
            "slots": slots.iter().map(|(name, cat, req)| json!({
                "name": name,
                "kind": format!("catalog:cat{cat}"),
                "required": req,
                "elicit": format!("which {name}?")
            })).collect::<Vec<_>>(),
            "api": api,
            "responses": { "on_complete": "ok", "on_no_match": "what?" }
        }));
    }
    json!({ "name": "gen", "catalogs": catalogs, "dialogues": dialogues, "apis": apis }).to_string()
}

/// Literals and slot references in random order, never two slots in a row.
fn template(rng: &mut ChaCha8Rng, words: &mut Words, shared: &[String], slots: &[(String, usize, bool)]) -> String {
    let mut literals = vec![words.fresh(rng)];
    for _ in 0..rng.random_range(0..=2) {
        literals.push(shared.choose(rng).unwrap().clone());
    }
    let mut refs: Vec<String> = slots
        .iter()
        .filter(|_| rng.random_bool(0.7))
        .map(|s| format!("{{{}}}", s.0))
        .collect();
    // separate slot references: at most one more slot than literals
    refs.truncate(literals.len() + 1);
    let mut tokens: Vec<String> = Vec::new();
    let mut lit = literals.into_iter();
    let mut slot = refs.into_iter().peekable();
    let lead_with_slot = slot.peek().is_some() && rng.random_bool(0.5);
    if lead_with_slot {
        tokens.push(slot.next().unwrap());
    }
    for l in lit.by_ref() {
        tokens.push(l);
        if let Some(s) = slot.next() {
            tokens.push(s);
        }
    }
    tokens.join(" ")
}

/// Checks that matching inverts every grounding. Returns the number of
/// groundings checked, or a description of each mismatch.
pub fn inversion(schema: &DialogueSchema) -> Result<usize, Vec<String>> {
    let mut checked = 0;
    let mut bad = Vec::new();
    for d in &schema.dialogues {
        for (u, t) in d.utterances.iter().enumerate() {
            let groundings = expand_template(schema, d, t).expect("generated templates are enumerable");
            for g in groundings {
                checked += 1;
                match match_utterance(schema, &g.surface, None) {
                    MatchResult::Matched(m)
                        if m.dialogue == d.name && m.utterance == u && m.bindings == g.bindings && m.score.as_f64() == 1.0 => {}
                    other => bad.push(format!("{:?} -> {:?}, expected {}#{u} {:?}", g.surface, other, d.name, g.bindings)),
                }
            }
        }
    }
    if bad.is_empty() {
        Ok(checked)
    } else {
        Err(bad)
    }
}

/// Inputs a random operator might say to the default schema in either mode.
fn input_pool(schema: &DialogueSchema) -> Vec<String> {
    let mut pool: Vec<String> = vec![
        "blorp",
        "yes",
        "",
        "the gear",
        "the cog",
        "a crash",
        "bring",
        "bring gear",
        "bring b",
        "bring s",
        "bring plate",
        "status",
        "help",
        "done",
        "good morning robot",
        "i am done",
        "gripper fault",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for d in &schema.dialogues {
        for t in &d.utterances {
            if let Ok(gs) = expand_template(schema, d, t) {
                pool.extend(gs.into_iter().map(|g| g.surface));
            }
        }
    }
    pool
}

fn random_payload(rng: &mut ChaCha8Rng, pool: &[&str]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for k in ["item", "alternative", "detail", "done", "next", "suggestion", "code"] {
        if rng.random_bool(0.6) {
            out.insert(k.to_owned(), (*pool.choose(rng).unwrap()).to_owned());
        }
    }
    out
}

/// Drives the engine with a random operation sequence, checking every
/// invariant after each step.
pub fn engine_sequence(engine: &ConversationEngine, seed: u64, len: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = engine.schema();
    let pool = input_pool(schema);
    let values = ["gear", "spare gear", "wrench", "GRIPPER_FAULT", "x"];
    let statuses = ["ok", "unavailable", "denied", "error", "weird"];
    let mut state = engine.start_session("s");
    let mut now = SimTime::ZERO;

    for step in 0..len {
        now += SimTime::from_millis(rng.random_range(0..3000));
        let before = state.history.len();
        let roll = rng.random_range(0..10);
        let (next, action, grew) = if matches!(state.phase, Phase::AwaitingApi { .. }) && roll < 8 {
            let status = *statuses.choose(&mut rng).unwrap();
            let payload = random_payload(&mut rng, &values);
            let (s, a) = engine
                .apply_api_result(state.clone(), status, &payload, now)
                .map_err(|e| format!("step {step}: {e}"))?;
            (s, a, 1)
        } else if roll == 9 {
            let d = &schema.dialogues[rng.random_range(0..schema.dialogues.len())].name;
            let b = random_payload(&mut rng, &values);
            match engine.initiate_dialogue(state.clone(), d, &b, now) {
                Ok((s, a)) => (s, a, 1),
                Err(EngineError::Busy(_)) if state.phase.is_busy() => continue,
                Err(e) => return Err(format!("step {step}: initiate in {}: {e}", state.phase.name())),
            }
        } else {
            let input = pool.choose(&mut rng).unwrap();
            match engine.user_turn(state.clone(), input, now) {
                Ok((s, a)) => (s, a, 2),
                Err(EngineError::ProtocolViolation(_)) if matches!(state.phase, Phase::AwaitingApi { .. }) => continue,
                Err(e) => return Err(format!("step {step}: user turn in {}: {e}", state.phase.name())),
            }
        };
        if next.history.len() != before + grew {
            return Err(format!("step {step}: history grew by {}", next.history.len() - before));
        }
        check_action(schema, &next, &action).map_err(|e| format!("step {step}: {e}"))?;
        if next.no_match_count > 2 {
            return Err(format!("step {step}: no_match_count {}", next.no_match_count));
        }
        check_alternation(&next.history).map_err(|e| format!("step {step}: {e}"))?;
        state = next;
    }
    Ok(())
}

/// Elicit implies a required, unbound slot; ApiCall implies complete bindings.
pub fn check_action(
    schema: &DialogueSchema,
    state: &convoforge_core::ConversationState,
    action: &RobotAction,
) -> Result<(), String> {
    match action {
        RobotAction::Elicit { slot, .. } => {
            let Phase::Eliciting { dialogue, slot: s } = &state.phase else {
                return Err(format!("elicit left phase {}", state.phase.name()));
            };
            let def = schema.dialogue(dialogue).and_then(|d| d.slot(slot)).ok_or("elicit of undeclared slot")?;
            if s != slot || !def.required || state.bindings.contains_key(slot) {
                return Err(format!("elicit of `{slot}` which is optional or bound"));
            }
        }
        RobotAction::ApiCall { api, args } => {
            let Phase::AwaitingApi { dialogue, .. } = &state.phase else {
                return Err(format!("api call left phase {}", state.phase.name()));
            };
            let d = schema.dialogue(dialogue).unwrap();
            for s in d.required_slots() {
                if state.bindings.get(&s.name) != args.get(&s.name) || !args.contains_key(&s.name) {
                    return Err(format!("api call `{api}` without required slot `{}`", s.name));
                }
            }
            let declared: BTreeSet<&String> = schema.api(api).unwrap().args.iter().collect();
            if args.keys().collect::<BTreeSet<_>>() != declared {
                return Err(format!("api call `{api}` args {args:?} differ from declaration"));
            }
            for (k, v) in args {
                if let Some(SlotKind::Catalog(c)) = d.slot(k).map(|s| &s.kind) {
                    if !schema.catalog(c).unwrap().contains(v) {
                        return Err(format!("argument `{k}` = `{v}` is not canonical"));
                    }
                }
            }
        }
        RobotAction::Respond { .. } | RobotAction::EndDialogue { .. } => {}
    }
    Ok(())
}

/// Wire-level form of [`check_action`]: an elicited slot is a declared
/// required slot; an API call carries exactly the declared arguments, each
/// canonical for its catalog.
pub fn check_wire_turn(schema: &DialogueSchema, t: &RobotTurn) -> Result<(), String> {
    match t.action.as_str() {
        "elicit" => {
            let slot = t.slot.as_deref().ok_or("elicit without slot")?;
            if !schema.dialogues.iter().any(|d| d.slot(slot).is_some_and(|s| s.required)) {
                return Err(format!("elicit of `{slot}`, not a required slot"));
            }
        }
        "api_call" => {
            let api = t.api.as_deref().ok_or("api call without api")?;
            let args = t.args.as_ref().ok_or("api call without args")?;
            let declared: BTreeSet<&String> = schema.api(api).ok_or("undeclared api")?.args.iter().collect();
            if args.keys().collect::<BTreeSet<_>>() != declared {
                return Err(format!("api call `{api}` args {args:?} differ from declaration"));
            }
            for (k, v) in args {
                // several dialogues may share an api; the value must suit one of them
                let ok = schema
                    .dialogues
                    .iter()
                    .filter(|d| d.api.as_deref() == Some(api))
                    .filter_map(|d| d.slot(k))
                    .any(|s| match &s.kind {
                        SlotKind::Catalog(c) => schema.catalog(c).unwrap().contains(v),
                        SlotKind::Text => !v.is_empty(),
                    });
                if !ok {
                    return Err(format!("argument `{k}` = `{v}` fits no dialogue calling `{api}`"));
                }
            }
        }
        "respond" | "end_dialogue" => {}
        other => return Err(format!("unknown action `{other}`")),
    }
    Ok(())
}

/// A random well-formed message of any kind.
pub fn random_message(rng: &mut ChaCha8Rng) -> WireMessage {
    const WORDS: [&str; 8] = ["gear", "spare gear", "ok", "", "\u{e9}t\u{e9}", "a \"quoted\" word", "line\nbreak", "\u{1F916}"];
    let word = |rng: &mut ChaCha8Rng| (*WORDS.choose(rng).unwrap()).to_owned();
    let map = |rng: &mut ChaCha8Rng| {
        let mut m = BTreeMap::new();
        for _ in 0..rng.random_range(0..4) {
            m.insert(format!("k{}", rng.random_range(0..6)), word(rng));
        }
        m
    };
    let opt = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { Some(word(rng)) } else { None };
    let body = match rng.random_range(0..8) {
        0 => Body::UserTurn(UserTurn { text: word(rng) }),
        1 => {
            let action = ["respond", "elicit", "api_call", "end_dialogue"].choose(rng).unwrap().to_string();
            let text = word(rng);
            let slot = opt(rng);
            let api = opt(rng);
            let args = rng.random_bool(0.5).then(|| map(rng));
            Body::RobotTurn(RobotTurn { action, text, slot, api, args })
        }
        2 => Body::ApiCall(ApiCall { api: word(rng), args: map(rng) }),
        3 => Body::ApiResult(ApiResult { status: word(rng), payload: map(rng) }),
        4 => Body::Event(Event { dialogue: word(rng), bindings: map(rng) }),
        5 => Body::SessionStart(SessionStart { schema_name: word(rng), mode: word(rng) }),
        6 => Body::SessionEnd(SessionEnd { reason: word(rng) }),
        _ => Body::Error(ErrorBody { code: word(rng), message: word(rng) }),
    };
    WireMessage::new(word(rng), rng.random::<u64>() >> rng.random_range(0..64), body)
}

/// Drives a full gateway session in `mode` with random turns, assembly
/// attempts and faults. Checks alternation, per-mode turn shape, and that the
/// transcript re-verifies.
pub fn gateway_sequence(ctx: &Arc<GatewayContext>, mode: Mode, seed: u64, len: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = input_pool(&ctx.schema);
    let items: Vec<String> = ctx.task.items.iter().map(|i| i.name.clone()).collect();
    let mut s = Session::new(ctx.clone(), "s", mode).map_err(|e| e.to_string())?;
    s.start_message();
    for step in 0..len {
        match rng.random_range(0..12) {
            0 => {
                let st = rng.random_range(1..=5);
                let using: BTreeSet<String> = s.task().on_workbench().into_iter().filter(|_| rng.random_bool(0.7)).map(String::from).collect();
                let _ = s.assemble_step(st, &using);
            }
            1 => {
                let fault = if rng.random_bool(0.5) {
                    Fault::ItemUnavailable(items.choose(&mut rng).unwrap().clone())
                } else {
                    Fault::RobotError("GRIPPER_FAULT".into())
                };
                s.inject_fault(fault).map_err(|e| format!("step {step}: {e}"))?;
            }
            2 => {
                let _ = s.human_pick(items.choose(&mut rng).unwrap());
            }
            _ => {
                let input = pool.choose(&mut rng).unwrap();
                let out = s.user_turn(input).map_err(|e| format!("step {step}: {e}"))?;
                let kinds: Vec<&str> = out.iter().map(|m| m.robot_turn().unwrap().action.as_str()).collect();
                let ok = match mode {
                    Mode::Baseline => kinds == ["respond"],
                    Mode::Conversation => match kinds.as_slice() {
                        ["api_call", second] => *second != "api_call",
                        [one] => *one != "api_call",
                        _ => false,
                    },
                };
                if !ok {
                    return Err(format!("step {step}: `{input}` produced {kinds:?}"));
                }
                for m in &out {
                    check_wire_turn(&ctx.schema, m.robot_turn().unwrap())
                        .map_err(|e| format!("step {step}: `{input}`: {e}"))?;
                }
            }
        }
        let mut last = s.history().last().and_then(|t| t.action()).cloned();
        for m in s.take_pushed() {
            check_wire_turn(&ctx.schema, m.robot_turn().unwrap()).map_err(|e| format!("step {step}: pushed: {e}"))?;
        }
        if let Some(a @ RobotAction::Elicit { .. }) = last.take() {
            check_action(&ctx.schema, s.conversation(), &a).map_err(|e| format!("step {step}: {e}"))?;
        }
        check_alternation(s.history()).map_err(|e| format!("step {step}: {e}"))?;
    }
    if mode == Mode::Baseline && s.history().iter().any(|t| matches!(t.action(), Some(RobotAction::Elicit { .. }))) {
        return Err("baseline elicited".into());
    }
    s.close("test");
    let entries = convoforge_core::transcript::parse(&s.transcript_jsonl()).map_err(|e| e.to_string())?;
    convoforge_core::transcript::verify(&entries).map_err(|e| e.to_string())?;
    Ok(())
}

/// Re-serializes JSON with reversed key order and extra whitespace.
pub fn scramble(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(m) => {
            let parts: Vec<String> = m
                .iter()
                .rev()
                .map(|(k, v)| format!("\n  {} :\t{}", serde_json::to_string(k).unwrap(), scramble(v)))
                .collect();
            format!("{{ {} }}", parts.join(" ,"))
        }
        other => other.to_string(),
    }
}
