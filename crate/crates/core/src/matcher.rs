//! Deterministic template matcher.
//!
//! An input matches a template when, after normalization, every literal word of
//! the template appears in order and each slot span binds to a value: the
//! longest catalog surface that lets the remainder of the template match, or a
//! non-empty run of words for free-text slots. Bound catalog values are always
//! canonical. [`expand_template`] enumerates the inverse mapping.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::schema::{Dialogue, DialogueSchema, SlotKind, TemplateToken, UtteranceTemplate};
use crate::text::words;

/// Fraction of a template's literal words matched by the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    pub matched: u32,
    pub total: u32,
}

impl Score {
    pub fn as_f64(self) -> f64 {
        f64::from(self.matched) / f64::from(self.total)
    }
}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        (u64::from(self.matched) * u64::from(other.total)).cmp(&(u64::from(other.matched) * u64::from(self.total)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    pub dialogue: String,
    pub utterance: usize,
    pub bindings: BTreeMap<String, String>,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchResult {
    Matched(Match),
    NoMatch,
}

impl MatchResult {
    pub fn matched(&self) -> Option<&Match> {
        match self {
            MatchResult::Matched(m) => Some(m),
            MatchResult::NoMatch => None,
        }
    }
}

/// Matches `input` against every utterance set in `schema`.
///
/// With `context`, the active dialogue's templates are tried first and win if
/// any of them matches. Otherwise the best match is chosen by higher score, then
/// earlier dialogue, then earlier utterance.
pub fn match_utterance(schema: &DialogueSchema, input: &str, context: Option<&str>) -> MatchResult {
    let input = words(input);
    if let Some(active) = context.and_then(|name| schema.dialogue_index(name)) {
        if let Some(m) = best_in(schema, &input, std::iter::once(active)) {
            return MatchResult::Matched(m);
        }
    }
    match best_in(schema, &input, 0..schema.dialogues.len()) {
        Some(m) => MatchResult::Matched(m),
        None => MatchResult::NoMatch,
    }
}

fn best_in(schema: &DialogueSchema, input: &[String], dialogues: impl Iterator<Item = usize>) -> Option<Match> {
    let mut best: Option<Match> = None;
    for di in dialogues {
        let dialogue = &schema.dialogues[di];
        for (ui, template) in dialogue.utterances.iter().enumerate() {
            let Some(bindings) = match_template(schema, dialogue, template, input) else {
                continue;
            };
            let literals = template.literal_count() as u32;
            let candidate = Match {
                dialogue: dialogue.name.clone(),
                utterance: ui,
                bindings,
                score: Score {
                    matched: literals,
                    total: literals,
                },
            };
            // iteration order already encodes the declaration tie-breaks
            if best.as_ref().is_none_or(|b| candidate.score > b.score) {
                best = Some(candidate);
            }
        }
    }
    best
}

/// Bindings if `input` (normalized words) fully matches `template`.
pub fn match_template(
    schema: &DialogueSchema,
    dialogue: &Dialogue,
    template: &UtteranceTemplate,
    input: &[String],
) -> Option<BTreeMap<String, String>> {
    let mut bindings = BTreeMap::new();
    if match_from(schema, dialogue, &template.tokens, input, &mut bindings) {
        Some(bindings)
    } else {
        None
    }
}

fn match_from(
    schema: &DialogueSchema,
    dialogue: &Dialogue,
    tokens: &[TemplateToken],
    input: &[String],
    bindings: &mut BTreeMap<String, String>,
) -> bool {
    let Some((head, tail)) = tokens.split_first() else {
        return input.is_empty();
    };
    match head {
        TemplateToken::Literal(word) => {
            input.first() == Some(word) && match_from(schema, dialogue, tail, &input[1..], bindings)
        }
        TemplateToken::Slot(name) => {
            let Some(slot) = dialogue.slot(name) else {
                return false;
            };
            match &slot.kind {
                SlotKind::Catalog(catalog) => {
                    let Some(catalog) = schema.catalog(catalog) else {
                        return false;
                    };
                    for surface in catalog.surfaces() {
                        if input.starts_with(&surface.words)
                            && match_from(schema, dialogue, tail, &input[surface.words.len()..], bindings)
                        {
                            bindings.insert(name.clone(), catalog.entries[surface.entry].canonical.clone());
                            return true;
                        }
                    }
                    false
                }
                SlotKind::Text => {
                    for len in (1..=input.len()).rev() {
                        if match_from(schema, dialogue, tail, &input[len..], bindings) {
                            bindings.insert(name.clone(), input[..len].join(" "));
                            return true;
                        }
                    }
                    false
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpandError {
    #[error("not enumerable: slot `{0}` is free text")]
    NotEnumerable(String),
    #[error("unresolved slot reference `{0}`")]
    UnknownSlot(String),
}

/// One concrete phrase produced from a template, with the canonical values it binds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grounding {
    pub surface: String,
    pub bindings: BTreeMap<String, String>,
}

/// Every grounding of `template`, substituting each canonical value and each
/// synonym of every slot's catalog. The count is the product over slots of
/// (canonicals + synonyms).
pub fn expand_template(
    schema: &DialogueSchema,
    dialogue: &Dialogue,
    template: &UtteranceTemplate,
) -> Result<Vec<Grounding>, ExpandError> {
    let mut partial: Vec<(Vec<String>, BTreeMap<String, String>)> = vec![(Vec::new(), BTreeMap::new())];
    for token in &template.tokens {
        match token {
            TemplateToken::Literal(word) => {
                for (parts, _) in &mut partial {
                    parts.push(word.clone());
                }
            }
            TemplateToken::Slot(name) => {
                let slot = dialogue
                    .slot(name)
                    .ok_or_else(|| ExpandError::UnknownSlot(name.clone()))?;
                let SlotKind::Catalog(catalog) = &slot.kind else {
                    return Err(ExpandError::NotEnumerable(name.clone()));
                };
                let catalog = schema
                    .catalog(catalog)
                    .ok_or_else(|| ExpandError::UnknownSlot(name.clone()))?;
                let mut next = Vec::with_capacity(partial.len() * catalog.entries.len());
                for (parts, bound) in &partial {
                    for entry in &catalog.entries {
                        for surface in std::iter::once(&entry.canonical).chain(&entry.synonyms) {
                            let mut parts = parts.clone();
                            parts.push(surface.clone());
                            let mut bound = bound.clone();
                            bound.insert(name.clone(), entry.canonical.clone());
                            next.push((parts, bound));
                        }
                    }
                }
                partial = next;
            }
        }
    }
    Ok(partial
        .into_iter()
        .map(|(parts, bindings)| Grounding {
            surface: parts.join(" "),
            bindings,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;

    fn default_schema() -> DialogueSchema {
        parse_schema(crate::DEFAULT_SCHEMA).unwrap()
    }

    #[test]
    fn exact_grounding_matches_with_full_score() {
        let s = default_schema();
        let m = match_utterance(&s, "bring me the gear", None);
        let m = m.matched().expect("matched");
        assert_eq!(m.dialogue, "RequestItem");
        assert_eq!(m.bindings.get("item").map(String::as_str), Some("gear"));
        assert_eq!(m.score.as_f64(), 1.0);
    }

    #[test]
    fn unrelated_input_does_not_match() {
        assert_eq!(match_utterance(&default_schema(), "good morning robot", None), MatchResult::NoMatch);
        assert_eq!(match_utterance(&default_schema(), "", None), MatchResult::NoMatch);
    }

    #[test]
    fn catalog_decides_between_same_literal_templates() {
        let s = default_schema();
        let m = match_utterance(&s, "Bring me the SPANNER!", None);
        let m = m.matched().unwrap();
        assert_eq!(m.dialogue, "RequestTool");
        assert_eq!(m.bindings["item"], "wrench");
    }

    #[test]
    fn multi_word_values_and_synonyms_resolve_to_canonical() {
        let s = default_schema();
        let m = match_utterance(&s, "could you bring me the base plate", None);
        assert_eq!(m.matched().unwrap().bindings["item"], "base plate");
        let m = match_utterance(&s, "i need the base", None);
        assert_eq!(m.matched().unwrap().bindings["item"], "base plate");
        let m = match_utterance(&s, "there is a problem with the gripper fault", None);
        assert_eq!(m.matched().unwrap().bindings["code"], "GRIPPER_FAULT");
    }

    #[test]
    fn prefixes_of_values_do_not_match() {
        let s = default_schema();
        assert_eq!(match_utterance(&s, "bring me the gea", None), MatchResult::NoMatch);
        assert_eq!(match_utterance(&s, "bring me the gear now", None), MatchResult::NoMatch);
    }

    #[test]
    fn context_dialogue_wins_over_declaration_order() {
        let text = r#"{"name":"ctx","catalogs":[],"dialogues":[
            {"name":"First","utterances":["yes"],"slots":[],"api":null,"responses":{"on_complete":"a","on_no_match":"b"}},
            {"name":"Second","utterances":["yes"],"slots":[],"api":null,"responses":{"on_complete":"a","on_no_match":"b"}}
        ],"apis":[]}"#;
        let s = parse_schema(text).unwrap();
        assert_eq!(match_utterance(&s, "yes", None).matched().unwrap().dialogue, "First");
        assert_eq!(match_utterance(&s, "yes", Some("Second")).matched().unwrap().dialogue, "Second");
        assert_eq!(match_utterance(&s, "yes", Some("Missing")).matched().unwrap().dialogue, "First");
    }

    #[test]
    fn longest_catalog_span_backs_off_when_the_rest_fails() {
        let text = r#"{"name":"bt","catalogs":[{"name":"c","entries":[
            {"value":"base","synonyms":[]},{"value":"base plate","synonyms":[]}]}],
          "dialogues":[{"name":"D","utterances":["the {x} plate"],
            "slots":[{"name":"x","kind":"catalog:c","required":true,"elicit":"?"}],
            "api":null,"responses":{"on_complete":"a","on_no_match":"b"}}],"apis":[]}"#;
        let s = parse_schema(text).unwrap();
        let m = match_utterance(&s, "the base plate", None);
        assert_eq!(m.matched().unwrap().bindings["x"], "base");
    }

    #[test]
    fn free_text_slots_bind_raw_words() {
        let text = r#"{"name":"ft","catalogs":[],"dialogues":[{"name":"Note","utterances":["note that {what} please"],
            "slots":[{"name":"what","kind":"text","required":true,"elicit":"What?"}],
            "api":null,"responses":{"on_complete":"a","on_no_match":"b"}}],"apis":[]}"#;
        let s = parse_schema(text).unwrap();
        let m = match_utterance(&s, "Note that the gear is LOOSE, please", None);
        assert_eq!(m.matched().unwrap().bindings["what"], "the gear is loose");
        assert_eq!(match_utterance(&s, "note that please", None), MatchResult::NoMatch);
        let d = &s.dialogues[0];
        assert_eq!(
            expand_template(&s, d, &d.utterances[0]),
            Err(ExpandError::NotEnumerable("what".into()))
        );
    }

    #[test]
    fn expansion_counts_follow_the_product_rule() {
        let text = r#"{"name":"ex","catalogs":[
            {"name":"a","entries":[{"value":"x","synonyms":[]},{"value":"y","synonyms":[]},{"value":"z","synonyms":[]}]},
            {"name":"b","entries":[{"value":"p","synonyms":[]},{"value":"q","synonyms":[]}]}],
          "dialogues":[{"name":"D","utterances":["bring me the {one}","put {one} on {two}"],
            "slots":[{"name":"one","kind":"catalog:a","required":true,"elicit":"?"},
                     {"name":"two","kind":"catalog:b","required":true,"elicit":"?"}],
            "api":null,"responses":{"on_complete":"a","on_no_match":"b"}}],"apis":[]}"#;
        let s = parse_schema(text).unwrap();
        let d = &s.dialogues[0];
        assert_eq!(expand_template(&s, d, &d.utterances[0]).unwrap().len(), 3);
        assert_eq!(expand_template(&s, d, &d.utterances[1]).unwrap().len(), 6);
    }

    #[test]
    fn request_tool_groundings_match_brute_force_count() {
        // hand-computed from the fixture: tool catalog has 2 canonicals + 2 synonyms = 4
        // surfaces; RequestTool has 3 single-slot templates and 2 slot-free templates.
        let s = default_schema();
        let d = s.dialogue("RequestTool").unwrap();
        let total: usize = d
            .utterances
            .iter()
            .map(|u| expand_template(&s, d, u).unwrap().len())
            .sum();
        assert_eq!(total, 3 * 4 + 2);
    }

    #[test]
    fn every_default_grounding_inverts() {
        let s = default_schema();
        for d in &s.dialogues {
            for (ui, u) in d.utterances.iter().enumerate() {
                let Ok(groundings) = expand_template(&s, d, u) else {
                    continue;
                };
                for g in groundings {
                    let m = match_utterance(&s, &g.surface, None);
                    let m = m.matched().unwrap_or_else(|| panic!("no match for {:?}", g.surface));
                    assert_eq!((m.dialogue.as_str(), m.utterance), (d.name.as_str(), ui), "{}", g.surface);
                    assert_eq!(m.bindings, g.bindings);
                }
            }
        }
    }
}
