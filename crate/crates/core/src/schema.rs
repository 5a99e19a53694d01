//! Declarative dialogue schema: catalogs of slot values, dialogues with their
//! utterance sets and slots, and the dialogue APIs they dispatch to.
//!
//! The on-disk form is a JSON document (see [`parse_schema`]); unknown keys are
//! rejected. A parsed [`DialogueSchema`] always satisfies every structural rule
//! checked by [`DialogueSchema::validate`], so downstream code can index into it
//! without re-checking.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize, words};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{rule}: {element}")]
    Invariant { rule: &'static str, element: String },
}

impl SchemaError {
    fn invariant(rule: &'static str, element: impl Into<String>) -> Self {
        SchemaError::Invariant {
            rule,
            element: element.into(),
        }
    }

    /// The violated rule, for invariant errors.
    pub fn rule(&self) -> Option<&'static str> {
        match self {
            SchemaError::Invariant { rule, .. } => Some(rule),
            SchemaError::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueSchema {
    pub name: String,
    pub catalogs: Vec<Catalog>,
    pub dialogues: Vec<Dialogue>,
    pub apis: Vec<ApiDef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub canonical: String,
    pub synonyms: Vec<String>,
}

/// A surface form of a catalog entry, pre-split into normalized words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Surface {
    pub words: Vec<String>,
    pub entry: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    pub name: String,
    pub entries: Vec<CatalogEntry>,
    /// Longest first; ties keep declaration order.
    surfaces: Vec<Surface>,
}

impl Catalog {
    pub fn new(name: impl Into<String>, entries: Vec<CatalogEntry>) -> Self {
        let mut surfaces: Vec<Surface> = entries
            .iter()
            .enumerate()
            .flat_map(|(i, e)| {
                std::iter::once(&e.canonical)
                    .chain(e.synonyms.iter())
                    .map(move |s| Surface {
                        words: words(s),
                        entry: i,
                    })
            })
            .collect();
        surfaces.sort_by_key(|s| std::cmp::Reverse(s.words.len()));
        Catalog {
            name: name.into(),
            entries,
            surfaces,
        }
    }

    pub fn surfaces(&self) -> &[Surface] {
        &self.surfaces
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.entries.iter().any(|e| e.canonical == canonical)
    }

    /// Canonical value for an exact surface (after normalization).
    pub fn resolve(&self, text: &str) -> Option<&str> {
        let w = words(text);
        self.surfaces
            .iter()
            .find(|s| s.words == w)
            .map(|s| self.entries[s.entry].canonical.as_str())
    }

    /// Leftmost-longest occurrence of any surface inside `input` (word-aligned).
    pub fn find_in(&self, input: &[String]) -> Option<&str> {
        for start in 0..input.len() {
            for s in &self.surfaces {
                if !s.words.is_empty() && input[start..].starts_with(&s.words) {
                    return Some(&self.entries[s.entry].canonical);
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotKind {
    Catalog(String),
    Text,
}

impl SlotKind {
    fn parse(s: &str) -> Option<SlotKind> {
        if s == "text" {
            Some(SlotKind::Text)
        } else {
            s.strip_prefix("catalog:")
                .filter(|c| is_identifier(c))
                .map(|c| SlotKind::Catalog(c.to_owned()))
        }
    }

    fn to_file(&self) -> String {
        match self {
            SlotKind::Catalog(c) => format!("catalog:{c}"),
            SlotKind::Text => "text".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotDef {
    pub name: String,
    pub kind: SlotKind,
    pub required: bool,
    pub elicit_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateToken {
    Literal(String),
    Slot(String),
}

/// One example phrase. Literal text is stored as normalized words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceTemplate {
    pub source: String,
    pub tokens: Vec<TemplateToken>,
}

impl UtteranceTemplate {
    /// Splits `{slot}` markers out of the phrase. Structural rules (adjacency,
    /// literal presence, slot resolution) are checked by schema validation.
    pub fn parse(source: &str) -> Result<Self, String> {
        let mut tokens = Vec::new();
        let mut rest = source;
        loop {
            let open = rest.find('{');
            let literal = &rest[..open.unwrap_or(rest.len())];
            if literal.contains('}') {
                return Err("unbalanced `}`".to_owned());
            }
            tokens.extend(words(literal).into_iter().map(TemplateToken::Literal));
            let Some(open) = open else { break };
            let after = &rest[open + 1..];
            let close = after.find('}').ok_or_else(|| "unclosed `{`".to_owned())?;
            let name = &after[..close];
            if !is_identifier(name) {
                return Err(format!("invalid slot name `{name}`"));
            }
            tokens.push(TemplateToken::Slot(name.to_owned()));
            rest = &after[close + 1..];
        }
        Ok(UtteranceTemplate {
            source: source.to_owned(),
            tokens,
        })
    }

    pub fn literal_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| matches!(t, TemplateToken::Literal(_)))
            .count()
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            TemplateToken::Slot(s) => Some(s.as_str()),
            TemplateToken::Literal(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseTemplates {
    pub on_complete: String,
    pub on_no_match: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub name: String,
    pub utterances: Vec<UtteranceTemplate>,
    pub slots: Vec<SlotDef>,
    pub api: Option<String>,
    pub responses: ResponseTemplates,
}

impl Dialogue {
    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn required_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(|s| s.required)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    Respond(String),
    Trigger(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiDef {
    pub name: String,
    pub args: Vec<String>,
    pub routes: BTreeMap<String, Route>,
}

impl ApiDef {
    /// The route for `status`, falling back to the mandatory `error` route.
    pub fn route(&self, status: &str) -> &Route {
        self.routes
            .get(status)
            .or_else(|| self.routes.get("error"))
            .expect("validated schema always has an error route")
    }
}

impl DialogueSchema {
    pub fn dialogue(&self, name: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.name == name)
    }

    pub fn dialogue_index(&self, name: &str) -> Option<usize> {
        self.dialogues.iter().position(|d| d.name == name)
    }

    pub fn catalog(&self, name: &str) -> Option<&Catalog> {
        self.catalogs.iter().find(|c| c.name == name)
    }

    pub fn api(&self, name: &str) -> Option<&ApiDef> {
        self.apis.iter().find(|a| a.name == name)
    }

    /// Checks every structural rule. [`parse_schema`] calls this; it is public
    /// for schemas assembled in code.
    pub fn validate(&self) -> Result<(), SchemaError> {
        use SchemaError as E;
        if !is_identifier(&self.name) {
            return Err(E::invariant("invalid identifier", format!("schema name `{}`", self.name)));
        }

        let mut seen = HashSet::new();
        for c in &self.catalogs {
            if !is_identifier(&c.name) {
                return Err(E::invariant("invalid identifier", format!("catalog `{}`", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(E::invariant("duplicate catalog name", &c.name));
            }
            if c.entries.is_empty() {
                return Err(E::invariant("empty catalog", &c.name));
            }
            let mut canon = HashSet::new();
            for e in &c.entries {
                for s in std::iter::once(&e.canonical).chain(&e.synonyms) {
                    if normalize(s).is_empty() {
                        return Err(E::invariant("empty string", format!("catalog `{}`", c.name)));
                    }
                }
                if !canon.insert(e.canonical.as_str()) {
                    return Err(E::invariant(
                        "duplicate catalog value",
                        format!("catalog `{}` value `{}`", c.name, e.canonical),
                    ));
                }
            }
            let mut surfaces = HashSet::new();
            for s in c.surfaces() {
                if !surfaces.insert(&s.words) {
                    return Err(E::invariant(
                        "ambiguous catalog surface",
                        format!("catalog `{}` surface `{}`", c.name, s.words.join(" ")),
                    ));
                }
            }
        }

        let mut seen = HashSet::new();
        for d in &self.dialogues {
            if !is_identifier(&d.name) {
                return Err(E::invariant("invalid identifier", format!("dialogue `{}`", d.name)));
            }
            if !seen.insert(d.name.as_str()) {
                return Err(E::invariant("duplicate dialogue name", &d.name));
            }
        }

        let mut seen = HashSet::new();
        for a in &self.apis {
            if !is_identifier(&a.name) {
                return Err(E::invariant("invalid identifier", format!("api `{}`", a.name)));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(E::invariant("duplicate api name", &a.name));
            }
            for status in ["ok", "error"] {
                if !a.routes.contains_key(status) {
                    return Err(E::invariant(
                        "missing result route",
                        format!("api `{}` status `{status}`", a.name),
                    ));
                }
            }
            for (status, route) in &a.routes {
                match route {
                    Route::Trigger(target) if self.dialogue(target).is_none() => {
                        return Err(E::invariant(
                            "unknown trigger target",
                            format!("api `{}` status `{status}` triggers `{target}`", a.name),
                        ));
                    }
                    Route::Respond(t) if t.trim().is_empty() => {
                        return Err(E::invariant(
                            "empty string",
                            format!("api `{}` status `{status}` response", a.name),
                        ));
                    }
                    _ => {}
                }
            }
        }

        for d in &self.dialogues {
            self.validate_dialogue(d)?;
        }
        Ok(())
    }

    fn validate_dialogue(&self, d: &Dialogue) -> Result<(), SchemaError> {
        use SchemaError as E;
        let mut names = HashSet::new();
        for s in &d.slots {
            if !is_identifier(&s.name) {
                return Err(E::invariant("invalid identifier", format!("dialogue `{}` slot `{}`", d.name, s.name)));
            }
            if !names.insert(s.name.as_str()) {
                return Err(E::invariant("duplicate slot name", format!("dialogue `{}` slot `{}`", d.name, s.name)));
            }
            if let SlotKind::Catalog(c) = &s.kind {
                if self.catalog(c).is_none() {
                    return Err(E::invariant(
                        "unknown catalog",
                        format!("dialogue `{}` slot `{}` names catalog `{c}`", d.name, s.name),
                    ));
                }
            }
            if s.required && s.elicit_prompt.trim().is_empty() {
                return Err(E::invariant(
                    "missing elicit prompt",
                    format!("dialogue `{}` slot `{}`", d.name, s.name),
                ));
            }
        }

        if d.utterances.is_empty() {
            return Err(E::invariant("empty utterance set", &d.name));
        }
        for u in &d.utterances {
            let at = || format!("dialogue `{}` utterance `{}`", d.name, u.source);
            if u.literal_count() == 0 {
                return Err(E::invariant("template without literal", at()));
            }
            if u.tokens
                .windows(2)
                .any(|w| matches!((&w[0], &w[1]), (TemplateToken::Slot(_), TemplateToken::Slot(_))))
            {
                return Err(E::invariant("adjacent slot references", at()));
            }
            let mut used = HashSet::new();
            for slot in u.slot_names() {
                if d.slot(slot).is_none() {
                    return Err(E::invariant(
                        "unresolved slot reference",
                        format!("{} references `{slot}`", at()),
                    ));
                }
                if !used.insert(slot) {
                    return Err(E::invariant("duplicate slot reference", format!("{} repeats `{slot}`", at())));
                }
            }
        }

        for (which, t) in [("on_complete", &d.responses.on_complete), ("on_no_match", &d.responses.on_no_match)] {
            if t.trim().is_empty() {
                return Err(E::invariant("empty string", format!("dialogue `{}` {which}", d.name)));
            }
        }

        if let Some(api) = &d.api {
            let def = self.api(api).ok_or_else(|| {
                E::invariant("unknown api", format!("dialogue `{}` references `{api}`", d.name))
            })?;
            let args: BTreeSet<&str> = def.args.iter().map(String::as_str).collect();
            let required: BTreeSet<&str> = d.required_slots().map(|s| s.name.as_str()).collect();
            if args != required || args.len() != def.args.len() {
                return Err(E::invariant(
                    "api arguments mismatch required slots",
                    format!("dialogue `{}` api `{api}`", d.name),
                ));
            }
        }
        Ok(())
    }

    /// Pretty-printed schema document in the same format [`parse_schema`] reads.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SchemaFile::from(self)).expect("schema serializes")
    }
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses and validates a schema document.
pub fn parse_schema(text: &str) -> Result<DialogueSchema, SchemaError> {
    let file: SchemaFile = serde_json::from_str(text).map_err(|e| SchemaError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let schema = file.into_schema()?;
    schema.validate()?;
    Ok(schema)
}

// On-disk document shape.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    name: String,
    catalogs: Vec<CatalogFile>,
    dialogues: Vec<DialogueFile>,
    apis: Vec<ApiFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    name: String,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    value: String,
    #[serde(default)]
    synonyms: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueFile {
    name: String,
    utterances: Vec<String>,
    slots: Vec<SlotFile>,
    api: Option<String>,
    responses: ResponsesFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotFile {
    name: String,
    kind: String,
    required: bool,
    elicit: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponsesFile {
    on_complete: String,
    on_no_match: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApiFile {
    name: String,
    args: Vec<String>,
    routes: BTreeMap<String, RouteFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RouteFile {
    Respond(RespondFile),
    Trigger(TriggerFile),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RespondFile {
    respond: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerFile {
    trigger: String,
}

impl SchemaFile {
    fn into_schema(self) -> Result<DialogueSchema, SchemaError> {
        let catalogs = self
            .catalogs
            .into_iter()
            .map(|c| {
                let entries = c
                    .entries
                    .into_iter()
                    .map(|e| CatalogEntry {
                        canonical: e.value,
                        synonyms: e.synonyms,
                    })
                    .collect();
                Catalog::new(c.name, entries)
            })
            .collect();

        let mut dialogues = Vec::with_capacity(self.dialogues.len());
        for d in self.dialogues {
            let mut utterances = Vec::with_capacity(d.utterances.len());
            for u in &d.utterances {
                let t = UtteranceTemplate::parse(u).map_err(|why| {
                    SchemaError::invariant("malformed template", format!("dialogue `{}` utterance `{u}`: {why}", d.name))
                })?;
                utterances.push(t);
            }
            let mut slots = Vec::with_capacity(d.slots.len());
            for s in d.slots {
                let kind = SlotKind::parse(&s.kind).ok_or_else(|| {
                    SchemaError::invariant(
                        "invalid slot kind",
                        format!("dialogue `{}` slot `{}` kind `{}`", d.name, s.name, s.kind),
                    )
                })?;
                slots.push(SlotDef {
                    name: s.name,
                    kind,
                    required: s.required,
                    elicit_prompt: s.elicit,
                });
            }
            dialogues.push(Dialogue {
                name: d.name,
                utterances,
                slots,
                api: d.api,
                responses: ResponseTemplates {
                    on_complete: d.responses.on_complete,
                    on_no_match: d.responses.on_no_match,
                },
            });
        }

        let apis = self
            .apis
            .into_iter()
            .map(|a| ApiDef {
                name: a.name,
                args: a.args,
                routes: a
                    .routes
                    .into_iter()
                    .map(|(k, r)| {
                        let route = match r {
                            RouteFile::Respond(r) => Route::Respond(r.respond),
                            RouteFile::Trigger(t) => Route::Trigger(t.trigger),
                        };
                        (k, route)
                    })
                    .collect(),
            })
            .collect();

        Ok(DialogueSchema {
            name: self.name,
            catalogs,
            dialogues,
            apis,
        })
    }
}

impl From<&DialogueSchema> for SchemaFile {
    fn from(s: &DialogueSchema) -> Self {
        SchemaFile {
            name: s.name.clone(),
            catalogs: s
                .catalogs
                .iter()
                .map(|c| CatalogFile {
                    name: c.name.clone(),
                    entries: c
                        .entries
                        .iter()
                        .map(|e| EntryFile {
                            value: e.canonical.clone(),
                            synonyms: e.synonyms.clone(),
                        })
                        .collect(),
                })
                .collect(),
            dialogues: s
                .dialogues
                .iter()
                .map(|d| DialogueFile {
                    name: d.name.clone(),
                    utterances: d.utterances.iter().map(|u| u.source.clone()).collect(),
                    slots: d
                        .slots
                        .iter()
                        .map(|sl| SlotFile {
                            name: sl.name.clone(),
                            kind: sl.kind.to_file(),
                            required: sl.required,
                            elicit: sl.elicit_prompt.clone(),
                        })
                        .collect(),
                    api: d.api.clone(),
                    responses: ResponsesFile {
                        on_complete: d.responses.on_complete.clone(),
                        on_no_match: d.responses.on_no_match.clone(),
                    },
                })
                .collect(),
            apis: s
                .apis
                .iter()
                .map(|a| ApiFile {
                    name: a.name.clone(),
                    args: a.args.clone(),
                    routes: a
                        .routes
                        .iter()
                        .map(|(k, r)| {
                            let rf = match r {
                                Route::Respond(t) => RouteFile::Respond(RespondFile { respond: t.clone() }),
                                Route::Trigger(t) => RouteFile::Trigger(TriggerFile { trigger: t.clone() }),
                            };
                            (k.clone(), rf)
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}
