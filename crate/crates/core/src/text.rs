//! Utterance normalization and response-template rendering.

use std::collections::BTreeMap;

const STRIPPED: &[char] = &['.', ',', ';', ':', '!', '?', '\'', '"'];

/// Case-folds, strips `.,;:!?'"` and collapses whitespace.
pub fn normalize(input: &str) -> String {
    words(input).join(" ")
}

/// The normalized word sequence of `input`.
pub fn words(input: &str) -> Vec<String> {
    let folded = caseless::default_case_fold_str(input);
    let stripped: String = folded.chars().filter(|c| !STRIPPED.contains(c)).collect();
    stripped.split_whitespace().map(str::to_owned).collect()
}

/// Number of spoken tokens in `text`, used for speech timing.
pub fn token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Names of the `{placeholder}`s in a response template, in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(after[..close].to_owned());
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Substitutes `{name}` with `vars[name]`. Unknown placeholders are left verbatim.
pub fn render(template: &str, vars: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match vars.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
