use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{lines, CorpusError, CorpusErrorKind};
use crate::knowledge::{Status, Topic};

pub const DEFAULT_FALLBACK: &str = "action_default_fallback";
pub const DEFAULT_LISTEN: &str = "action_listen";

/// Placeholder reserved for the knowledge-store answer text.
pub const ANSWER_PLACEHOLDER: &str = "answer";

/// Key of a response template: the action plus an optional status variant,
/// written `utter_water_quality.unsafe` in the domain file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemplateKey {
    pub action: String,
    pub status: Option<Status>,
}

impl TemplateKey {
    pub fn parse(raw: &str) -> Result<Self, String> {
        match raw.split_once('.') {
            None => Ok(TemplateKey {
                action: raw.to_string(),
                status: None,
            }),
            Some((action, status)) => Ok(TemplateKey {
                action: action.to_string(),
                status: Some(status.parse()?),
            }),
        }
    }
}

impl fmt::Display for TemplateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.status {
            None => f.write_str(&self.action),
            Some(s) => write!(f, "{}.{}", self.action, s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub intents: Vec<String>,
    pub entity_types: Vec<String>,
    pub slots: Vec<String>,
    pub actions: Vec<String>,
    /// Raw template key (see [`TemplateKey`]) to its template strings.
    pub templates: BTreeMap<String, Vec<String>>,
    /// Actions whose response is looked up in the knowledge store.
    pub answers: BTreeMap<String, Topic>,
    pub fallback_action: String,
    pub listen_action: String,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            intents: Vec::new(),
            entity_types: Vec::new(),
            slots: Vec::new(),
            actions: vec![DEFAULT_LISTEN.to_string(), DEFAULT_FALLBACK.to_string()],
            templates: BTreeMap::new(),
            answers: BTreeMap::new(),
            fallback_action: DEFAULT_FALLBACK.to_string(),
            listen_action: DEFAULT_LISTEN.to_string(),
        }
    }
}

impl DomainSpec {
    pub fn intent_index(&self, intent: &str) -> Option<usize> {
        self.intents.iter().position(|i| i == intent)
    }

    pub fn action_index(&self, action: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }

    pub fn slot_index(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    pub fn has_action(&self, action: &str) -> bool {
        self.action_index(action).is_some()
    }

    /// Actions that produce text for the user. After one of these the
    /// turn ends with the listen action.
    pub fn is_utterance(&self, action: &str) -> bool {
        action != self.listen_action && (action.starts_with("utter_") || action == self.fallback_action)
    }

    /// Template for an action, preferring the status variant when one is given.
    pub fn template(&self, action: &str, status: Option<Status>) -> Option<&str> {
        if let Some(status) = status {
            let key = TemplateKey {
                action: action.to_string(),
                status: Some(status),
            };
            if let Some(t) = self.templates.get(&key.to_string()).and_then(|v| v.first()) {
                return Some(t);
            }
        }
        self.templates.get(action).and_then(|v| v.first()).map(String::as_str)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Intents,
    Entities,
    Slots,
    Actions,
    Templates,
    Answers,
}

/// Parse a domain file.
///
/// ```text
/// intents:
///   - greet
/// slots:
///   - location
/// actions:
///   - utter_greet
/// templates:
///   utter_greet: Hello! Ask me about water in your area.
///   utter_water_quality.safe: It is safe to drink the water.
/// answers:
///   utter_water_quality: drinking_quality
/// fallback_action: action_default_fallback
/// ```
///
/// A missing `fallback_action`/`listen_action` defaults to
/// [`DEFAULT_FALLBACK`]/[`DEFAULT_LISTEN`]; both are added to `actions` if
/// not declared there.
pub fn parse_domain(source: &str) -> Result<DomainSpec, CorpusError> {
    let mut d = DomainSpec {
        actions: Vec::new(),
        ..DomainSpec::default()
    };
    let mut section: Option<Section> = None;
    // (line, raw key) of every template, for the post-parse label check.
    let mut template_lines: Vec<(usize, String)> = Vec::new();
    let mut answer_lines: Vec<(usize, String)> = Vec::new();

    for (no, raw) in lines(source) {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let syntax = |m: String| CorpusError::new(CorpusErrorKind::Syntax, no, m);
        let indented = line.starts_with(' ') || line.starts_with('\t');

        if !indented && !line.starts_with("- ") {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| syntax(format!("expected a section header, got '{line}'")))?;
            let value = value.trim();
            section = None;
            match (key.trim(), value.is_empty()) {
                ("intents", true) => section = Some(Section::Intents),
                ("entities", true) => section = Some(Section::Entities),
                ("slots", true) => section = Some(Section::Slots),
                ("actions", true) => section = Some(Section::Actions),
                ("templates", true) => section = Some(Section::Templates),
                ("answers", true) => section = Some(Section::Answers),
                ("fallback_action", false) => d.fallback_action = label(value).map_err(syntax)?,
                ("listen_action", false) => d.listen_action = label(value).map_err(syntax)?,
                (k, _) => return Err(syntax(format!("unknown domain key '{k}'"))),
            }
            continue;
        }

        let body = line.trim();
        match section {
            None => return Err(syntax("entry outside of a section".into())),
            Some(Section::Templates) | Some(Section::Answers) => {
                let (key, value) = body
                    .split_once(':')
                    .ok_or_else(|| syntax("expected '<key>: <value>'".into()))?;
                let key = key.trim().to_string();
                let value = value.trim().to_string();
                if key.is_empty() || value.is_empty() {
                    return Err(syntax("empty key or value".into()));
                }
                if section == Some(Section::Templates) {
                    TemplateKey::parse(&key).map_err(syntax)?;
                    d.templates.entry(key.clone()).or_default().push(value);
                    template_lines.push((no, key));
                } else {
                    let topic: Topic = value.parse().map_err(syntax)?;
                    if d.answers.insert(key.clone(), topic).is_some() {
                        return Err(syntax(format!("duplicate answer entry '{key}'")));
                    }
                    answer_lines.push((no, key));
                }
            }
            Some(list) => {
                let item = body
                    .strip_prefix("- ")
                    .ok_or_else(|| syntax("expected '- <label>'".into()))?;
                let item = label(item.trim()).map_err(syntax)?;
                let target = match list {
                    Section::Intents => &mut d.intents,
                    Section::Entities => &mut d.entity_types,
                    Section::Slots => &mut d.slots,
                    _ => &mut d.actions,
                };
                if target.contains(&item) {
                    return Err(syntax(format!("duplicate label '{item}'")));
                }
                target.push(item);
            }
        }
    }

    for extra in [d.listen_action.clone(), d.fallback_action.clone()] {
        if !d.actions.contains(&extra) {
            d.actions.push(extra);
        }
    }

    let unknown = |no: usize, m: String| CorpusError::new(CorpusErrorKind::UnknownLabel, no, m);
    for (no, key) in &template_lines {
        let key = TemplateKey::parse(key).expect("checked while parsing");
        if !d.has_action(&key.action) {
            return Err(unknown(*no, format!("template for undeclared action '{}'", key.action)));
        }
    }
    for (key, list) in &d.templates {
        let no = template_lines.iter().find(|(_, k)| k == key).map_or(1, |(n, _)| *n);
        for t in list {
            for ph in placeholders(t) {
                if ph != ANSWER_PLACEHOLDER && d.slot_index(ph).is_none() {
                    return Err(unknown(
                        no,
                        format!("template placeholder '{{{ph}}}' is not a declared slot"),
                    ));
                }
            }
        }
    }
    for (no, action) in &answer_lines {
        if !d.has_action(action) {
            return Err(unknown(*no, format!("answer entry for undeclared action '{action}'")));
        }
    }
    Ok(d)
}

fn label(s: &str) -> Result<String, String> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == ':' || c == '.') {
        Err(format!("invalid label '{s}'"))
    } else {
        Ok(s.to_string())
    }
}

/// Names inside `{...}` in a template.
pub(crate) fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

pub fn serialize_domain(d: &DomainSpec) -> String {
    let mut out = String::new();
    for (header, items) in [
        ("intents", &d.intents),
        ("entities", &d.entity_types),
        ("slots", &d.slots),
        ("actions", &d.actions),
    ] {
        out.push_str(header);
        out.push_str(":\n");
        for item in items {
            out.push_str("  - ");
            out.push_str(item);
            out.push('\n');
        }
    }
    out.push_str("templates:\n");
    for (key, list) in &d.templates {
        for t in list {
            out.push_str(&format!("  {key}: {t}\n"));
        }
    }
    out.push_str("answers:\n");
    for (action, topic) in &d.answers {
        out.push_str(&format!("  {action}: {}\n", topic.as_str()));
    }
    out.push_str(&format!("fallback_action: {}\n", d.fallback_action));
    out.push_str(&format!("listen_action: {}\n", d.listen_action));
    out
}
