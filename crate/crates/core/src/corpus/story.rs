use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{lines, CorpusError, CorpusErrorKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Step {
    UserTurn {
        intent: String,
        #[serde(default)]
        entities: BTreeMap<String, String>,
    },
    BotAction {
        action: String,
    },
}

impl Step {
    pub fn user(intent: impl Into<String>) -> Self {
        Step::UserTurn {
            intent: intent.into(),
            entities: BTreeMap::new(),
        }
    }

    pub fn user_with(intent: impl Into<String>, entities: &[(&str, &str)]) -> Self {
        Step::UserTurn {
            intent: intent.into(),
            entities: entities.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn bot(action: impl Into<String>) -> Self {
        Step::BotAction { action: action.into() }
    }

    pub fn is_user(&self) -> bool {
        matches!(self, Step::UserTurn { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub name: String,
    pub steps: Vec<Step>,
}

impl Story {
    pub fn new(name: impl Into<String>, steps: Vec<Step>) -> Self {
        Story {
            name: name.into(),
            steps,
        }
    }

    /// Checks the step-order invariants. Returns a description of the
    /// first violation.
    pub fn check(&self) -> Result<(), String> {
        match self.steps.first() {
            None => return Err("story has no steps".into()),
            Some(s) if !s.is_user() => return Err("story must start with a user turn".into()),
            _ => {}
        }
        if self.steps.windows(2).any(|w| w[0].is_user() && w[1].is_user()) {
            return Err("two consecutive user turns without a bot action".into());
        }
        Ok(())
    }
}

/// Parse a stories file.
///
/// ```text
/// ## happy path
/// * greet
///   - utter_greet
/// * waterquality{"location": "Cape Town"}
///   - utter_water_quality
/// ```
pub fn parse_stories_markdown(source: &str) -> Result<Vec<Story>, CorpusError> {
    let mut stories = Vec::new();
    let mut current: Option<(Story, usize)> = None;

    let finish = |cur: Option<(Story, usize)>, out: &mut Vec<Story>| -> Result<(), CorpusError> {
        if let Some((story, line)) = cur {
            if story.steps.is_empty() {
                return Err(CorpusError::new(
                    CorpusErrorKind::EmptySection,
                    line,
                    format!("story '{}' has no steps", story.name),
                ));
            }
            out.push(story);
        }
        Ok(())
    };

    for (no, raw) in lines(source) {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with("<!--") {
            continue;
        }
        let syntax = |m: &str| CorpusError::new(CorpusErrorKind::Syntax, no, m);

        if let Some(name) = line.strip_prefix("## ").or(if line == "##" { Some("") } else { None }) {
            finish(current.take(), &mut stories)?;
            current = Some((Story::new(name.trim(), Vec::new()), no));
            continue;
        }
        let Some((story, _)) = current.as_mut() else {
            return Err(syntax("step outside of a story section"));
        };

        if let Some(body) = line.strip_prefix("* ") {
            let step = parse_user_turn(body.trim()).map_err(|m| syntax(&m))?;
            match story.steps.last() {
                Some(prev) if prev.is_user() => return Err(syntax("two consecutive user turns without a bot action")),
                _ => {}
            }
            story.steps.push(step);
        } else if let Some(body) = line.strip_prefix("  - ") {
            let action = body.trim();
            if action.is_empty() || action.chars().any(char::is_whitespace) {
                return Err(syntax("invalid action label"));
            }
            if story.steps.is_empty() {
                return Err(syntax("story must start with a user turn"));
            }
            story.steps.push(Step::bot(action));
        } else if line.trim_start().starts_with("- ") {
            return Err(syntax("bot actions must be indented by exactly two spaces"));
        } else if line.trim_start().starts_with("* ") {
            return Err(syntax("user turns must not be indented"));
        } else {
            return Err(syntax("expected '* <intent>' or '  - <action>'"));
        }
    }
    finish(current, &mut stories)?;
    Ok(stories)
}

fn parse_user_turn(body: &str) -> Result<Step, String> {
    let (intent, map) = match body.find('{') {
        Some(i) => (&body[..i], Some(&body[i..])),
        None => (body, None),
    };
    let intent = intent.trim();
    if intent.is_empty() || intent.chars().any(char::is_whitespace) {
        return Err(format!("invalid intent label '{intent}'"));
    }
    let entities = match map {
        Some(m) => {
            serde_json::from_str::<BTreeMap<String, String>>(m).map_err(|e| format!("invalid entity map: {e}"))?
        }
        None => BTreeMap::new(),
    };
    Ok(Step::UserTurn {
        intent: intent.to_string(),
        entities,
    })
}

/// Render one story. An empty name is written as `story_<index>`.
pub fn serialize_story(story: &Story, index: usize) -> String {
    let mut out = String::from("## ");
    if story.name.trim().is_empty() {
        out.push_str(&format!("story_{index}"));
    } else {
        out.push_str(&story.name);
    }
    out.push('\n');
    for step in &story.steps {
        match step {
            Step::UserTurn { intent, entities } => {
                out.push_str("* ");
                out.push_str(intent);
                if !entities.is_empty() {
                    // BTreeMap serializes key-sorted.
                    out.push_str(&serde_json::to_string(entities).expect("string map serializes"));
                }
            }
            Step::BotAction { action } => {
                out.push_str("  - ");
                out.push_str(action);
            }
        }
        out.push('\n');
    }
    out
}

pub fn serialize_stories(stories: &[Story]) -> String {
    stories
        .iter()
        .enumerate()
        .map(|(i, s)| serialize_story(s, i))
        .collect::<Vec<_>>()
        .join("\n")
}
