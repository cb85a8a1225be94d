use serde::{Deserialize, Serialize};

use super::{lines, CorpusError, CorpusErrorKind};

/// Annotated entity inside an example. Offsets are codepoint indices into
/// the de-annotated text, `end` exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentExample {
    pub text: String,
    pub intent: String,
    pub entities: Vec<EntitySpan>,
}

impl IntentExample {
    pub fn new(text: impl Into<String>, intent: impl Into<String>) -> Self {
        IntentExample {
            text: text.into(),
            intent: intent.into(),
            entities: Vec::new(),
        }
    }

    /// The codepoint slice covered by `span`.
    pub fn surface(&self, span: &EntitySpan) -> String {
        self.text.chars().skip(span.start).take(span.end - span.start).collect()
    }
}

const INTENT_HEADER: &str = "## intent:";

/// Parse an NLU markdown file.
///
/// ```text
/// ## intent:waterquality
/// - is it safe to drink water in [Cape Town](location)
/// - any news on [cpt](location:Cape Town)
/// ```
///
/// The optional `:value` suffix in an annotation sets a canonical value that
/// differs from the surface text.
pub fn parse_nlu_markdown(source: &str) -> Result<Vec<IntentExample>, CorpusError> {
    let mut out = Vec::new();
    // (label, header line, examples seen in this section)
    let mut section: Option<(String, usize, usize)> = None;

    let close = |section: &Option<(String, usize, usize)>| -> Result<(), CorpusError> {
        match section {
            Some((label, line, 0)) => Err(CorpusError::new(
                CorpusErrorKind::EmptySection,
                *line,
                format!("intent '{label}' has no examples"),
            )),
            _ => Ok(()),
        }
    };

    for (no, raw) in lines(source) {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with("<!--") {
            continue;
        }
        if let Some(rest) = line.strip_prefix(INTENT_HEADER) {
            close(&section)?;
            let label = rest.trim();
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(CorpusError::new(CorpusErrorKind::Syntax, no, "invalid intent label"));
            }
            section = Some((label.to_string(), no, 0));
            continue;
        }
        if line.starts_with('#') {
            return Err(CorpusError::new(
                CorpusErrorKind::Syntax,
                no,
                format!("unsupported section header '{line}'"),
            ));
        }
        let Some(body) = line.trim_start().strip_prefix("- ") else {
            return Err(CorpusError::new(CorpusErrorKind::Syntax, no, "expected '- <example>'"));
        };
        let Some((label, _, count)) = section.as_mut() else {
            return Err(CorpusError::new(
                CorpusErrorKind::Syntax,
                no,
                "example outside of an intent section",
            ));
        };
        let (text, entities) =
            parse_annotated(body.trim()).map_err(|m| CorpusError::new(CorpusErrorKind::Syntax, no, m))?;
        if text.trim().is_empty() {
            return Err(CorpusError::new(CorpusErrorKind::Syntax, no, "empty example"));
        }
        *count += 1;
        out.push(IntentExample {
            text,
            intent: label.clone(),
            entities,
        });
    }
    close(&section)?;
    Ok(out)
}

fn parse_annotated(body: &str) -> Result<(String, Vec<EntitySpan>), String> {
    let mut text = String::new();
    let mut len = 0usize;
    let mut entities = Vec::new();
    let mut chars = body.chars().peekable();

    while let Some(c) = chars.next() {
        match c {
            '[' => {
                let mut surface = String::new();
                loop {
                    match chars.next() {
                        Some(']') => break,
                        Some('[') | None => return Err("unterminated '[' annotation".into()),
                        Some(ch) => surface.push(ch),
                    }
                }
                if chars.next() != Some('(') {
                    return Err("annotation must be followed by '(entity_type)'".into());
                }
                let mut label = String::new();
                loop {
                    match chars.next() {
                        Some(')') => break,
                        Some(ch) if ch == '(' || ch == '[' || ch == ']' => return Err("malformed entity type".into()),
                        None => return Err("unterminated '(' in annotation".into()),
                        Some(ch) => label.push(ch),
                    }
                }
                let (entity_type, value) = match label.split_once(':') {
                    Some((t, v)) => (t.trim().to_string(), v.trim().to_string()),
                    None => (label.trim().to_string(), surface.clone()),
                };
                if surface.is_empty() {
                    return Err("empty annotated surface".into());
                }
                if entity_type.is_empty() || entity_type.chars().any(char::is_whitespace) {
                    return Err(format!("invalid entity type '{entity_type}'"));
                }
                if value.is_empty() {
                    return Err("empty entity value".into());
                }
                let n = surface.chars().count();
                entities.push(EntitySpan {
                    start: len,
                    end: len + n,
                    entity_type,
                    value,
                });
                text.push_str(&surface);
                len += n;
            }
            ']' => return Err("unmatched ']'".into()),
            _ => {
                text.push(c);
                len += 1;
            }
        }
    }
    Ok((text, entities))
}

/// Render examples back to NLU markdown. A new section header is emitted
/// whenever the intent changes, so parsing the output reproduces the input
/// order exactly.
pub fn serialize_nlu_markdown(examples: &[IntentExample]) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for ex in examples {
        if current != Some(ex.intent.as_str()) {
            if current.is_some() {
                out.push('\n');
            }
            out.push_str(INTENT_HEADER);
            out.push_str(&ex.intent);
            out.push('\n');
            current = Some(&ex.intent);
        }
        out.push_str("- ");
        out.push_str(&annotate(ex));
        out.push('\n');
    }
    out
}

fn annotate(ex: &IntentExample) -> String {
    let chars: Vec<char> = ex.text.chars().collect();
    let mut spans: Vec<&EntitySpan> = ex.entities.iter().collect();
    spans.sort_by_key(|s| s.start);
    let mut out = String::new();
    let mut pos = 0;
    for span in spans {
        out.extend(&chars[pos..span.start]);
        let surface: String = chars[span.start..span.end].iter().collect();
        out.push('[');
        out.push_str(&surface);
        out.push_str("](");
        out.push_str(&span.entity_type);
        if span.value != surface {
            out.push(':');
            out.push_str(&span.value);
        }
        out.push(')');
        pos = span.end;
    }
    out.extend(&chars[pos..]);
    out
}
