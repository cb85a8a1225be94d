use std::collections::BTreeSet;
use std::path::PathBuf;

use super::{CorpusError, CorpusErrorKind, DomainSpec, IntentExample, Step, Story};

/// Cross-check examples and stories against the domain.
///
/// Validation findings are not tied to a source line; they carry `line = 1`
/// and a logical file name (`nlu`, `stories`). The result is sorted and
/// deduplicated, so it does not depend on input order.
pub fn validate_corpus(examples: &[IntentExample], stories: &[Story], domain: &DomainSpec) -> Vec<CorpusError> {
    let mut errors = BTreeSet::new();
    let err = |file: &str, kind, message: String| CorpusError {
        file: PathBuf::from(file),
        line: 1,
        kind,
        message,
    };

    for ex in examples {
        if domain.intent_index(&ex.intent).is_none() {
            errors.insert(err(
                "nlu",
                CorpusErrorKind::UnknownLabel,
                format!("example intent '{}' not in domain", ex.intent),
            ));
        }
        let mut spans: Vec<_> = ex.entities.iter().collect();
        spans.sort_by_key(|s| (s.start, s.end));
        for s in &spans {
            if !domain.entity_types.contains(&s.entity_type) {
                errors.insert(err(
                    "nlu",
                    CorpusErrorKind::UnknownLabel,
                    format!("entity type '{}' not in domain", s.entity_type),
                ));
            }
        }
        if spans.windows(2).any(|w| w[1].start < w[0].end) {
            errors.insert(err(
                "nlu",
                CorpusErrorKind::OverlapSpan,
                format!("overlapping entities in '{}'", ex.text),
            ));
        }
    }

    let mut story_intents = BTreeSet::new();
    for story in stories {
        if let Err(m) = story.check() {
            errors.insert(err(
                "stories",
                CorpusErrorKind::Syntax,
                format!("story '{}': {m}", story.name),
            ));
        }
        for step in &story.steps {
            match step {
                Step::UserTurn { intent, entities } => {
                    story_intents.insert(intent.as_str());
                    if domain.intent_index(intent).is_none() {
                        errors.insert(err(
                            "stories",
                            CorpusErrorKind::UnknownLabel,
                            format!("story '{}': intent '{intent}' not in domain", story.name),
                        ));
                    }
                    for key in entities.keys() {
                        if !domain.entity_types.contains(key) && domain.slot_index(key).is_none() {
                            errors.insert(err(
                                "stories",
                                CorpusErrorKind::UnknownLabel,
                                format!("story '{}': entity '{key}' not in domain", story.name),
                            ));
                        }
                    }
                }
                Step::BotAction { action } => {
                    if !domain.has_action(action) {
                        errors.insert(err(
                            "stories",
                            CorpusErrorKind::UnknownLabel,
                            format!("story '{}': action '{action}' not in domain", story.name),
                        ));
                    }
                }
            }
        }
    }

    let uncovered: BTreeSet<&str> = domain
        .intents
        .iter()
        .map(String::as_str)
        .chain(examples.iter().map(|e| e.intent.as_str()))
        .filter(|i| !story_intents.contains(i))
        .collect();
    if !uncovered.is_empty() {
        let list: Vec<&str> = uncovered.into_iter().collect();
        errors.insert(err(
            "stories",
            CorpusErrorKind::Warning,
            format!("intents not covered by any story: {}", list.join(", ")),
        ));
    }

    errors.into_iter().collect()
}
