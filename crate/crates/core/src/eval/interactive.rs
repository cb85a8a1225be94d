//! Human-in-the-loop teaching: every prediction is reviewed before it is
//! committed, corrections are logged, and finished sessions become new
//! training stories.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{serialize_stories, Step, Story};
use crate::dialogue::{ActionChoice, ActionScore, DialogueTracker, Event, EventKind};
use crate::engine::{ActionPrediction, EngineError, ModelBundle};
use crate::nlu::{IntentScore, ParseResult};
use crate::text::EntityMatch;

#[derive(Debug, thiserror::Error)]
pub enum InteractiveError {
    #[error("no prediction is awaiting review")]
    NothingPending,
    #[error("the previous prediction has not been reviewed yet")]
    ReviewPending,
    #[error("'{0}' is not a label of the domain")]
    UnknownLabel(String),
    #[error("intent can no longer be corrected: the user message is already committed")]
    IntentCommitted,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    Intent,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub kind: CorrectionKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEntry {
    /// Committed tracker events when the correction was made.
    pub snapshot: Vec<Event>,
    pub predicted: String,
    pub corrected: String,
    pub kind: CorrectionKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionLog {
    pub entries: Vec<CorrectionEntry>,
}

impl CorrectionLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// What the reviewer sees for one pending step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub text: String,
    pub intents: Vec<IntentScore>,
    pub entities: Vec<EntityMatch>,
    pub proposed_action: String,
    pub action_confidence: f64,
    pub actions: Vec<ActionScore>,
    pub nlu_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Review {
    pub utterances: Vec<String>,
    /// Set when the turn continues and another action awaits review.
    pub next: Option<Prediction>,
}

#[derive(Debug, Clone)]
struct Pending {
    parse: ParseResult,
    nlu_fallback: bool,
    /// Whether the user message is already in the tracker (i.e. this is a
    /// follow-up action within the same turn).
    user_committed: bool,
    action: ActionPrediction,
}

#[derive(Debug)]
pub struct InteractiveSession {
    bundle: Arc<ModelBundle>,
    tracker: DialogueTracker,
    transcript: Vec<Step>,
    log: CorrectionLog,
    pending: Option<Pending>,
}

fn entity_map(parse: &ParseResult) -> BTreeMap<String, String> {
    parse
        .entities
        .iter()
        .map(|e| (e.entity_type.clone(), e.value.clone()))
        .collect()
}

impl InteractiveSession {
    pub fn new(id: impl Into<String>, bundle: Arc<ModelBundle>) -> Self {
        InteractiveSession {
            bundle,
            tracker: DialogueTracker::new(id),
            transcript: Vec::new(),
            log: CorrectionLog::default(),
            pending: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.tracker.conversation_id
    }

    pub fn tracker(&self) -> &DialogueTracker {
        &self.tracker
    }

    pub fn log(&self) -> &CorrectionLog {
        &self.log
    }

    pub fn bundle(&self) -> &Arc<ModelBundle> {
        &self.bundle
    }

    pub fn pending(&self) -> Option<Prediction> {
        self.pending.as_ref().map(|p| self.describe(p))
    }

    fn describe(&self, p: &Pending) -> Prediction {
        Prediction {
            text: p.parse.text.clone(),
            intents: p.parse.ranking.clone(),
            entities: p.parse.entities.clone(),
            proposed_action: p.action.choice.action.clone(),
            action_confidence: p.action.choice.confidence,
            actions: p.action.confidences.clone(),
            nlu_fallback: p.nlu_fallback,
        }
    }

    fn predict_after_user(
        &self,
        parse: &ParseResult,
        nlu_fallback: bool,
        now: DateTime<Utc>,
    ) -> Result<ActionPrediction, EngineError> {
        let mut hypothetical = self.tracker.clone();
        self.bundle.commit_user(&mut hypothetical, parse.clone(), now)?;
        let mut pred = self.bundle.predict_action(hypothetical.events());
        if nlu_fallback {
            pred.choice = ActionChoice {
                action: self.bundle.domain.fallback_action.clone(),
                confidence: parse.top_intent().map_or(0.0, |s| s.confidence),
                fallback: true,
            };
        }
        Ok(pred)
    }

    /// Parse `text` and propose the next action without committing either.
    pub fn step(&mut self, text: &str, now: DateTime<Utc>) -> Result<Prediction, InteractiveError> {
        if self.pending.is_some() {
            return Err(InteractiveError::ReviewPending);
        }
        let (parse, nlu_fallback) = self.bundle.parse_message(text);
        let action = self.predict_after_user(&parse, nlu_fallback, now)?;
        let p = Pending {
            parse,
            nlu_fallback,
            user_committed: false,
            action,
        };
        let out = self.describe(&p);
        self.pending = Some(p);
        Ok(out)
    }

    /// Accept the pending prediction as is.
    pub fn confirm(&mut self, now: DateTime<Utc>) -> Result<Review, InteractiveError> {
        let p = self.pending.take().ok_or(InteractiveError::NothingPending)?;
        self.commit(p, now)
    }

    fn commit(&mut self, p: Pending, now: DateTime<Utc>) -> Result<Review, InteractiveError> {
        let bundle = Arc::clone(&self.bundle);
        if !p.user_committed {
            let intent = p.parse.top_intent().map(|s| s.intent.clone()).unwrap_or_default();
            self.transcript.push(Step::UserTurn {
                intent,
                entities: entity_map(&p.parse),
            });
            bundle.commit_user(&mut self.tracker, p.parse.clone(), now)?;
        }
        let action = p.action.choice.action.clone();
        let store = bundle.knowledge.snapshot();
        let (_, text, done) = bundle.commit_action(&mut self.tracker, &store, &action, now)?;
        self.transcript.push(Step::bot(action));
        let next = if done {
            None
        } else {
            let follow = Pending {
                parse: p.parse,
                nlu_fallback: false,
                user_committed: true,
                action: bundle.predict_action(self.tracker.events()),
            };
            let d = self.describe(&follow);
            self.pending = Some(follow);
            Some(d)
        };
        Ok(Review {
            utterances: text.into_iter().collect(),
            next,
        })
    }

    /// Replace the pending intent or action. An intent correction
    /// re-predicts the action and keeps the step pending; an action
    /// correction commits it.
    pub fn correct(&mut self, correction: Correction, now: DateTime<Utc>) -> Result<Review, InteractiveError> {
        let domain = &self.bundle.domain;
        let valid = match correction.kind {
            CorrectionKind::Intent => domain.intent_index(&correction.label).is_some(),
            CorrectionKind::Action => domain.has_action(&correction.label),
        };
        if !valid {
            return Err(InteractiveError::UnknownLabel(correction.label));
        }
        let mut p = self.pending.take().ok_or(InteractiveError::NothingPending)?;
        match correction.kind {
            CorrectionKind::Intent => {
                if p.user_committed {
                    self.pending = Some(p);
                    return Err(InteractiveError::IntentCommitted);
                }
                let predicted = p.parse.top_intent().map(|s| s.intent.clone()).unwrap_or_default();
                self.log.entries.push(CorrectionEntry {
                    snapshot: self.tracker.events().to_vec(),
                    predicted,
                    corrected: correction.label.clone(),
                    kind: CorrectionKind::Intent,
                });
                let mut parse =
                    ParseResult::with_intent(p.parse.text.clone(), correction.label, p.parse.entities.clone());
                parse.language = p.parse.language;
                parse.keywords = std::mem::take(&mut p.parse.keywords);
                let action = match self.predict_after_user(&parse, false, now) {
                    Ok(a) => a,
                    Err(e) => {
                        self.pending = Some(p);
                        return Err(e.into());
                    }
                };
                let next = Pending {
                    parse,
                    nlu_fallback: false,
                    user_committed: false,
                    action,
                };
                let d = self.describe(&next);
                self.pending = Some(next);
                Ok(Review {
                    utterances: Vec::new(),
                    next: Some(d),
                })
            }
            CorrectionKind::Action => {
                self.log.entries.push(CorrectionEntry {
                    snapshot: self.tracker.events().to_vec(),
                    predicted: p.action.choice.action.clone(),
                    corrected: correction.label.clone(),
                    kind: CorrectionKind::Action,
                });
                p.action.choice = ActionChoice {
                    action: correction.label,
                    confidence: 1.0,
                    fallback: false,
                };
                self.commit(p, now)
            }
        }
    }

    /// Undo the most recent user message: a still-pending one is dropped,
    /// otherwise the tracker and transcript are rewound.
    pub fn rewind(&mut self, now: DateTime<Utc>) -> Result<(), InteractiveError> {
        if let Some(p) = self.pending.take() {
            if !p.user_committed {
                return Ok(());
            }
        }
        let ts = self
            .tracker
            .last_timestamp()
            .map_or(now.timestamp_millis(), |t| t.max(now.timestamp_millis()));
        self.tracker
            .apply_raw(Event::new(ts, EventKind::Rewind))
            .map_err(EngineError::from)?;
        if let Some(at) = self.transcript.iter().rposition(Step::is_user) {
            self.transcript.truncate(at);
        }
        Ok(())
    }

    /// The committed steps as a story.
    pub fn transcript(&self) -> Story {
        Story::new(format!("interactive_{}", self.id()), self.transcript.clone())
    }

    pub fn finish(self) -> (Story, CorrectionLog) {
        (self.transcript(), self.log)
    }
}

/// The original stories followed by every non-empty session transcript.
pub fn export_augmented_corpus(original: &[Story], transcripts: &[Story]) -> String {
    let all: Vec<Story> = original
        .iter()
        .chain(transcripts.iter().filter(|s| !s.steps.is_empty()))
        .cloned()
        .collect();
    serialize_stories(&all)
}
