//! Model bundles and the per-message turn loop.
//!
//! The same [`ModelBundle`] methods drive live chat, the terminal shell and
//! interactive teaching sessions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    load_file, parse_domain, parse_nlu_markdown, parse_stories_markdown, serialize_domain, validate_corpus,
    CorpusError, CorpusErrorKind, DomainSpec, IntentExample, Story,
};
use crate::dialogue::{
    select_action, train_policy, ActionChoice, ActionScore, DialogueTracker, Event, EventKind, PolicyConfig,
    PolicyParams, TrackerError,
};
use crate::knowledge::{render_response, KnowledgeError, KnowledgeStore, SharedKnowledge};
use crate::nlu::{train_ranker, Hyperparams, ModelFileError, NluPipeline, ParseResult, RankerParams, TrainError};
use crate::text::{featurize, normalize_text, tokenize, FeatureVector, Lexicon, LexiconError, DEFAULT_DIM};

/// Upper bound on bot actions per user message.
pub const MAX_ACTIONS_PER_TURN: usize = 10;
pub const RANKER_FILE: &str = "ranker.json";
pub const POLICY_FILE: &str = "policy.json";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("corpus has {} error(s); first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    Corpus(Vec<CorpusError>),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Model(#[from] ModelFileError),
    #[error("model labels do not match the domain: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub feature_dim: usize,
    pub nlu: Hyperparams,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            feature_dim: DEFAULT_DIM,
            nlu: Hyperparams::default(),
            policy: PolicyConfig::default(),
        }
    }
}

/// Everything training consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCorpus {
    pub domain: DomainSpec,
    pub examples: Vec<IntentExample>,
    pub stories: Vec<Story>,
    pub lexicons: Vec<Lexicon>,
}

impl TrainingCorpus {
    pub fn load(domain: &Path, nlu: &Path, stories: &Path, lexicons: &[PathBuf]) -> Result<Self, EngineError> {
        let one = |e: CorpusError| EngineError::Corpus(vec![e]);
        let lexicons = lexicons
            .iter()
            .map(|p| {
                Lexicon::load(p).map_err(|e| {
                    one(CorpusError {
                        file: p.clone(),
                        line: match e {
                            LexiconError::Malformed { line } => line,
                            LexiconError::Io { .. } => 1,
                        },
                        kind: CorpusErrorKind::Syntax,
                        message: e.to_string(),
                    })
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(TrainingCorpus {
            domain: load_file(domain, parse_domain).map_err(one)?,
            examples: load_file(nlu, parse_nlu_markdown).map_err(one)?,
            stories: load_file(stories, parse_stories_markdown).map_err(one)?,
            lexicons,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub nlu_accuracy: f64,
    pub nlu_final_loss: f64,
    pub policy_accuracy: f64,
    pub policy_final_loss: f64,
    pub policy_pairs: usize,
    pub warnings: Vec<String>,
}

pub fn example_features(text: &str, dim: usize) -> FeatureVector {
    featurize(&tokenize(&normalize_text(text)), dim)
}

/// Immutable trained artifacts plus a handle on the knowledge store.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    /// Hex SHA-256 of the domain and both model files.
    pub version: String,
    pub domain: DomainSpec,
    pub nlu: NluPipeline,
    pub policy: PolicyParams,
    pub knowledge: SharedKnowledge,
}

/// What one user message produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub version: String,
    pub parse: ParseResult,
    pub actions: Vec<ActionChoice>,
    pub utterances: Vec<String>,
    /// Events appended to the tracker, in order.
    pub events: Vec<Event>,
}

/// Full prediction for the next bot action, before anything is committed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionPrediction {
    pub choice: ActionChoice,
    /// Softmax confidences in domain action order.
    pub confidences: Vec<ActionScore>,
    pub attention: Vec<f64>,
}

fn timestamp(tracker: &DialogueTracker, now: DateTime<Utc>) -> i64 {
    let t = now.timestamp_millis();
    tracker.last_timestamp().map_or(t, |last| last.max(t))
}

impl ModelBundle {
    pub fn new(
        domain: DomainSpec,
        nlu: NluPipeline,
        policy: PolicyParams,
        knowledge: SharedKnowledge,
    ) -> Result<Self, EngineError> {
        if nlu.ranker.labels != domain.intents {
            return Err(EngineError::Inconsistent(
                "ranker labels differ from domain intents".into(),
            ));
        }
        if !policy.matches_domain(&domain) {
            return Err(EngineError::Inconsistent("policy labels differ from domain".into()));
        }
        let version = bundle_version(&domain, &nlu.ranker.to_json(), &policy.to_json());
        Ok(ModelBundle {
            version,
            domain,
            nlu,
            policy,
            knowledge,
        })
    }

    /// Train both models on `corpus`. Validation errors abort before any
    /// training; warnings are reported in the metrics.
    pub fn train(
        corpus: &TrainingCorpus,
        config: &TrainConfig,
        knowledge: SharedKnowledge,
    ) -> Result<(Self, TrainingMetrics), EngineError> {
        let findings = validate_corpus(&corpus.examples, &corpus.stories, &corpus.domain);
        let (warnings, errors): (Vec<_>, Vec<_>) = findings.into_iter().partition(CorpusError::is_warning);
        if !errors.is_empty() {
            return Err(EngineError::Corpus(errors));
        }
        let pairs: Vec<(FeatureVector, String)> = corpus
            .examples
            .iter()
            .map(|e| (example_features(&e.text, config.feature_dim), e.intent.clone()))
            .collect();
        let ranker = train_ranker(&pairs, &corpus.domain.intents, &config.nlu)?;
        let policy = train_policy(&corpus.stories, &corpus.domain, &config.policy)?;
        let metrics = TrainingMetrics {
            nlu_accuracy: ranker.accuracy,
            nlu_final_loss: ranker.epoch_losses.last().copied().unwrap_or(0.0),
            policy_accuracy: policy.accuracy,
            policy_final_loss: policy.epoch_losses.last().copied().unwrap_or(0.0),
            policy_pairs: policy.pairs,
            warnings: warnings.iter().map(ToString::to_string).collect(),
        };
        let nlu = NluPipeline::new(corpus.lexicons.clone(), ranker.params);
        let bundle = ModelBundle::new(corpus.domain.clone(), nlu, policy.params, knowledge)?;
        Ok((bundle, metrics))
    }

    /// Write `ranker.json` and `policy.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, body) in [
            (RANKER_FILE, self.nlu.ranker.to_json()),
            (POLICY_FILE, self.policy.to_json()),
        ] {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
            std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn load(
        dir: &Path,
        domain: DomainSpec,
        lexicons: Vec<Lexicon>,
        knowledge: SharedKnowledge,
    ) -> Result<Self, EngineError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(io_err(&path))
        };
        let ranker = RankerParams::from_json(&read(RANKER_FILE)?, None)?;
        let policy = PolicyParams::from_json(&read(POLICY_FILE)?)?;
        ModelBundle::new(domain, NluPipeline::new(lexicons, ranker), policy, knowledge)
    }

    /// NLU parse plus whether it routes straight to the fallback action.
    pub fn parse_message(&self, text: &str) -> (ParseResult, bool) {
        let parse = self.nlu.parse(text, &self.domain);
        let threshold = self.nlu.ranker.hyper.confidence_threshold;
        let fallback = parse.is_fallback() || parse.top_intent().is_none_or(|s| s.confidence < threshold);
        (parse, fallback)
    }

    pub fn predict_action(&self, events: &[Event]) -> ActionPrediction {
        let pred = self.policy.predict(events, &self.domain);
        let hyper = &self.policy.config.hyper;
        let choice = select_action(
            &pred.scores,
            hyper.confidence_threshold,
            hyper.temperature,
            &self.domain,
        );
        let raw: Vec<f64> = pred.scores.iter().map(|s| s.score).collect();
        let confidences = pred
            .scores
            .iter()
            .zip(crate::linalg::softmax(&raw, hyper.temperature))
            .map(|(s, c)| ActionScore {
                action: s.action.clone(),
                score: c,
            })
            .collect();
        ActionPrediction {
            choice,
            confidences,
            attention: pred.attention,
        }
    }

    /// Text for an utterance action given the current slots.
    pub fn render(
        &self,
        store: &KnowledgeStore,
        action: &str,
        slots: &BTreeMap<String, String>,
        now: DateTime<Utc>,
    ) -> Result<String, EngineError> {
        if let (Some(topic), Some(location)) = (self.domain.answers.get(action), slots.get("location")) {
            let r = store.query(&self.domain, action, location, *topic, now, slots)?;
            return Ok(r.answer_text);
        }
        Ok(render_response(&self.domain, action, None, slots)?)
    }

    /// Append a user message (and its derived slot events).
    pub fn commit_user(
        &self,
        tracker: &mut DialogueTracker,
        parse: ParseResult,
        now: DateTime<Utc>,
    ) -> Result<Vec<Event>, EngineError> {
        Ok(tracker.apply_event(Event::user(timestamp(tracker, now), parse), &self.domain)?)
    }

    /// Append one bot action. Utterances are rendered and followed by the
    /// listen action. Returns the logged events, the rendered text (if
    /// any) and whether the turn is over.
    pub fn commit_action(
        &self,
        tracker: &mut DialogueTracker,
        store: &KnowledgeStore,
        action: &str,
        now: DateTime<Utc>,
    ) -> Result<(Vec<Event>, Option<String>, bool), EngineError> {
        let ts = timestamp(tracker, now);
        let listen = Event::new(ts, EventKind::Listen);
        if action == self.domain.listen_action {
            tracker.apply_raw(listen.clone())?;
            return Ok((vec![listen], None, true));
        }
        let bot = Event::bot(ts, action);
        if !self.domain.is_utterance(action) {
            tracker.apply_raw(bot.clone())?;
            return Ok((vec![bot], None, false));
        }
        let text = self.render(store, action, tracker.slots(), now)?;
        tracker.apply_raw(bot.clone())?;
        tracker.apply_raw(listen.clone())?;
        Ok((vec![bot, listen], Some(text), true))
    }

    /// Run policy-selected actions until the turn ends.
    /// Returns the chosen actions, rendered utterances and logged events.
    pub fn run_actions(
        &self,
        tracker: &mut DialogueTracker,
        first: Option<ActionChoice>,
        now: DateTime<Utc>,
    ) -> Result<TurnActions, EngineError> {
        let store = self.knowledge.snapshot();
        let mut actions = Vec::new();
        let mut utterances = Vec::new();
        let mut events = Vec::new();
        let mut forced = first;
        for _ in 0..MAX_ACTIONS_PER_TURN {
            let choice = forced
                .take()
                .unwrap_or_else(|| self.predict_action(tracker.events()).choice);
            let (logged, text, done) = self.commit_action(tracker, &store, &choice.action, now)?;
            actions.push(choice);
            events.extend(logged);
            utterances.extend(text);
            if done {
                return Ok((actions, utterances, events));
            }
        }
        let (logged, _, _) = self.commit_action(tracker, &store, &self.domain.listen_action.clone(), now)?;
        events.extend(logged);
        Ok((actions, utterances, events))
    }

    /// Parse, track, select actions until listen, render.
    pub fn handle_message(
        &self,
        tracker: &mut DialogueTracker,
        text: &str,
        now: DateTime<Utc>,
    ) -> Result<TurnOutcome, EngineError> {
        let (parse, fallback) = self.parse_message(text);
        let mut events = self.commit_user(tracker, parse.clone(), now)?;
        let first = fallback.then(|| ActionChoice {
            action: self.domain.fallback_action.clone(),
            confidence: parse.top_intent().map_or(0.0, |s| s.confidence),
            fallback: true,
        });
        let (actions, utterances, more) = self.run_actions(tracker, first, now)?;
        events.extend(more);
        Ok(TurnOutcome {
            version: self.version.clone(),
            parse,
            actions,
            utterances,
            events,
        })
    }

    pub fn restart(&self, tracker: &mut DialogueTracker, now: DateTime<Utc>) -> Result<Event, EngineError> {
        let e = Event::new(timestamp(tracker, now), EventKind::Restart);
        tracker.apply_raw(e.clone())?;
        Ok(e)
    }
}

pub fn bundle_version(domain: &DomainSpec, ranker_json: &str, policy_json: &str) -> String {
    let mut h = Sha256::new();
    for part in [serialize_domain(domain).as_str(), ranker_json, policy_json] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

pub type SharedBundle = Arc<ModelBundle>;

pub type TurnActions = (Vec<ActionChoice>, Vec<String>, Vec<Event>);
