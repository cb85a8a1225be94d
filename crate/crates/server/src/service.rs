//! Process-wide state shared by the HTTP handlers and the CLI.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use aquabot_core::corpus::{load_file, parse_nlu_markdown, parse_stories_markdown, CorpusError};
use aquabot_core::dialogue::DialogueTracker;
use aquabot_core::engine::{
    EngineError, ModelBundle, TrainConfig, TrainingCorpus, TrainingMetrics, TurnOutcome, POLICY_FILE, RANKER_FILE,
};
use aquabot_core::eval::{evaluate_nlu, evaluate_policy, EvaluationReport, InteractiveSession};
use aquabot_core::knowledge::{IngestError, KnowledgeStore, SharedKnowledge};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

use crate::config::ServiceConfig;
use crate::store::{valid_conversation_id, ConversationStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no model is loaded; train one first")]
    NoModel,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("training failed: {0}")]
    Corpus(String, Vec<CorpusError>),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("knowledge file {0} has errors: {1:?}")]
    Ingest(String, Vec<IngestError>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusedCell {
    pub truth: String,
    pub predicted: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub version: String,
    pub policy: EvaluationReport,
    pub nlu: EvaluationReport,
    pub most_confused: Option<ConfusedCell>,
    pub policy_table: String,
    pub nlu_table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub version: String,
    pub previous_version: Option<String>,
    pub metrics: TrainingMetrics,
}

type Shared<T> = Arc<AsyncMutex<T>>;

pub struct Service {
    pub config: ServiceConfig,
    pub knowledge: SharedKnowledge,
    store: ConversationStore,
    bundle: RwLock<Option<Arc<ModelBundle>>>,
    conversations: Mutex<HashMap<String, Shared<DialogueTracker>>>,
    sessions: Mutex<HashMap<String, Shared<InteractiveSession>>>,
    train_lock: AsyncMutex<()>,
}

fn load_knowledge(config: &ServiceConfig) -> Result<KnowledgeStore, ServiceError> {
    let mut store = KnowledgeStore::new();
    if let Some(p) = &config.data.records {
        let (_, errors) = store
            .ingest_records(p)
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        if !errors.is_empty() {
            return Err(ServiceError::Ingest(p.display().to_string(), errors));
        }
    }
    if let Some(p) = &config.data.situations {
        let (_, errors) = store
            .ingest_situations(p)
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        if !errors.is_empty() {
            return Err(ServiceError::Ingest(p.display().to_string(), errors));
        }
    }
    Ok(store)
}

impl Service {
    /// Load the knowledge store, replay persisted conversations and load the
    /// saved model if there is one.
    pub fn start(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let knowledge = SharedKnowledge::new(load_knowledge(&config)?);
        let store = ConversationStore::open(&config.store.conversations)?;
        let conversations = store
            .load_all()?
            .into_iter()
            .map(|(id, t)| (id, Arc::new(AsyncMutex::new(t))))
            .collect();
        let service = Arc::new(Service {
            config,
            knowledge,
            store,
            bundle: RwLock::new(None),
            conversations: Mutex::new(conversations),
            sessions: Mutex::new(HashMap::new()),
            train_lock: AsyncMutex::new(()),
        });
        let models = &service.config.store.models;
        if models.join(RANKER_FILE).is_file() && models.join(POLICY_FILE).is_file() {
            match service.load_saved() {
                Ok(b) => service.install(b),
                Err(e) => tracing::warn!("saved model not loaded: {e}"),
            }
        }
        Ok(service)
    }

    pub fn corpus(&self) -> Result<TrainingCorpus, ServiceError> {
        let d = &self.config.data;
        TrainingCorpus::load(&d.domain, &d.nlu, &d.stories, &d.lexicons).map_err(|e| match e {
            EngineError::Corpus(errs) => ServiceError::Corpus("corpus files are invalid".into(), errs),
            other => other.into(),
        })
    }

    fn load_saved(&self) -> Result<Arc<ModelBundle>, ServiceError> {
        let corpus = self.corpus()?;
        let b = ModelBundle::load(
            &self.config.store.models,
            corpus.domain,
            corpus.lexicons,
            self.knowledge.clone(),
        )?;
        Ok(Arc::new(b))
    }

    pub fn bundle(&self) -> Option<Arc<ModelBundle>> {
        self.bundle.read().expect("bundle lock poisoned").clone()
    }

    pub fn require_bundle(&self) -> Result<Arc<ModelBundle>, ServiceError> {
        self.bundle().ok_or(ServiceError::NoModel)
    }

    pub fn install(&self, bundle: Arc<ModelBundle>) {
        *self.bundle.write().expect("bundle lock poisoned") = Some(bundle);
    }

    /// Train, persist and swap in a new bundle. Runs on the calling thread;
    /// the active bundle is untouched on failure.
    pub fn train_blocking(&self, config: &TrainConfig) -> Result<TrainOutput, ServiceError> {
        let corpus = self.corpus()?;
        let (bundle, metrics) = ModelBundle::train(&corpus, config, self.knowledge.clone()).map_err(|e| match e {
            EngineError::Corpus(errs) => ServiceError::Corpus("corpus failed validation".into(), errs),
            other => other.into(),
        })?;
        bundle.save(&self.config.store.models)?;
        let previous_version = self.bundle().map(|b| b.version.clone());
        let version = bundle.version.clone();
        self.install(Arc::new(bundle));
        Ok(TrainOutput {
            version,
            previous_version,
            metrics,
        })
    }

    /// Train off the async runtime; concurrent requests queue on one lock.
    pub async fn train(self: &Arc<Self>, config: TrainConfig) -> Result<TrainOutput, ServiceError> {
        let _guard = self.train_lock.lock().await;
        let this = Arc::clone(self);
        tokio::task::spawn_blocking(move || this.train_blocking(&config))
            .await
            .expect("training task panicked")
    }

    pub fn evaluate_blocking(&self, bundle: &ModelBundle) -> Result<EvaluationOutput, ServiceError> {
        let d = &self.config.data;
        let test = d
            .test_stories
            .as_ref()
            .ok_or_else(|| ServiceError::Unprocessable("no test stories configured (data.test_stories)".into()))?;
        let one = |e: CorpusError| ServiceError::Corpus("evaluation data is invalid".into(), vec![e]);
        let stories = load_file(test, parse_stories_markdown).map_err(one)?;
        if stories.is_empty() {
            return Err(ServiceError::Unprocessable(format!(
                "{} contains no stories",
                test.display()
            )));
        }
        let examples = load_file(d.test_nlu.as_ref().unwrap_or(&d.nlu), parse_nlu_markdown).map_err(one)?;
        let policy = evaluate_policy(&stories, &bundle.policy, &bundle.domain).map_err(EngineError::from)?;
        let nlu = evaluate_nlu(&examples, &bundle.nlu.ranker);
        Ok(EvaluationOutput {
            version: bundle.version.clone(),
            most_confused: policy.most_confused().map(|(t, p, c)| ConfusedCell {
                truth: t.to_string(),
                predicted: p.to_string(),
                count: c,
            }),
            policy_table: policy.to_table(),
            nlu_table: nlu.to_table(),
            policy,
            nlu,
        })
    }

    pub async fn evaluate(self: &Arc<Self>) -> Result<EvaluationOutput, ServiceError> {
        let bundle = self.require_bundle()?;
        let _guard = self.train_lock.lock().await;
        let this = Arc::clone(self);
        tokio::task::spawn_blocking(move || this.evaluate_blocking(&bundle))
            .await
            .expect("evaluation task panicked")
    }

    fn conversation(&self, id: &str, create: bool) -> Option<Shared<DialogueTracker>> {
        let mut map = self.conversations.lock().expect("conversation map poisoned");
        if create {
            Some(
                map.entry(id.to_string())
                    .or_insert_with(|| Arc::new(AsyncMutex::new(DialogueTracker::new(id))))
                    .clone(),
            )
        } else {
            map.get(id).cloned()
        }
    }

    fn check_id(id: &str) -> Result<(), ServiceError> {
        if valid_conversation_id(id) {
            Ok(())
        } else {
            Err(ServiceError::BadRequest(format!("invalid conversation id '{id}'")))
        }
    }

    /// One user message through the turn loop. The whole turn runs on a
    /// single bundle snapshot while holding the conversation's lock.
    pub async fn handle_message(&self, id: &str, text: &str) -> Result<TurnOutcome, ServiceError> {
        Self::check_id(id)?;
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("message is empty".into()));
        }
        let bundle = self.require_bundle()?;
        let conv = self.conversation(id, true).expect("created");
        let mut tracker = conv.lock().await;
        let mut next = tracker.clone();
        let outcome = bundle.handle_message(&mut next, text, self.config.now())?;
        self.store.append(id, &outcome.events)?;
        *tracker = next;
        Ok(outcome)
    }

    pub async fn tracker(&self, id: &str) -> Result<DialogueTracker, ServiceError> {
        let conv = self
            .conversation(id, false)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown conversation '{id}'")))?;
        let t = conv.lock().await;
        Ok(t.clone())
    }

    pub async fn restart(&self, id: &str) -> Result<DialogueTracker, ServiceError> {
        let conv = self
            .conversation(id, false)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown conversation '{id}'")))?;
        let mut tracker = conv.lock().await;
        let mut next = tracker.clone();
        let event = match self.bundle() {
            Some(b) => b.restart(&mut next, self.config.now())?,
            None => {
                let ts = next
                    .last_timestamp()
                    .unwrap_or(0)
                    .max(self.config.now().timestamp_millis());
                let e = aquabot_core::dialogue::Event::new(ts, aquabot_core::dialogue::EventKind::Restart);
                next.apply_raw(e.clone()).map_err(EngineError::from)?;
                e
            }
        };
        self.store.append(id, &[event])?;
        *tracker = next;
        Ok(tracker.clone())
    }

    pub fn open_session(&self, id: Option<String>) -> Result<(String, Shared<InteractiveSession>), ServiceError> {
        let bundle = self.require_bundle()?;
        let mut map = self.sessions.lock().expect("session map poisoned");
        let id = match id {
            Some(id) => {
                Self::check_id(&id)?;
                if map.contains_key(&id) {
                    return Err(ServiceError::Conflict(format!("session '{id}' already exists")));
                }
                id
            }
            None => (1..)
                .map(|n| format!("session-{n}"))
                .find(|k| !map.contains_key(k))
                .expect("unbounded"),
        };
        let s = Arc::new(AsyncMutex::new(InteractiveSession::new(id.clone(), bundle)));
        map.insert(id.clone(), s.clone());
        Ok((id, s))
    }

    pub fn session(&self, id: &str) -> Result<Shared<InteractiveSession>, ServiceError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown interactive session '{id}'")))
    }

    pub fn close_session(&self, id: &str) {
        self.sessions.lock().expect("session map poisoned").remove(id);
    }
}
