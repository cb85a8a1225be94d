//! Water records and situational variables loaded from local fixture files,
//! plus the template renderer that turns a lookup into an answer.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::DomainSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    DrinkingQuality,
    BeachQuality,
    Availability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Safe,
    Unsafe,
    Restricted,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "DWA")]
    Dwa,
    #[serde(rename = "WESSA")]
    Wessa,
    Cyanolakes,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SituationKind {
    RoadClosure,
    Unrest,
    Outbreak,
    SupplyInterruption,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                let s = s.trim();
                $(if s.eq_ignore_ascii_case($text) { return Ok($ty::$variant); })+
                Err(format!("unknown {} '{}'", stringify!($ty), s))
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(Topic { DrinkingQuality => "drinking_quality", BeachQuality => "beach_quality", Availability => "availability" });
str_enum!(Status { Safe => "safe", Unsafe => "unsafe", Restricted => "restricted", Unknown => "unknown" });
str_enum!(Source { Dwa => "DWA", Wessa => "WESSA", Cyanolakes => "Cyanolakes", Fixture => "Fixture" });
str_enum!(SituationKind {
    RoadClosure => "road_closure",
    Unrest => "unrest",
    Outbreak => "outbreak",
    SupplyInterruption => "supply_interruption",
});

impl SituationKind {
    fn phrase(&self) -> &'static str {
        match self {
            SituationKind::RoadClosure => "Road closure",
            SituationKind::Unrest => "Unrest",
            SituationKind::Outbreak => "Outbreak",
            SituationKind::SupplyInterruption => "Supply interruption",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaterRecord {
    pub location: String,
    pub topic: Topic,
    pub status: Status,
    pub advisory: String,
    pub observed_at: DateTime<Utc>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationalVariable {
    pub location: String,
    pub kind: SituationKind,
    pub active_from: DateTime<Utc>,
    pub active_to: DateTime<Utc>,
    pub description: String,
}

impl SituationalVariable {
    /// Boundary-inclusive.
    pub fn is_active(&self, at: DateTime<Utc>) -> bool {
        self.active_from <= at && at <= self.active_to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub location: String,
    pub topic: Topic,
    pub record: Option<WaterRecord>,
    pub overrides: Vec<SituationalVariable>,
    pub answer_text: String,
}

impl Resolution {
    pub fn status(&self) -> Status {
        self.record.as_ref().map_or(Status::Unknown, |r| r.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct IngestError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("cannot read {path}: {message}")]
    FileUnreadable { path: String, message: String },
    #[error("no template for action '{0}'")]
    MissingTemplate(String),
}

/// Used for an answer-bearing action when there is no record and the
/// domain has no `.unknown` variant.
pub const NO_DATA_TEMPLATE: &str = "I have no current information about the water in {location}.";

fn fold(location: &str) -> String {
    location.trim().to_lowercase()
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    location: String,
    topic: String,
    status: String,
    advisory: String,
    observed_at: String,
    source: String,
}

#[derive(Debug, Deserialize)]
struct SituationRow {
    location: String,
    kind: String,
    active_from: String,
    active_to: String,
    description: String,
}

fn timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("invalid RFC 3339 timestamp '{s}': {e}"))
}

fn non_empty(field: &str, s: &str) -> Result<String, String> {
    let s = s.trim();
    if s.is_empty() {
        Err(format!("{field} is empty"))
    } else {
        Ok(s.to_string())
    }
}

impl RecordRow {
    fn into_record(self) -> Result<WaterRecord, String> {
        Ok(WaterRecord {
            location: non_empty("location", &self.location)?,
            topic: self.topic.parse()?,
            status: self.status.parse()?,
            advisory: self.advisory.trim().to_string(),
            observed_at: timestamp(&self.observed_at)?,
            source: self.source.parse()?,
        })
    }
}

impl SituationRow {
    fn into_variable(self) -> Result<SituationalVariable, String> {
        let v = SituationalVariable {
            location: non_empty("location", &self.location)?,
            kind: self.kind.parse()?,
            active_from: timestamp(&self.active_from)?,
            active_to: timestamp(&self.active_to)?,
            description: self.description.trim().to_string(),
        };
        if v.active_from > v.active_to {
            return Err("active_from is after active_to".into());
        }
        Ok(v)
    }
}

/// Parse CSV rows, collecting per-line errors instead of stopping.
fn read_rows<R, T>(source: &str, convert: impl Fn(R) -> Result<T, String>) -> (Vec<T>, Vec<IngestError>)
where
    R: serde::de::DeserializeOwned,
{
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::None)
        .flexible(false)
        .from_reader(source.as_bytes());
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in reader.deserialize::<R>().enumerate() {
        // Header is line 1; multi-line quoted fields are not expected.
        let fallback_line = i + 2;
        match row {
            Ok(r) => match convert(r) {
                Ok(v) => ok.push(v),
                Err(message) => errors.push(IngestError {
                    line: fallback_line,
                    message,
                }),
            },
            Err(e) => {
                let line = e.position().map_or(fallback_line, |p| p.line() as usize);
                errors.push(IngestError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    (ok, errors)
}

type RecordKey = (String, Topic, Source);

/// Immutable snapshot of all known records and situational variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeStore {
    records: BTreeMap<RecordKey, WaterRecord>,
    situations: Vec<SituationalVariable>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert unless a record with the same (location, topic, source) key
    /// is at least as new. Returns whether the store changed.
    pub fn upsert(&mut self, record: WaterRecord) -> bool {
        let key = (fold(&record.location), record.topic, record.source);
        match self.records.get(&key) {
            Some(existing) if existing.observed_at >= record.observed_at => false,
            _ => {
                self.records.insert(key, record);
                true
            }
        }
    }

    pub fn add_situation(&mut self, v: SituationalVariable) {
        if !self.situations.contains(&v) {
            self.situations.push(v);
        }
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn situations(&self) -> &[SituationalVariable] {
        &self.situations
    }

    /// Load record rows from CSV text. Returns the number of valid rows and
    /// the per-line errors.
    pub fn ingest_records_str(&mut self, source: &str) -> (usize, Vec<IngestError>) {
        let (rows, errors) = read_rows(source, RecordRow::into_record);
        let count = rows.len();
        for r in rows {
            self.upsert(r);
        }
        (count, errors)
    }

    pub fn ingest_records(&mut self, path: impl AsRef<Path>) -> Result<(usize, Vec<IngestError>), KnowledgeError> {
        Ok(self.ingest_records_str(&read(path.as_ref())?))
    }

    pub fn ingest_situations_str(&mut self, source: &str) -> (usize, Vec<IngestError>) {
        let (rows, errors) = read_rows(source, SituationRow::into_variable);
        let count = rows.len();
        for v in rows {
            self.add_situation(v);
        }
        (count, errors)
    }

    pub fn ingest_situations(&mut self, path: impl AsRef<Path>) -> Result<(usize, Vec<IngestError>), KnowledgeError> {
        Ok(self.ingest_situations_str(&read(path.as_ref())?))
    }

    /// Newest record for (location, topic) across sources; ties go to the
    /// lower-ordered source.
    pub fn record(&self, location: &str, topic: Topic) -> Option<&WaterRecord> {
        let loc = fold(location);
        self.records
            .iter()
            .filter(|((l, t, _), _)| *l == loc && *t == topic)
            .map(|(_, r)| r)
            .fold(None, |best: Option<&WaterRecord>, r| match best {
                Some(b) if b.observed_at >= r.observed_at => Some(b),
                _ => Some(r),
            })
    }

    pub fn active_situations(&self, location: &str, at: DateTime<Utc>) -> Vec<SituationalVariable> {
        let loc = fold(location);
        self.situations
            .iter()
            .filter(|v| fold(&v.location) == loc && v.is_active(at))
            .cloned()
            .collect()
    }

    /// Resolve a question and render the answer for `action`.
    pub fn query(
        &self,
        domain: &DomainSpec,
        action: &str,
        location: &str,
        topic: Topic,
        at: DateTime<Utc>,
        slots: &BTreeMap<String, String>,
    ) -> Result<Resolution, KnowledgeError> {
        let mut resolution = Resolution {
            location: location.trim().to_string(),
            topic,
            record: self.record(location, topic).cloned(),
            overrides: self.active_situations(location, at),
            answer_text: String::new(),
        };
        resolution.answer_text = render_response(domain, action, Some(&resolution), slots)?;
        Ok(resolution)
    }
}

fn read(path: &Path) -> Result<String, KnowledgeError> {
    std::fs::read_to_string(path).map_err(|e| KnowledgeError::FileUnreadable {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Fill `{answer}`, `{location}` and `{slot}` placeholders, then append one
/// note per active situational variable.
pub fn render_response(
    domain: &DomainSpec,
    action: &str,
    resolution: Option<&Resolution>,
    slots: &BTreeMap<String, String>,
) -> Result<String, KnowledgeError> {
    let template = match resolution {
        Some(r) => {
            let status = r.status();
            let key = format!("{action}.{}", status.as_str());
            match domain.templates.get(&key).and_then(|v| v.first()) {
                Some(t) => t.as_str(),
                None if status == Status::Unknown => NO_DATA_TEMPLATE,
                None => domain
                    .template(action, None)
                    .ok_or_else(|| KnowledgeError::MissingTemplate(action.to_string()))?,
            }
        }
        None => domain
            .template(action, None)
            .ok_or_else(|| KnowledgeError::MissingTemplate(action.to_string()))?,
    };

    let mut values: HashMap<&str, &str> = slots.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    if let Some(r) = resolution {
        let location = r
            .record
            .as_ref()
            .map_or(r.location.as_str(), |rec| rec.location.as_str());
        values.insert("location", location);
        values.insert("answer", r.record.as_ref().map_or("", |rec| rec.advisory.as_str()));
    }
    let mut text = substitute(template, &values);

    if let Some(r) = resolution {
        for v in &r.overrides {
            text.push_str(&format!(
                " Note: {} reported near {} — {}",
                v.kind.phrase(),
                v.location,
                v.description
            ));
        }
    }
    Ok(text)
}

fn substitute(template: &str, values: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                out.push_str(values.get(name).copied().unwrap_or(""));
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

/// Shared handle with snapshot swap: readers clone an `Arc` and never see a
/// half-ingested store.
#[derive(Debug, Clone, Default)]
pub struct SharedKnowledge {
    inner: Arc<RwLock<Arc<KnowledgeStore>>>,
}

impl SharedKnowledge {
    pub fn new(store: KnowledgeStore) -> Self {
        SharedKnowledge {
            inner: Arc::new(RwLock::new(Arc::new(store))),
        }
    }

    pub fn snapshot(&self) -> Arc<KnowledgeStore> {
        self.inner.read().expect("knowledge lock poisoned").clone()
    }

    /// Build the next snapshot from a copy of the current one, then swap it in.
    pub fn update<T>(&self, f: impl FnOnce(&mut KnowledgeStore) -> T) -> T {
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next);
        *self.inner.write().expect("knowledge lock poisoned") = Arc::new(next);
        out
    }
}
