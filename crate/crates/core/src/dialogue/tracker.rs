use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::DomainSpec;
use crate::nlu::ParseResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    UserMessage { parse: ParseResult },
    BotAction { action: String },
    SlotSet { slot: String, value: String },
    Restart,
    Rewind,
    Listen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: i64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn new(timestamp: i64, kind: EventKind) -> Self {
        Event { timestamp, kind }
    }

    pub fn user(timestamp: i64, parse: ParseResult) -> Self {
        Event::new(timestamp, EventKind::UserMessage { parse })
    }

    pub fn bot(timestamp: i64, action: impl Into<String>) -> Self {
        Event::new(timestamp, EventKind::BotAction { action: action.into() })
    }

    pub fn slot(timestamp: i64, slot: impl Into<String>, value: impl Into<String>) -> Self {
        Event::new(
            timestamp,
            EventKind::SlotSet {
                slot: slot.into(),
                value: value.into(),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackerError {
    #[error("nothing to rewind: no user message in the tracker")]
    RewindOnEmpty,
    #[error("event timestamp {found} is earlier than the last event at {last}")]
    TimestampRegression { last: i64, found: i64 },
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
}

/// Event history of one conversation. `slots` is always the fold of the
/// `SlotSet` events in `events`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTracker {
    pub conversation_id: String,
    events: Vec<Event>,
    slots: BTreeMap<String, String>,
}

impl DialogueTracker {
    pub fn new(conversation_id: impl Into<String>) -> Self {
        DialogueTracker {
            conversation_id: conversation_id.into(),
            events: Vec::new(),
            slots: BTreeMap::new(),
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn slots(&self) -> &BTreeMap<String, String> {
        &self.slots
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.events.last().map(|e| e.timestamp)
    }

    pub fn latest_message(&self) -> Option<&ParseResult> {
        self.events.iter().rev().find_map(|e| match &e.kind {
            EventKind::UserMessage { parse } => Some(parse),
            _ => None,
        })
    }

    /// Apply an event, deriving `SlotSet`s for user-message entities whose
    /// type names a domain slot. Returns everything that should go to the
    /// append-only log, in order.
    pub fn apply_event(&mut self, event: Event, domain: &DomainSpec) -> Result<Vec<Event>, TrackerError> {
        let derived: Vec<Event> = match &event.kind {
            EventKind::UserMessage { parse } => parse
                .entities
                .iter()
                .filter(|e| domain.slot_index(&e.entity_type).is_some())
                .map(|e| Event::slot(event.timestamp, &e.entity_type, &e.value))
                .collect(),
            _ => Vec::new(),
        };
        let mut logged = Vec::with_capacity(1 + derived.len());
        self.apply_raw(event.clone())?;
        logged.push(event);
        for d in derived {
            self.apply_raw(d.clone())?;
            logged.push(d);
        }
        Ok(logged)
    }

    /// Apply exactly this event, with no derivation. Used for log replay.
    pub fn apply_raw(&mut self, event: Event) -> Result<(), TrackerError> {
        if let Some(last) = self.last_timestamp() {
            if event.timestamp < last {
                return Err(TrackerError::TimestampRegression {
                    last,
                    found: event.timestamp,
                });
            }
        }
        match event.kind {
            EventKind::Restart => {
                self.events.clear();
                self.slots.clear();
            }
            EventKind::Rewind => {
                let at = self
                    .events
                    .iter()
                    .rposition(|e| matches!(e.kind, EventKind::UserMessage { .. }))
                    .ok_or(TrackerError::RewindOnEmpty)?;
                self.events.truncate(at);
                self.recompute_slots();
            }
            EventKind::SlotSet { ref slot, ref value } => {
                self.slots.insert(slot.clone(), value.clone());
                self.events.push(event);
            }
            _ => self.events.push(event),
        }
        Ok(())
    }

    fn recompute_slots(&mut self) {
        self.slots.clear();
        for e in &self.events {
            if let EventKind::SlotSet { slot, value } = &e.kind {
                self.slots.insert(slot.clone(), value.clone());
            }
        }
    }

    pub fn replay(
        conversation_id: impl Into<String>,
        events: impl IntoIterator<Item = Event>,
    ) -> Result<Self, TrackerError> {
        let mut t = DialogueTracker::new(conversation_id);
        for e in events {
            t.apply_raw(e)?;
        }
        Ok(t)
    }

    /// Write events as JSON lines.
    pub fn write_log(events: &[Event], mut out: impl Write) -> std::io::Result<()> {
        for e in events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Read a JSON-lines event log. Blank lines are skipped.
    pub fn read_log(input: impl BufRead) -> Result<Vec<Event>, TrackerError> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| TrackerError::Log {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| TrackerError::Log {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(events)
    }
}
