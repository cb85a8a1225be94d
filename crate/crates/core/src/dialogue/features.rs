use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::tracker::{Event, EventKind};
use crate::corpus::DomainSpec;

/// One state snapshot: `one-hot(intent) ⊕ one-hot(previous action) ⊕ slot bits`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub features: Vec<f64>,
    /// Snapshot taken right after a user message (as opposed to after a
    /// bot action).
    pub user_turn: bool,
}

/// The last K rows of a conversation, oldest first, zero-padded at the front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    pub width: usize,
    pub rows: Vec<Vec<f64>>,
}

impl StateFeatures {
    pub fn zeros(width: usize, k: usize) -> Self {
        StateFeatures {
            width,
            rows: vec![vec![0.0; width]; k],
        }
    }
}

pub fn state_width(domain: &DomainSpec) -> usize {
    domain.intents.len() + domain.actions.len() + domain.slots.len()
}

/// Every prediction point in the event list, in order. A row is taken
/// after each user message (together with the slots it set) and after
/// each bot action. `Listen` ends a turn without producing a row.
pub fn history_rows(events: &[Event], domain: &DomainSpec) -> Vec<HistoryRow> {
    let ni = domain.intents.len();
    let na = domain.actions.len();
    let width = state_width(domain);
    let mut rows = Vec::new();
    let mut intent: Option<usize> = None;
    let mut last_action: Option<usize> = None;
    let mut slots: BTreeSet<usize> = BTreeSet::new();
    let mut pending_user = false;

    let snapshot = |intent: Option<usize>, action: Option<usize>, slots: &BTreeSet<usize>, user_turn| {
        let mut f = vec![0.0; width];
        if let Some(i) = intent {
            f[i] = 1.0;
        }
        if let Some(a) = action {
            f[ni + a] = 1.0;
        }
        for s in slots {
            f[ni + na + s] = 1.0;
        }
        HistoryRow { features: f, user_turn }
    };

    for e in events {
        if pending_user && !matches!(e.kind, EventKind::SlotSet { .. }) {
            rows.push(snapshot(intent, last_action, &slots, true));
            pending_user = false;
        }
        match &e.kind {
            EventKind::UserMessage { parse } => {
                intent = parse.top_intent().and_then(|s| domain.intent_index(&s.intent));
                pending_user = true;
            }
            EventKind::SlotSet { slot, .. } => {
                if let Some(s) = domain.slot_index(slot) {
                    slots.insert(s);
                }
            }
            EventKind::BotAction { action } => {
                last_action = domain.action_index(action);
                rows.push(snapshot(intent, last_action, &slots, false));
            }
            EventKind::Listen => last_action = domain.action_index(&domain.listen_action),
            EventKind::Restart => {
                intent = None;
                last_action = None;
                slots.clear();
            }
            EventKind::Rewind => {}
        }
    }
    if pending_user {
        rows.push(snapshot(intent, last_action, &slots, true));
    }
    rows
}

/// Window of `k` rows ending at (and including) `end`.
pub fn window(rows: &[HistoryRow], end: usize, k: usize, width: usize) -> StateFeatures {
    let mut out = StateFeatures::zeros(width, k);
    let first = (end + 1).saturating_sub(k);
    let slice = &rows[first..=end];
    let offset = k - slice.len();
    for (i, r) in slice.iter().enumerate() {
        out.rows[offset + i] = r.features.clone();
    }
    out
}

pub fn featurize_state(events: &[Event], domain: &DomainSpec, k: usize) -> StateFeatures {
    assert!(k >= 1, "history length must be at least 1");
    let rows = history_rows(events, domain);
    let width = state_width(domain);
    match rows.len() {
        0 => StateFeatures::zeros(width, k),
        n => window(&rows, n - 1, k, width),
    }
}

/// Windows of the user-turn rows that precede the current prediction
/// point (the last row). Their encodings populate the memory bank.
pub fn memory_windows(rows: &[HistoryRow], k: usize, width: usize, capacity: usize) -> Vec<StateFeatures> {
    let Some(last) = rows.len().checked_sub(1) else {
        return Vec::new();
    };
    let ends: Vec<usize> = (0..last).filter(|&j| rows[j].user_turn).collect();
    let skip = ends.len().saturating_sub(capacity);
    ends[skip..].iter().map(|&j| window(rows, j, k, width)).collect()
}

/// FIFO store of past turn embeddings for one conversation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        MemoryBank {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, embedding: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(embedding);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }
}

impl FromIterator<Vec<f64>> for MemoryBank {
    fn from_iter<I: IntoIterator<Item = Vec<f64>>>(iter: I) -> Self {
        let entries: VecDeque<Vec<f64>> = iter.into_iter().collect();
        MemoryBank {
            capacity: entries.len(),
            entries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_domain;
    use crate::dialogue::Event;
    use crate::nlu::ParseResult;

    fn domain() -> DomainSpec {
        parse_domain("intents:\n  - greet\n  - goodbye\nslots:\n  - location\nactions:\n  - action_listen\n  - action_default_fallback\n  - utter_greet\n").unwrap()
    }

    #[test]
    fn fresh_tracker_is_all_zero() {
        let f = featurize_state(&[], &domain(), 5);
        assert_eq!(f.rows.len(), 5);
        assert_eq!(f.width, 2 + 3 + 1);
        assert!(f.rows.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn greet_then_utter_greet() {
        let d = domain();
        let events = vec![
            Event::user(0, ParseResult::with_intent("hi", "greet", vec![])),
            Event::bot(0, "utter_greet"),
        ];
        let f = featurize_state(&events, &d, 3);
        let newest = &f.rows[2];
        assert_eq!(newest, &vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(f.rows[1], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(f.rows[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn slot_presence_bit() {
        let d = domain();
        let events = vec![
            Event::user(0, ParseResult::with_intent("hi", "greet", vec![])),
            Event::slot(0, "location", "Cape Town"),
        ];
        let f = featurize_state(&events, &d, 2);
        assert_eq!(f.rows[1][5], 1.0);
    }

    #[test]
    fn listen_sets_previous_action() {
        let d = domain();
        let events = vec![
            Event::user(0, ParseResult::with_intent("hi", "greet", vec![])),
            Event::bot(0, "utter_greet"),
            Event::new(0, crate::dialogue::EventKind::Listen),
            Event::user(1, ParseResult::with_intent("bye", "goodbye", vec![])),
        ];
        let rows = history_rows(&events, &d);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].features, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(rows[2].user_turn);
        let mem = memory_windows(&rows, 2, 6, 20);
        assert_eq!(mem.len(), 1);
        assert_eq!(mem[0].rows[1], rows[0].features);
    }

    #[test]
    fn memory_bank_fifo() {
        let mut bank = MemoryBank::new(2);
        bank.push(vec![1.0]);
        bank.push(vec![2.0]);
        bank.push(vec![3.0]);
        assert_eq!(bank.iter().cloned().collect::<Vec<_>>(), vec![vec![2.0], vec![3.0]]);
        bank.clear();
        assert!(bank.is_empty());
    }
}
