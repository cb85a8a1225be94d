mod support;

use std::sync::Arc;

use aquabot_core::corpus::{parse_stories_markdown, serialize_stories, Step};
use aquabot_core::dialogue::EventKind;
use aquabot_core::eval::{export_augmented_corpus, Correction, CorrectionKind, InteractiveError, InteractiveSession};
use support::*;

fn session() -> InteractiveSession {
    InteractiveSession::new("s", Arc::new(train_fixture(&fixture_corpus())))
}

fn bot_actions(s: &InteractiveSession) -> Vec<String> {
    s.tracker()
        .events()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::BotAction { action } => Some(action.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn confirm_only_export_equals_transcript() {
    let now = fixed_now();
    let mut s = session();
    for text in ["hello", "is it safe to drink water in Cape Town", "bye"] {
        s.step(text, now).unwrap();
        let r = s.confirm(now).unwrap();
        assert!(r.next.is_none());
        assert_eq!(r.utterances.len(), 1);
    }
    assert!(s.log().is_empty());
    let t = s.transcript();
    assert_eq!(
        t.steps,
        [
            Step::user("greet"),
            Step::bot("utter_greet"),
            Step::user_with("waterquality", &[("location", "Cape Town")]),
            Step::bot("utter_water_quality"),
            Step::user("goodbye"),
            Step::bot("utter_goodbye"),
        ]
    );
    let exported = export_augmented_corpus(&[], std::slice::from_ref(&t));
    assert_eq!(exported, serialize_stories(&[t]));
}

#[test]
fn ordering_errors() {
    let now = fixed_now();
    let mut s = session();
    assert!(matches!(s.confirm(now), Err(InteractiveError::NothingPending)));
    assert!(matches!(s.rewind(now), Err(InteractiveError::Engine(_))));
    s.step("hi", now).unwrap();
    assert!(matches!(s.step("hi", now), Err(InteractiveError::ReviewPending)));
    let bad = Correction {
        kind: CorrectionKind::Intent,
        label: "nope".into(),
    };
    assert!(matches!(s.correct(bad, now), Err(InteractiveError::UnknownLabel(_))));
    assert!(s.pending().is_some(), "a rejected correction keeps the step pending");
}

#[test]
fn intent_correction_repredicts() {
    let now = fixed_now();
    let mut s = session();
    let p = s.step("hello", now).unwrap();
    assert_eq!(p.proposed_action, "utter_greet");
    let r = s
        .correct(
            Correction {
                kind: CorrectionKind::Intent,
                label: "goodbye".into(),
            },
            now,
        )
        .unwrap();
    let next = r.next.unwrap();
    assert_eq!(next.intents[0].intent, "goodbye");
    assert_eq!(next.proposed_action, "utter_goodbye");
    assert!(s.tracker().events().is_empty(), "nothing committed yet");
    s.confirm(now).unwrap();
    assert_eq!(s.transcript().steps[0], Step::user("goodbye"));
    assert_eq!(s.log().entries[0].predicted, "greet");
}

#[test]
fn action_correction_commits_and_rewind_drops_the_turn() {
    let now = fixed_now();
    let mut s = session();
    s.step("hi", now).unwrap();
    s.confirm(now).unwrap();
    s.step("are there water restrictions in cape town", now).unwrap();
    let r = s
        .correct(
            Correction {
                kind: CorrectionKind::Action,
                label: ENGINEERED_CLASS.into(),
            },
            now,
        )
        .unwrap();
    assert_eq!(r.utterances.len(), 1);
    assert!(r.utterances[0].contains("restrictions"), "{:?}", r.utterances);
    assert_eq!(bot_actions(&s), ["utter_greet", ENGINEERED_CLASS]);
    let before = s.tracker().events().len();

    s.rewind(now).unwrap();
    assert!(s.tracker().events().len() < before);
    assert_eq!(bot_actions(&s), ["utter_greet"]);
    assert_eq!(s.transcript().steps, [Step::user("greet"), Step::bot("utter_greet")]);
    assert!(s.tracker().slots().is_empty());

    // a pending, uncommitted step is simply dropped
    s.step("bye", now).unwrap();
    s.rewind(now).unwrap();
    assert!(s.pending().is_none());
    assert_eq!(bot_actions(&s), ["utter_greet"]);
}

#[test]
fn exported_corpus_parses_and_keeps_originals() {
    let a = augmentation_run();
    let stories = parse_stories_markdown(&a.exported).unwrap();
    let originals = fixture_corpus().stories;
    assert_eq!(&stories[..originals.len()], &originals[..]);
    let taught = stories.last().unwrap();
    assert!(taught.steps.contains(&Step::bot(ENGINEERED_CLASS)));
}
