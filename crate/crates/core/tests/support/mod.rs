//! Oracles, generators and fixture loaders shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aquabot_core::corpus::{DomainSpec, EntitySpan, IntentExample, Step, Story, DEFAULT_FALLBACK, DEFAULT_LISTEN};
use aquabot_core::dialogue::{
    policy_example_gradients, policy_example_loss, MemoryBank, PolicyConfig, PolicyParams, StateFeatures,
};
use aquabot_core::engine::{ModelBundle, TrainConfig, TrainingCorpus};
use aquabot_core::eval::{BigInt, BigRational};
use aquabot_core::knowledge::{KnowledgeStore, SharedKnowledge, Topic};
use aquabot_core::linalg::norm;
use aquabot_core::nlu::{example_gradients, example_loss, Hyperparams, RankerParams};
use aquabot_core::text::FeatureVector;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn fixture_corpus() -> TrainingCorpus {
    let d = data_dir();
    TrainingCorpus::load(
        &d.join("domain.md"),
        &d.join("nlu.md"),
        &d.join("stories.md"),
        &[d.join("locations.tsv")],
    )
    .expect("fixture corpus loads")
}

pub fn fixture_knowledge() -> SharedKnowledge {
    let d = data_dir();
    let mut store = KnowledgeStore::new();
    let (_, errors) = store.ingest_records(d.join("records.csv")).unwrap();
    assert!(errors.is_empty(), "{errors:?}");
    let (_, errors) = store.ingest_situations(d.join("situational.csv")).unwrap();
    assert!(errors.is_empty(), "{errors:?}");
    SharedKnowledge::new(store)
}

pub fn fixture_train_config() -> TrainConfig {
    let text = std::fs::read_to_string(data_dir().join("aquabot.toml")).unwrap();
    let table: toml::Table = toml::from_str(&text).unwrap();
    table["train"].clone().try_into().unwrap()
}

pub fn train_fixture(corpus: &TrainingCorpus) -> ModelBundle {
    ModelBundle::train(corpus, &fixture_train_config(), fixture_knowledge())
        .unwrap()
        .0
}

// ---- metric oracle ----

pub fn ratio(n: u64, d: u64) -> BigRational {
    if d == 0 {
        BigRational::from_integer(BigInt::from(0))
    } else {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }
}

/// Per-label (precision, recall, f1, support) by direct counting over the
/// instances, plus the support-weighted row over labels with support.
/// (precision, recall, f1, support)
pub type Row = (BigRational, BigRational, BigRational, u64);

pub fn brute_force_metrics(labels: &[String], pairs: &[(String, String)]) -> (Vec<Row>, Row) {
    let mut rows = Vec::new();
    for l in labels {
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for (t, p) in pairs {
            match (t == l, p == l) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        rows.push((
            ratio(tp, tp + fp),
            ratio(tp, tp + fnn),
            ratio(2 * tp, 2 * tp + fp + fnn),
            tp + fnn,
        ));
    }
    let total = pairs.len() as u64;
    let zero = || BigRational::from_integer(BigInt::from(0));
    let (mut p, mut r, mut f) = (zero(), zero(), zero());
    for (pi, ri, fi, s) in &rows {
        let w = BigRational::from_integer(BigInt::from(*s));
        p += pi * &w;
        r += ri * &w;
        f += fi * &w;
    }
    if total > 0 {
        let t = BigRational::from_integer(BigInt::from(total));
        p /= &t;
        r /= &t;
        f /= &t;
    }
    (rows, (p, r, f, total))
}

// ---- gradient checks ----

const FD_STEP: f64 = 1e-6;
/// Instances whose hinge terms sit closer than this to zero are resampled,
/// the loss not being differentiable there.
const KINK_GAP: f64 = 1e-3;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

fn hinges_clear(margin: f64, s_pos: f64, s_negs: &[f64]) -> bool {
    let h: Vec<f64> = s_negs.iter().map(|s| margin - s_pos + s).collect();
    h.iter().all(|v| v.abs() > KINK_GAP) && h.iter().any(|&v| v > 0.0)
}

/// One random ranker instance: relative error between the analytic and
/// central-difference gradients over every touched parameter.
pub fn ranker_gradient_error(rng: &mut StdRng) -> f64 {
    loop {
        let n_labels = rng.random_range(2..6);
        let feature_dim = 64;
        let hyper = Hyperparams {
            dim: rng.random_range(2..7),
            margin: rng.random_range(0.1..1.0),
            seed: rng.random(),
            ..Hyperparams::default()
        };
        let labels = (0..n_labels).map(|i| format!("l{i}")).collect();
        let mut params = RankerParams::init(feature_dim, labels, hyper);
        let mut indices: Vec<u32> = (0..feature_dim as u32).collect();
        indices.shuffle(rng);
        indices.truncate(rng.random_range(1..5));
        indices.sort_unstable();
        let x = FeatureVector {
            dim: feature_dim,
            values: indices.iter().map(|_| rng.random_range(0.5..3.0)).collect(),
            indices,
        };
        for &i in &x.indices {
            for v in params.input_row_mut(i).iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        for l in 0..n_labels {
            for v in params.label_embedding_mut(l) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let positive = rng.random_range(0..n_labels);
        let mut negatives: Vec<usize> = (0..n_labels).filter(|&l| l != positive).collect();
        negatives.shuffle(rng);
        negatives.truncate(rng.random_range(1..=negatives.len()));

        let sims = params.similarities(&x);
        let s_negs: Vec<f64> = negatives.iter().map(|&n| sims[n]).collect();
        if !hinges_clear(params.hyper.margin, sims[positive], &s_negs) {
            continue;
        }

        let g = example_gradients(&params, &x, positive, &negatives);
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let d = params.dim();
        let loss = |p: &RankerParams| example_loss(p, &x, positive, &negatives);
        for &i in &x.indices {
            for j in 0..d {
                analytic.push(g.input_rows.get(&i).map_or(0.0, |r| r[j]));
                let mut plus = params.clone();
                plus.input_row_mut(i)[j] += FD_STEP;
                let mut minus = params.clone();
                minus.input_row_mut(i)[j] -= FD_STEP;
                numeric.push((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP));
            }
        }
        for l in 0..n_labels {
            for j in 0..d {
                analytic.push(g.label_rows.get(&l).map_or(0.0, |r| r[j]));
                let mut plus = params.clone();
                plus.label_embedding_mut(l)[j] += FD_STEP;
                let mut minus = params.clone();
                minus.label_embedding_mut(l)[j] -= FD_STEP;
                numeric.push((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP));
            }
        }
        assert!((g.loss - loss(&params)).abs() < 1e-12);
        return relative_error(&analytic, &numeric);
    }
}

/// Two intents, one slot, three actions.
pub fn tiny_domain() -> DomainSpec {
    DomainSpec {
        intents: vec!["ask".into(), "bye".into()],
        entity_types: vec!["place".into()],
        slots: vec!["place".into()],
        actions: vec![DEFAULT_FALLBACK.into(), DEFAULT_LISTEN.into(), "utter_answer".into()],
        ..DomainSpec::default()
    }
}

pub fn random_policy(rng: &mut StdRng, dim: usize, history: usize) -> PolicyParams {
    let config = PolicyConfig {
        hyper: Hyperparams {
            dim,
            margin: rng.random_range(0.1..1.0),
            seed: rng.random(),
            ..Hyperparams::default()
        },
        history,
        memory_capacity: 20,
    };
    let mut p = PolicyParams::init(&tiny_domain(), config);
    for t in p.net.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
    }
    p
}

pub fn random_state(rng: &mut StdRng, width: usize, k: usize) -> StateFeatures {
    StateFeatures {
        width,
        rows: (0..k)
            .map(|_| (0..width).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect(),
    }
}

/// One random policy instance (hidden size 4, window 2, three actions)
/// with up to three memory entries.
pub fn policy_gradient_error(rng: &mut StdRng) -> f64 {
    let domain = tiny_domain();
    let width = domain.intents.len() + domain.actions.len() + domain.slots.len();
    loop {
        let params = random_policy(rng, 4, 2);
        let features = random_state(rng, width, 2);
        let memory: Vec<Vec<f64>> = (0..rng.random_range(0..4))
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let positive = rng.random_range(0..3);
        let negatives: Vec<usize> = (0..3).filter(|&a| a != positive).collect();

        let mut bank = MemoryBank::new(20);
        memory.iter().for_each(|m| bank.push(m.clone()));
        let q = params.encode_dialogue(&features);
        let ctx = params.attend_memory(&q, &bank).context;
        let scores = params.score_actions(&q, &ctx);
        let s_negs: Vec<f64> = negatives.iter().map(|&n| scores[n].score).collect();
        if !hinges_clear(params.config.hyper.margin, scores[positive].score, &s_negs) {
            continue;
        }

        let (loss, grads) = policy_example_gradients(&params, &features, &memory, positive, &negatives);
        assert!((loss - policy_example_loss(&params, &features, &memory, positive, &negatives)).abs() < 1e-12);
        let analytic: Vec<f64> = grads.tensors().into_iter().flatten().copied().collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        let sizes: Vec<usize> = params.net.tensors().iter().map(|t| t.len()).collect();
        for (t, &len) in sizes.iter().enumerate() {
            for i in 0..len {
                let mut plus = params.clone();
                plus.net.tensors_mut()[t][i] += FD_STEP;
                let mut minus = params.clone();
                minus.net.tensors_mut()[t][i] -= FD_STEP;
                let lp = policy_example_loss(&plus, &features, &memory, positive, &negatives);
                let lm = policy_example_loss(&minus, &features, &memory, positive, &negatives);
                numeric.push((lp - lm) / (2.0 * FD_STEP));
            }
        }
        return relative_error(&analytic, &numeric);
    }
}

// ---- attention ----

/// Checks the attention invariants on one random instance; `Err` names the
/// first violation.
pub fn attention_case(rng: &mut StdRng) -> Result<(), String> {
    let dim = rng.random_range(2..9);
    let params = random_policy(rng, dim, 2);
    let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();

    let n = rng.random_range(1..12);
    let mut bank = MemoryBank::new(20);
    for _ in 0..n {
        bank.push((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect());
    }
    let a = params.attend_memory(&q, &bank);
    if a.probs.len() != n {
        return Err(format!("{} probabilities for {n} entries", a.probs.len()));
    }
    if a.probs.iter().any(|&p| p.is_nan() || p < 0.0) {
        return Err(format!("negative probability in {:?}", a.probs));
    }
    let sum: f64 = a.probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(format!("probabilities sum to {sum}"));
    }

    let m: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut same = MemoryBank::new(20);
    for _ in 0..n {
        same.push(m.clone());
    }
    let u = params.attend_memory(&q, &same);
    if u.probs.iter().any(|p| (p - 1.0 / n as f64).abs() > 1e-12) {
        return Err(format!("identical memories not uniform: {:?}", u.probs));
    }
    if u.context.iter().zip(&m).any(|(c, v)| (c - v).abs() > 1e-9) {
        return Err("identical memories: context differs from the memory".into());
    }

    let e = params.attend_memory(&q, &MemoryBank::new(20));
    if !e.probs.is_empty() || e.context.len() != dim || e.context.iter().any(|&c| c != 0.0) {
        return Err("empty memory must give a zero context".into());
    }
    Ok(())
}

// ---- corpus generators ----

fn arb_label() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,9}"
}

fn arb_words() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z0-9',?!]{1,8}", 1..5).prop_map(|w| w.join(" "))
}

fn arb_value() -> impl Strategy<Value = String> {
    prop::collection::vec("[A-Za-z0-9]{1,6}", 1..3).prop_map(|w| w.join(" "))
}

pub fn arb_example() -> impl Strategy<Value = IntentExample> {
    let piece = (arb_words(), prop::option::of((arb_value(), arb_label(), any::<bool>())));
    (arb_label(), prop::collection::vec(piece, 1..4)).prop_map(|(intent, pieces)| {
        let mut text = String::new();
        let mut entities = Vec::new();
        for (i, (words, ent)) in pieces.into_iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            text.push_str(&words);
            if let Some((surface, entity_type, canonical)) = ent {
                text.push(' ');
                let start = text.chars().count();
                text.push_str(&surface);
                let value = if canonical {
                    format!("{surface} X")
                } else {
                    surface.clone()
                };
                entities.push(EntitySpan {
                    start,
                    end: start + surface.chars().count(),
                    entity_type,
                    value,
                });
            }
        }
        IntentExample { text, intent, entities }
    })
}

pub fn arb_examples() -> impl Strategy<Value = Vec<IntentExample>> {
    prop::collection::vec(arb_example(), 1..12)
}

fn arb_user_step() -> impl Strategy<Value = Step> {
    (
        arb_label(),
        prop::collection::btree_map(arb_label(), "[ -~]{0,12}", 0..3),
    )
        .prop_map(|(intent, entities)| Step::UserTurn { intent, entities })
}

pub fn arb_story() -> impl Strategy<Value = Story> {
    let turn = (
        arb_user_step(),
        prop::collection::vec(arb_label().prop_map(Step::bot), 1..4),
    );
    (
        "[A-Za-z0-9][A-Za-z0-9 _-]{0,20}[A-Za-z0-9]",
        prop::collection::vec(turn, 1..5),
        any::<bool>(),
    )
        .prop_map(|(name, turns, trailing_user)| {
            let mut steps = Vec::new();
            for (u, bots) in turns {
                steps.push(u);
                steps.extend(bots);
            }
            if trailing_user {
                steps.push(Step::user("final"));
            }
            Story::new(name, steps)
        })
}

pub fn arb_stories() -> impl Strategy<Value = Vec<Story>> {
    prop::collection::vec(arb_story(), 1..6)
}

fn distinct(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set(arb_label(), n).prop_map(|s| s.into_iter().collect())
}

pub fn arb_domain() -> impl Strategy<Value = DomainSpec> {
    (
        distinct(1..5),
        distinct(0..3),
        distinct(0..3),
        distinct(1..5),
        any::<u64>(),
    )
        .prop_map(|(intents, entity_types, slots, mut actions, seed)| {
            use rand::SeedableRng;
            let mut rng = StdRng::seed_from_u64(seed);
            for extra in [DEFAULT_LISTEN, DEFAULT_FALLBACK] {
                if !actions.iter().any(|a| a == extra) {
                    let at = rng.random_range(0..=actions.len());
                    actions.insert(at, extra.to_string());
                }
            }
            let statuses = ["", ".safe", ".unsafe", ".restricted", ".unknown"];
            let topics = [Topic::DrinkingQuality, Topic::BeachQuality, Topic::Availability];
            let mut templates: BTreeMap<String, Vec<String>> = BTreeMap::new();
            let mut answers = BTreeMap::new();
            for a in &actions {
                for s in statuses {
                    if rng.random_bool(0.3) {
                        let n = rng.random_range(1..3);
                        let mut list = Vec::new();
                        for i in 0..n {
                            let mut t = format!("Reply {i} for {a}.");
                            if let Some(slot) = slots.first() {
                                t.push_str(&format!(" In {{{slot}}}: {{answer}}"));
                            }
                            list.push(t);
                        }
                        templates.insert(format!("{a}{s}"), list);
                    }
                }
                if rng.random_bool(0.3) {
                    answers.insert(a.clone(), topics[rng.random_range(0..3)]);
                }
            }
            DomainSpec {
                intents,
                entity_types,
                slots,
                actions,
                templates,
                answers,
                fallback_action: DEFAULT_FALLBACK.into(),
                listen_action: DEFAULT_LISTEN.into(),
            }
        })
}

// ---- fixture workflows ----

use aquabot_core::corpus::{load_file, parse_stories_markdown};
use aquabot_core::dialogue::{select_action, unroll_story, DialogueTracker};
use aquabot_core::eval::{
    compare_reports, evaluate_policy, Correction, CorrectionKind, EvaluationReport, InteractiveSession,
    ReportComparison,
};
use chrono::{DateTime, Utc};

pub const QUESTION_INTENTS: [&str; 3] = ["waterquality", "beachquality", "wateravailability"];
pub const GOODBYE: &str = "utter_goodbye";

pub fn fixed_now() -> DateTime<Utc> {
    "2019-03-01T12:00:00Z".parse().unwrap()
}

pub fn test_stories() -> Vec<Story> {
    load_file(data_dir().join("test_stories.md"), parse_stories_markdown).unwrap()
}

/// Teacher-forced prediction points where the user asks a question after
/// an earlier answer; returns (points checked, points answered with a
/// farewell).
pub fn farewell_violations(stories: &[Story], bundle: &ModelBundle) -> (usize, usize) {
    let domain = &bundle.domain;
    let ni = domain.intents.len();
    let hyper = &bundle.policy.config.hyper;
    let answer_rows: Vec<usize> = domain
        .answers
        .keys()
        .filter_map(|a| domain.action_index(a))
        .map(|a| ni + a)
        .collect();
    let (mut checked, mut violations) = (0, 0);
    for story in stories {
        let u = unroll_story(story, domain).unwrap();
        for (i, _) in u.pairs() {
            let row = &u.rows[i];
            let intent = (0..ni)
                .find(|&k| row.features[k] == 1.0)
                .map(|k| domain.intents[k].as_str());
            let answered_before = u.rows[..i]
                .iter()
                .any(|r| answer_rows.iter().any(|&c| r.features[c] == 1.0));
            if !(row.user_turn && answered_before && intent.is_some_and(|t| QUESTION_INTENTS.contains(&t))) {
                continue;
            }
            checked += 1;
            let pred = bundle.policy.predict_rows(&u.rows[..=i]);
            let choice = select_action(&pred.scores, hyper.confidence_threshold, hyper.temperature, domain);
            if choice.action == GOODBYE {
                violations += 1;
            }
        }
    }
    (checked, violations)
}

/// Live greet → question → question → goodbye; the bot actions of each turn.
pub fn live_multi_question(bundle: &ModelBundle) -> Vec<Vec<String>> {
    let mut t = DialogueTracker::new("multi");
    [
        "hello",
        "is it safe to drink water in Cape Town",
        "can i swim at muizenberg",
        "is it safe to drink water in escape town",
        "bye",
    ]
    .iter()
    .map(|m| {
        let o = bundle.handle_message(&mut t, m, fixed_now()).unwrap();
        o.actions.into_iter().map(|a| a.action).collect()
    })
    .collect()
}

pub const ENGINEERED_CLASS: &str = "utter_water_availability";

pub struct Augmentation {
    pub before: EvaluationReport,
    pub after: EvaluationReport,
    pub comparison: ReportComparison,
    pub exported: String,
    pub corrections: usize,
}

/// Train, evaluate, teach one correction interactively, retrain on the
/// exported stories and evaluate again.
pub fn augmentation_run() -> Augmentation {
    let corpus = fixture_corpus();
    let held_out = test_stories();
    let bundle = std::sync::Arc::new(train_fixture(&corpus));
    let before = evaluate_policy(&held_out, &bundle.policy, &bundle.domain).unwrap();

    let now = fixed_now();
    let mut s = InteractiveSession::new("teach", bundle.clone());
    s.step("hi", now).unwrap();
    s.confirm(now).unwrap();
    let p = s.step("are there water restrictions in cape town", now).unwrap();
    assert_eq!(p.intents[0].intent, "wateravailability");
    assert_ne!(p.proposed_action, ENGINEERED_CLASS, "the engineered gap is gone");
    s.correct(
        Correction {
            kind: CorrectionKind::Action,
            label: ENGINEERED_CLASS.into(),
        },
        now,
    )
    .unwrap();
    s.step("bye", now).unwrap();
    s.confirm(now).unwrap();
    let (story, log) = s.finish();
    let exported = aquabot_core::eval::export_augmented_corpus(&corpus.stories, &[story]);

    let mut augmented = corpus.clone();
    augmented.stories = parse_stories_markdown(&exported).unwrap();
    let retrained = train_fixture(&augmented);
    let after = evaluate_policy(&held_out, &retrained.policy, &retrained.domain).unwrap();
    let comparison = compare_reports(&before, &after).unwrap();
    Augmentation {
        before,
        after,
        comparison,
        exported,
        corrections: log.len(),
    }
}
