use std::collections::BTreeSet;

use super::metrics::{compute_metrics, ConfusionMatrix, EvaluationReport};
use crate::corpus::{DomainSpec, IntentExample, Story};
use crate::dialogue::{select_action, unroll_story, PolicyParams};
use crate::engine::example_features;
use crate::nlu::{predict_intent, RankerParams, TrainError};
use crate::parallel::{map, Execution};

/// Labels of a report: the model's labels followed by any unseen true
/// labels in sorted order.
fn label_set<'a>(known: &[String], truths: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut labels = known.to_vec();
    let extra: BTreeSet<&str> = truths.filter(|t| !known.iter().any(|k| k == t)).collect();
    labels.extend(extra.into_iter().map(str::to_string));
    labels
}

fn report(labels: Vec<String>, pairs: &[(String, String)]) -> EvaluationReport {
    let m = ConfusionMatrix::from_pairs(labels, pairs.iter().map(|(t, p)| (t.as_str(), p.as_str())))
        .expect("label set covers every pair");
    compute_metrics(&m).expect("square by construction")
}

/// `(true, predicted)` intent per example, argmax of the ranker.
pub fn nlu_predictions(examples: &[IntentExample], ranker: &RankerParams, mode: Execution) -> Vec<(String, String)> {
    map(examples, mode, |e| {
        let x = example_features(&e.text, ranker.feature_dim);
        let top = predict_intent(ranker, &x).into_iter().next().map(|s| s.intent);
        (e.intent.clone(), top.unwrap_or_default())
    })
}

pub fn evaluate_nlu(examples: &[IntentExample], ranker: &RankerParams) -> EvaluationReport {
    evaluate_nlu_with(examples, ranker, Execution::default())
}

pub fn evaluate_nlu_with(examples: &[IntentExample], ranker: &RankerParams, mode: Execution) -> EvaluationReport {
    let pairs = nlu_predictions(examples, ranker, mode);
    let labels = label_set(&ranker.labels, pairs.iter().map(|(t, _)| t.as_str()));
    report(labels, &pairs)
}

/// Policy decisions along one story, teacher-forced on the story's own
/// history.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryPredictions {
    pub story: String,
    /// `(true, predicted)` action at every prediction point.
    pub pairs: Vec<(String, String)>,
}

impl StoryPredictions {
    pub fn is_perfect(&self) -> bool {
        self.pairs.iter().all(|(t, p)| t == p)
    }
}

pub fn policy_predictions(
    stories: &[Story],
    policy: &PolicyParams,
    domain: &DomainSpec,
    mode: Execution,
) -> Result<Vec<StoryPredictions>, TrainError> {
    let hyper = &policy.config.hyper;
    map(stories, mode, |story| {
        let u = unroll_story(story, domain)?;
        let pairs = u
            .pairs()
            .map(|(i, target)| {
                let pred = policy.predict_rows(&u.rows[..=i]);
                let choice = select_action(&pred.scores, hyper.confidence_threshold, hyper.temperature, domain);
                (domain.actions[target].clone(), choice.action)
            })
            .collect();
        Ok(StoryPredictions {
            story: story.name.clone(),
            pairs,
        })
    })
    .into_iter()
    .collect()
}

/// Confusion over domain actions at every prediction point of every story,
/// listen insertions included.
pub fn evaluate_policy(
    stories: &[Story],
    policy: &PolicyParams,
    domain: &DomainSpec,
) -> Result<EvaluationReport, TrainError> {
    evaluate_policy_with(stories, policy, domain, Execution::default())
}

pub fn evaluate_policy_with(
    stories: &[Story],
    policy: &PolicyParams,
    domain: &DomainSpec,
    mode: Execution,
) -> Result<EvaluationReport, TrainError> {
    let pairs: Vec<(String, String)> = policy_predictions(stories, policy, domain, mode)?
        .into_iter()
        .flat_map(|s| s.pairs)
        .collect();
    Ok(report(domain.actions.clone(), &pairs))
}
