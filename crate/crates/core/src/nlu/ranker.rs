use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IntentScore;
use crate::linalg::{cosine_grad, cosine_similarity, softmax, Matrix};
use crate::text::FeatureVector;

pub const RANKER_FORMAT_VERSION: u32 = 1;
const RANKER_FORMAT: &str = "aquabot-ranker";
const INIT_SCALE: f64 = 0.1;

// ChaCha stream ids. Input rows use their row index as the stream.
const LABEL_STREAM: u64 = 1 << 40;
const SAMPLING_STREAM: u64 = (1 << 40) + 1;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training and inference settings shared by the intent ranker and the
/// dialogue policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Embedding dimension.
    pub dim: usize,
    pub margin: f64,
    /// Wrong labels sampled per positive.
    pub negatives: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Softmax temperature for confidences.
    pub temperature: f64,
    /// Below this top confidence the system falls back.
    pub confidence_threshold: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 32,
            margin: 0.8,
            negatives: 4,
            learning_rate: 0.05,
            epochs: 300,
            seed: 42,
            temperature: 0.15,
            confidence_threshold: 0.4,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidHyperparams(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        let positive = |x: f64| x > 0.0; // false for NaN
        if !positive(self.margin) {
            return bad("margin must be positive");
        }
        if self.negatives < 1 {
            return bad("negatives must be at least 1");
        }
        if !positive(self.learning_rate) || !positive(self.temperature) {
            return bad("learning_rate and temperature must be positive");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad("confidence_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("no stories to train the policy on")]
    EmptyStories,
    #[error("label '{0}' is not in the label set")]
    UnknownLabel(String),
    #[error("feature vector has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("malformed model file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported model format '{format}' version {version}")]
    Version { format: String, version: u32 },
    #[error("model feature dimension {found} does not match configured {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("model parameters are inconsistent: {0}")]
    Inconsistent(String),
}

/// Input-feature embedding table plus one embedding per label.
///
/// The input table is `feature_dim × dim` but only rows touched by training
/// are stored. Every other row equals its seeded uniform initialisation and
/// is regenerated on demand from `(seed, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub feature_dim: usize,
    pub labels: Vec<String>,
    pub hyper: Hyperparams,
    input_rows: BTreeMap<u32, Vec<f64>>,
    label_embeddings: Matrix,
}

impl RankerParams {
    /// Fresh parameters drawn from uniform(−0.1, 0.1).
    pub fn init(feature_dim: usize, labels: Vec<String>, hyper: Hyperparams) -> Self {
        let mut rng = stream_rng(hyper.seed, LABEL_STREAM);
        let label_embeddings = Matrix::uniform(labels.len(), hyper.dim, INIT_SCALE, &mut rng);
        RankerParams {
            feature_dim,
            labels,
            hyper,
            input_rows: BTreeMap::new(),
            label_embeddings,
        }
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim
    }

    fn initial_row(&self, row: u32) -> Vec<f64> {
        let mut rng = stream_rng(self.hyper.seed, u64::from(row));
        (0..self.hyper.dim)
            .map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE))
            .collect()
    }

    pub fn input_row(&self, row: u32) -> Cow<'_, [f64]> {
        match self.input_rows.get(&row) {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.initial_row(row)),
        }
    }

    pub fn input_row_mut(&mut self, row: u32) -> &mut Vec<f64> {
        if !self.input_rows.contains_key(&row) {
            let init = self.initial_row(row);
            self.input_rows.insert(row, init);
        }
        self.input_rows.get_mut(&row).expect("just inserted")
    }

    pub fn label_embedding(&self, label: usize) -> &[f64] {
        self.label_embeddings.row(label)
    }

    pub fn label_embedding_mut(&mut self, label: usize) -> &mut [f64] {
        self.label_embeddings.row_mut(label)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `W_inᵀ x`.
    pub fn embed(&self, x: &FeatureVector) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        for (i, v) in x.iter() {
            let row = self.input_row(i as u32);
            for (ej, rj) in e.iter_mut().zip(row.iter()) {
                *ej += v * rj;
            }
        }
        e
    }

    pub fn similarities(&self, x: &FeatureVector) -> Vec<f64> {
        let e = self.embed(x);
        (0..self.labels.len())
            .map(|c| cosine_similarity(&e, self.label_embedding(c)))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.label_embeddings.is_finite() && self.input_rows.values().flatten().all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        let file = RankerFile {
            format: RANKER_FORMAT.to_string(),
            version: RANKER_FORMAT_VERSION,
            feature_dim: self.feature_dim,
            labels: self.labels.clone(),
            hyper: self.hyper.clone(),
            input_rows: self.input_rows.iter().map(|(k, v)| (*k, v.clone())).collect(),
            label_embeddings: self.label_embeddings.clone(),
        };
        serde_json::to_string(&file).expect("ranker serializes")
    }

    /// Load a model file. With `expected_dim`, a different feature dimension
    /// is rejected.
    pub fn from_json(text: &str, expected_dim: Option<usize>) -> Result<Self, ModelFileError> {
        let file: RankerFile = serde_json::from_str(text)?;
        if file.format != RANKER_FORMAT || file.version != RANKER_FORMAT_VERSION {
            return Err(ModelFileError::Version {
                format: file.format,
                version: file.version,
            });
        }
        if let Some(expected) = expected_dim {
            if expected != file.feature_dim {
                return Err(ModelFileError::Dimension {
                    expected,
                    found: file.feature_dim,
                });
            }
        }
        let d = file.hyper.dim;
        if file.label_embeddings.rows != file.labels.len()
            || file.label_embeddings.cols != d
            || file.label_embeddings.data.len() != d * file.labels.len()
        {
            return Err(ModelFileError::Inconsistent("label matrix shape".into()));
        }
        if file
            .input_rows
            .iter()
            .any(|(i, r)| r.len() != d || *i as usize >= file.feature_dim)
        {
            return Err(ModelFileError::Inconsistent("input row shape".into()));
        }
        Ok(RankerParams {
            feature_dim: file.feature_dim,
            labels: file.labels,
            hyper: file.hyper,
            input_rows: file.input_rows.into_iter().collect(),
            label_embeddings: file.label_embeddings,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RankerFile {
    format: String,
    version: u32,
    feature_dim: usize,
    labels: Vec<String>,
    hyper: Hyperparams,
    input_rows: Vec<(u32, Vec<f64>)>,
    label_embeddings: Matrix,
}

/// `Σ_j max(0, margin − s_pos + s_neg_j)`.
pub fn margin_loss(s_pos: f64, s_negs: &[f64], margin: f64) -> f64 {
    s_negs.iter().map(|s| (margin - s_pos + s).max(0.0)).sum()
}

/// Gradient of the margin loss of one example with respect to every
/// parameter it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerGradients {
    pub loss: f64,
    pub input_rows: BTreeMap<u32, Vec<f64>>,
    pub label_rows: BTreeMap<usize, Vec<f64>>,
}

pub fn example_loss(params: &RankerParams, x: &FeatureVector, positive: usize, negatives: &[usize]) -> f64 {
    let sims = params.similarities(x);
    let negs: Vec<f64> = negatives.iter().map(|&n| sims[n]).collect();
    margin_loss(sims[positive], &negs, params.hyper.margin)
}

pub fn example_gradients(
    params: &RankerParams,
    x: &FeatureVector,
    positive: usize,
    negatives: &[usize],
) -> RankerGradients {
    let d = params.dim();
    let margin = params.hyper.margin;
    let e = params.embed(x);
    let pos_emb = params.label_embedding(positive);
    let s_pos = cosine_similarity(&e, pos_emb);
    let (ge_pos, gl_pos) = cosine_grad(&e, pos_emb);

    let mut loss = 0.0;
    let mut g_e = vec![0.0; d];
    let mut label_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut active = 0usize;
    for &n in negatives {
        let neg_emb = params.label_embedding(n);
        let s_neg = cosine_similarity(&e, neg_emb);
        let hinge = margin - s_pos + s_neg;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        active += 1;
        let (ge_neg, gl_neg) = cosine_grad(&e, neg_emb);
        for j in 0..d {
            g_e[j] += ge_neg[j] - ge_pos[j];
        }
        let row = label_rows.entry(n).or_insert_with(|| vec![0.0; d]);
        for j in 0..d {
            row[j] += gl_neg[j];
        }
    }
    if active > 0 {
        let row = label_rows.entry(positive).or_insert_with(|| vec![0.0; d]);
        for j in 0..d {
            row[j] -= active as f64 * gl_pos[j];
        }
    }
    let mut input_rows = BTreeMap::new();
    if active > 0 {
        for (i, v) in x.iter() {
            input_rows.insert(i as u32, g_e.iter().map(|g| g * v).collect());
        }
    }
    RankerGradients {
        loss,
        input_rows,
        label_rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerTraining {
    pub params: RankerParams,
    /// Summed margin loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Argmax accuracy on the training pairs after the final epoch.
    pub accuracy: f64,
}

/// Stochastic gradient descent on the margin ranking loss.
///
/// Each epoch visits the pairs in a seeded shuffle of corpus order; each
/// visit samples `min(negatives, C − 1)` wrong labels without replacement.
/// The result depends only on `pairs`, `labels` and `hyper`.
pub fn train_ranker(
    pairs: &[(FeatureVector, String)],
    labels: &[String],
    hyper: &Hyperparams,
) -> Result<RankerTraining, TrainError> {
    hyper.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let feature_dim = pairs[0].0.dim;
    let mut indexed = Vec::with_capacity(pairs.len());
    for (x, label) in pairs {
        if x.dim != feature_dim {
            return Err(TrainError::DimensionMismatch {
                expected: feature_dim,
                found: x.dim,
            });
        }
        let idx = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| TrainError::UnknownLabel(label.clone()))?;
        indexed.push((x, idx));
    }

    let mut params = RankerParams::init(feature_dim, labels.to_vec(), hyper.clone());
    let classes = labels.len();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    if classes > 1 {
        let k = hyper.negatives.min(classes - 1);
        let mut rng = stream_rng(hyper.seed, SAMPLING_STREAM);
        let mut order: Vec<usize> = (0..indexed.len()).collect();
        for _ in 0..hyper.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &p in &order {
                let (x, pos) = indexed[p];
                let negatives: Vec<usize> = index::sample(&mut rng, classes - 1, k)
                    .into_iter()
                    .map(|i| if i >= pos { i + 1 } else { i })
                    .collect();
                let grads = example_gradients(&params, x, pos, &negatives);
                total += grads.loss;
                apply(&mut params, &grads, hyper.learning_rate);
            }
            epoch_losses.push(total);
        }
    }

    let correct = indexed
        .iter()
        .filter(|(x, pos)| {
            predict_intent(&params, x)
                .first()
                .is_some_and(|top| top.intent == labels[*pos])
        })
        .count();
    Ok(RankerTraining {
        accuracy: correct as f64 / indexed.len() as f64,
        params,
        epoch_losses,
    })
}

fn apply(params: &mut RankerParams, grads: &RankerGradients, lr: f64) {
    for (row, g) in &grads.input_rows {
        for (w, gj) in params.input_row_mut(*row).iter_mut().zip(g) {
            *w -= lr * gj;
        }
    }
    for (label, g) in &grads.label_rows {
        for (w, gj) in params.label_embedding_mut(*label).iter_mut().zip(g) {
            *w -= lr * gj;
        }
    }
}

/// Softmax-with-temperature over cosine similarities, sorted by descending
/// confidence with ties broken by label.
pub fn predict_intent(params: &RankerParams, x: &FeatureVector) -> Vec<IntentScore> {
    let sims = params.similarities(x);
    let probs = softmax(&sims, params.hyper.temperature);
    let mut ranking: Vec<IntentScore> = params
        .labels
        .iter()
        .zip(probs)
        .map(|(l, p)| IntentScore {
            intent: l.clone(),
            confidence: p,
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.intent.cmp(&b.intent))
    });
    ranking
}
