//! Dialogue policy: a gated recurrent encoder over the state history,
//! scaled dot-product attention over a memory of earlier turn embeddings,
//! and cosine scoring against learned action embeddings.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::features::{history_rows, memory_windows, state_width, window, HistoryRow, MemoryBank, StateFeatures};
use super::tracker::{DialogueTracker, Event, EventKind};
use crate::corpus::{DomainSpec, Step, Story};
use crate::linalg::{axpy, cosine_grad, cosine_similarity, dot, sigmoid, softmax, Matrix};
use crate::nlu::stream_rng;
use crate::nlu::{margin_loss, Hyperparams, ModelFileError, ParseResult, TrainError};
use crate::text::{EntityMatch, MatchSource};

pub const POLICY_FORMAT_VERSION: u32 = 1;
const POLICY_FORMAT: &str = "aquabot-policy";
const INIT_SCALE: f64 = 0.1;
const INIT_STREAM: u64 = 1 << 41;
const SAMPLING_STREAM: u64 = (1 << 41) + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hyper: Hyperparams,
    /// Turns of history fed to the encoder (K).
    pub history: usize,
    /// Memory bank capacity.
    pub memory_capacity: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hyper: Hyperparams::default(),
            history: 5,
            memory_capacity: 20,
        }
    }
}

/// All trainable tensors of the policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
    /// Attention query and key projections.
    pub m_q: Matrix,
    pub m_k: Matrix,
    /// Dense map from `[dialogue embedding; context]` to the fused state.
    pub w_f: Matrix,
    pub b_f: Vec<f64>,
    /// One row per action.
    pub actions: Matrix,
}

impl Net {
    fn init(input: usize, hidden: usize, actions: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, INIT_STREAM);
        let mut m = |r, c| Matrix::uniform(r, c, INIT_SCALE, &mut rng);
        Net {
            w_z: m(hidden, input),
            u_z: m(hidden, hidden),
            w_r: m(hidden, input),
            u_r: m(hidden, hidden),
            w_h: m(hidden, input),
            u_h: m(hidden, hidden),
            m_q: m(hidden, hidden),
            m_k: m(hidden, hidden),
            w_f: m(hidden, 2 * hidden),
            actions: m(actions, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.w_z.data,
            &self.u_z.data,
            &self.b_z,
            &self.w_r.data,
            &self.u_r.data,
            &self.b_r,
            &self.w_h.data,
            &self.u_h.data,
            &self.b_h,
            &self.m_q.data,
            &self.m_k.data,
            &self.w_f.data,
            &self.b_f,
            &self.actions.data,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.w_z.data,
            &mut self.u_z.data,
            &mut self.b_z,
            &mut self.w_r.data,
            &mut self.u_r.data,
            &mut self.b_r,
            &mut self.w_h.data,
            &mut self.u_h.data,
            &mut self.b_h,
            &mut self.m_q.data,
            &mut self.m_k.data,
            &mut self.w_f.data,
            &mut self.b_f,
            &mut self.actions.data,
        ]
    }

    fn add_scaled(&mut self, alpha: f64, other: &Net) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(alpha, b, a);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

fn affine(w: &Matrix, x: &[f64], u: &Matrix, h: &[f64], b: &[f64]) -> Vec<f64> {
    let mut a = w.matvec(x);
    axpy(1.0, &u.matvec(h), &mut a);
    axpy(1.0, b, &mut a);
    a
}

impl Net {
    fn gru_step(&self, x: &[f64], h: &[f64]) -> GruStep {
        let z: Vec<f64> = affine(&self.w_z, x, &self.u_z, h, &self.b_z)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = affine(&self.w_r, x, &self.u_r, h, &self.b_r)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = affine(&self.w_h, x, &self.u_h, &rh, &self.b_h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        GruStep {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            z,
            r,
            c,
        }
    }

    fn encode_steps(&self, features: &StateFeatures) -> (Vec<f64>, Vec<GruStep>) {
        let mut h = vec![0.0; self.hidden()];
        let mut steps = Vec::with_capacity(features.rows.len());
        for x in &features.rows {
            let s = self.gru_step(x, &h);
            h = s
                .h_prev
                .iter()
                .zip(&s.z)
                .zip(&s.c)
                .map(|((hp, z), c)| (1.0 - z) * hp + z * c)
                .collect();
            steps.push(s);
        }
        (h, steps)
    }
}

/// Result of attending over the memory bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub context: Vec<f64>,
    pub probs: Vec<f64>,
    query_proj: Vec<f64>,
    keys: Vec<Vec<f64>>,
}

impl Net {
    fn attend(&self, query: &[f64], memory: &[Vec<f64>]) -> Attention {
        let d = self.hidden();
        if memory.is_empty() {
            return Attention {
                context: vec![0.0; d],
                probs: Vec::new(),
                query_proj: Vec::new(),
                keys: Vec::new(),
            };
        }
        let scale = 1.0 / (d as f64).sqrt();
        let qp = self.m_q.matvec(query);
        let keys: Vec<Vec<f64>> = memory.iter().map(|m| self.m_k.matvec(m)).collect();
        let scores: Vec<f64> = keys.iter().map(|k| dot(&qp, k) * scale).collect();
        let probs = softmax(&scores, 1.0);
        let mut context = vec![0.0; d];
        for (p, m) in probs.iter().zip(memory) {
            axpy(*p, m, &mut context);
        }
        Attention {
            context,
            probs,
            query_proj: qp,
            keys,
        }
    }

    fn fuse(&self, embedding: &[f64], context: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let input: Vec<f64> = embedding.iter().chain(context).copied().collect();
        let mut fused = self.w_f.matvec(&input);
        axpy(1.0, &self.b_f, &mut fused);
        (input, fused)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub action: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChoice {
    pub action: String,
    /// Softmax confidence of the argmax action, even when it was replaced
    /// by the fallback.
    pub confidence: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPrediction {
    pub scores: Vec<ActionScore>,
    pub attention: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub intents: Vec<String>,
    pub actions: Vec<String>,
    pub slots: Vec<String>,
    pub config: PolicyConfig,
    pub net: Net,
}

impl PolicyParams {
    pub fn init(domain: &DomainSpec, config: PolicyConfig) -> Self {
        let net = Net::init(
            state_width(domain),
            config.hyper.dim,
            domain.actions.len(),
            config.hyper.seed,
        );
        PolicyParams {
            intents: domain.intents.clone(),
            actions: domain.actions.clone(),
            slots: domain.slots.clone(),
            config,
            net,
        }
    }

    pub fn matches_domain(&self, domain: &DomainSpec) -> bool {
        self.intents == domain.intents && self.actions == domain.actions && self.slots == domain.slots
    }

    /// Final hidden state of the recurrent encoder run oldest → newest.
    pub fn encode_dialogue(&self, features: &StateFeatures) -> Vec<f64> {
        self.net.encode_steps(features).0
    }

    pub fn attend_memory(&self, query: &[f64], bank: &MemoryBank) -> Attention {
        let memory: Vec<Vec<f64>> = bank.iter().cloned().collect();
        self.net.attend(query, &memory)
    }

    pub fn score_actions(&self, embedding: &[f64], context: &[f64]) -> Vec<ActionScore> {
        let (_, fused) = self.net.fuse(embedding, context);
        self.actions
            .iter()
            .enumerate()
            .map(|(a, name)| ActionScore {
                action: name.clone(),
                score: cosine_similarity(&fused, self.net.actions.row(a)),
            })
            .collect()
    }

    /// Memory bank for the prediction point at `rows[last]`: encodings of
    /// the earlier user-turn windows.
    pub fn memory_for(&self, rows: &[HistoryRow]) -> MemoryBank {
        let width = self.intents.len() + self.actions.len() + self.slots.len();
        let mut bank = MemoryBank::new(self.config.memory_capacity);
        for w in memory_windows(rows, self.config.history, width, self.config.memory_capacity) {
            bank.push(self.encode_dialogue(&w));
        }
        bank
    }

    /// Scores for the prediction point at `rows[last]`.
    pub fn predict_rows(&self, rows: &[HistoryRow]) -> PolicyPrediction {
        let width = self.intents.len() + self.actions.len() + self.slots.len();
        let features = match rows.len() {
            0 => StateFeatures::zeros(width, self.config.history),
            n => window(rows, n - 1, self.config.history, width),
        };
        let q = self.encode_dialogue(&features);
        let att = self.attend_memory(&q, &self.memory_for(rows));
        PolicyPrediction {
            scores: self.score_actions(&q, &att.context),
            attention: att.probs,
        }
    }

    pub fn predict(&self, events: &[Event], domain: &DomainSpec) -> PolicyPrediction {
        self.predict_rows(&history_rows(events, domain))
    }

    pub fn to_json(&self) -> String {
        let file = PolicyFile {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_FORMAT_VERSION,
            intents: self.intents.clone(),
            actions: self.actions.clone(),
            slots: self.slots.clone(),
            config: self.config.clone(),
            net: self.net.clone(),
        };
        serde_json::to_string(&file).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.format != POLICY_FORMAT || file.version != POLICY_FORMAT_VERSION {
            return Err(ModelFileError::Version {
                format: file.format,
                version: file.version,
            });
        }
        let d = file.config.hyper.dim;
        let n = file.intents.len() + file.actions.len() + file.slots.len();
        let net = &file.net;
        let shapes_ok = [(&net.w_z, d, n), (&net.w_r, d, n), (&net.w_h, d, n)]
            .iter()
            .chain(&[
                (&net.u_z, d, d),
                (&net.u_r, d, d),
                (&net.u_h, d, d),
                (&net.m_q, d, d),
                (&net.m_k, d, d),
            ])
            .chain(&[(&net.w_f, d, 2 * d), (&net.actions, file.actions.len(), d)])
            .all(|(m, r, c)| m.rows == *r && m.cols == *c && m.data.len() == r * c)
            && [&net.b_z, &net.b_r, &net.b_h, &net.b_f].iter().all(|b| b.len() == d);
        if !shapes_ok {
            return Err(ModelFileError::Inconsistent("policy tensor shapes".into()));
        }
        Ok(PolicyParams {
            intents: file.intents,
            actions: file.actions,
            slots: file.slots,
            config: file.config,
            net: file.net,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    intents: Vec<String>,
    actions: Vec<String>,
    slots: Vec<String>,
    config: PolicyConfig,
    net: Net,
}

/// Argmax action (ties broken by label) if its softmax confidence reaches
/// `threshold`, otherwise the domain fallback.
pub fn select_action(scores: &[ActionScore], threshold: f64, temperature: f64, domain: &DomainSpec) -> ActionChoice {
    assert!(!scores.is_empty(), "select_action needs at least one score");
    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let probs = softmax(&raw, temperature);
    let (best, conf) = scores
        .iter()
        .zip(&probs)
        .max_by(|(a, pa), (b, pb)| pa.total_cmp(pb).then_with(|| b.action.cmp(&a.action)))
        .map(|(s, p)| (s.action.as_str(), *p))
        .expect("non-empty");
    if conf >= threshold && domain.has_action(best) {
        ActionChoice {
            action: best.to_string(),
            confidence: conf,
            fallback: false,
        }
    } else {
        ActionChoice {
            action: domain.fallback_action.clone(),
            confidence: conf,
            fallback: true,
        }
    }
}

/// Loss of one training pair with the memory held fixed.
pub fn policy_example_loss(
    params: &PolicyParams,
    features: &StateFeatures,
    memory: &[Vec<f64>],
    positive: usize,
    negatives: &[usize],
) -> f64 {
    let q = params.encode_dialogue(features);
    let att = params.net.attend(&q, memory);
    let (_, fused) = params.net.fuse(&q, &att.context);
    let s = |a: usize| cosine_similarity(&fused, params.net.actions.row(a));
    let negs: Vec<f64> = negatives.iter().map(|&n| s(n)).collect();
    margin_loss(s(positive), &negs, params.config.hyper.margin)
}

/// Margin loss and its gradient with respect to every network tensor.
/// Memory entries are treated as constants.
pub fn policy_example_gradients(
    params: &PolicyParams,
    features: &StateFeatures,
    memory: &[Vec<f64>],
    positive: usize,
    negatives: &[usize],
) -> (f64, Net) {
    let net = &params.net;
    let d = net.hidden();
    let margin = params.config.hyper.margin;
    let mut grads = net.zeros_like();

    let (q, steps) = net.encode_steps(features);
    let att = net.attend(&q, memory);
    let (input, fused) = net.fuse(&q, &att.context);

    let pos_emb = net.actions.row(positive);
    let s_pos = cosine_similarity(&fused, pos_emb);
    let (gf_pos, ga_pos) = cosine_grad(&fused, pos_emb);
    let mut loss = 0.0;
    let mut active = 0usize;
    let mut g_fused = vec![0.0; d];
    for &n in negatives {
        let neg_emb = net.actions.row(n);
        let hinge = margin - s_pos + cosine_similarity(&fused, neg_emb);
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        active += 1;
        let (gf_neg, ga_neg) = cosine_grad(&fused, neg_emb);
        axpy(1.0, &gf_neg, &mut g_fused);
        axpy(-1.0, &gf_pos, &mut g_fused);
        axpy(1.0, &ga_neg, grads.actions.row_mut(n));
    }
    if active == 0 {
        return (0.0, grads);
    }
    axpy(-(active as f64), &ga_pos, grads.actions.row_mut(positive));

    grads.w_f.add_outer(1.0, &g_fused, &input);
    axpy(1.0, &g_fused, &mut grads.b_f);
    let g_in = net.w_f.matvec_t(&g_fused);
    let mut g_h = g_in[..d].to_vec();
    let g_ctx = &g_in[d..];

    if !memory.is_empty() {
        let scale = 1.0 / (d as f64).sqrt();
        let g_p: Vec<f64> = memory.iter().map(|m| dot(g_ctx, m)).collect();
        let mean = dot(&att.probs, &g_p);
        let mut g_qp = vec![0.0; d];
        for (i, m) in memory.iter().enumerate() {
            let g_s = att.probs[i] * (g_p[i] - mean);
            axpy(g_s * scale, &att.keys[i], &mut g_qp);
            let g_k: Vec<f64> = att.query_proj.iter().map(|v| g_s * scale * v).collect();
            grads.m_k.add_outer(1.0, &g_k, m);
        }
        grads.m_q.add_outer(1.0, &g_qp, &q);
        axpy(1.0, &net.m_q.matvec_t(&g_qp), &mut g_h);
    }

    for s in steps.iter().rev() {
        let mut g_prev: Vec<f64> = g_h.iter().zip(&s.z).map(|(g, z)| g * (1.0 - z)).collect();
        let g_z: Vec<f64> = (0..d).map(|j| g_h[j] * (s.c[j] - s.h_prev[j])).collect();
        let g_ac: Vec<f64> = (0..d).map(|j| g_h[j] * s.z[j] * (1.0 - s.c[j] * s.c[j])).collect();
        let rh: Vec<f64> = s.r.iter().zip(&s.h_prev).map(|(r, h)| r * h).collect();

        grads.w_h.add_outer(1.0, &g_ac, &s.x);
        grads.u_h.add_outer(1.0, &g_ac, &rh);
        axpy(1.0, &g_ac, &mut grads.b_h);
        let g_rh = net.u_h.matvec_t(&g_ac);
        let g_r: Vec<f64> = g_rh.iter().zip(&s.h_prev).map(|(g, h)| g * h).collect();
        for j in 0..d {
            g_prev[j] += g_rh[j] * s.r[j];
        }

        let g_az: Vec<f64> = (0..d).map(|j| g_z[j] * s.z[j] * (1.0 - s.z[j])).collect();
        grads.w_z.add_outer(1.0, &g_az, &s.x);
        grads.u_z.add_outer(1.0, &g_az, &s.h_prev);
        axpy(1.0, &g_az, &mut grads.b_z);
        axpy(1.0, &net.u_z.matvec_t(&g_az), &mut g_prev);

        let g_ar: Vec<f64> = (0..d).map(|j| g_r[j] * s.r[j] * (1.0 - s.r[j])).collect();
        grads.w_r.add_outer(1.0, &g_ar, &s.x);
        grads.u_r.add_outer(1.0, &g_ar, &s.h_prev);
        axpy(1.0, &g_ar, &mut grads.b_r);
        axpy(1.0, &net.u_r.matvec_t(&g_ar), &mut g_prev);

        g_h = g_prev;
    }
    (loss, grads)
}

/// A story replayed as tracker events, with the action expected after
/// every prediction point.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledStory {
    pub name: String,
    pub events: Vec<Event>,
    pub rows: Vec<HistoryRow>,
    /// Target action index for each row; `None` for a trailing user turn.
    pub targets: Vec<Option<usize>>,
}

impl UnrolledStory {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.targets.iter().enumerate().filter_map(|(i, t)| t.map(|t| (i, t)))
    }
}

/// Replay a story, inserting the listen action at every turn boundary.
pub fn unroll_story(story: &Story, domain: &DomainSpec) -> Result<UnrolledStory, TrainError> {
    let listen = domain
        .action_index(&domain.listen_action)
        .ok_or_else(|| TrainError::UnknownLabel(domain.listen_action.clone()))?;
    let mut tracker = DialogueTracker::new(story.name.clone());
    let mut targets = Vec::new();
    // Index into `targets` of the row still waiting for its next action.
    let mut open: Option<usize> = None;

    for (i, step) in story.steps.iter().enumerate() {
        let ts = i as i64;
        match step {
            Step::UserTurn { intent, entities } => {
                if let Some(o) = open.take() {
                    targets[o] = Some(listen);
                    tracker.apply_raw(Event::new(ts, EventKind::Listen)).expect("monotonic");
                }
                let matches = entities
                    .iter()
                    .map(|(k, v)| EntityMatch {
                        entity_type: k.clone(),
                        value: v.clone(),
                        start: 0,
                        end: 0,
                        source: MatchSource::Annotation,
                    })
                    .collect();
                let parse = ParseResult::with_intent(String::new(), intent.clone(), matches);
                tracker.apply_event(Event::user(ts, parse), domain).expect("monotonic");
                targets.push(None);
                open = Some(targets.len() - 1);
            }
            Step::BotAction { action } => {
                let a = domain
                    .action_index(action)
                    .ok_or_else(|| TrainError::UnknownLabel(action.clone()))?;
                if let Some(o) = open.take() {
                    targets[o] = Some(a);
                }
                if a == listen {
                    tracker.apply_raw(Event::new(ts, EventKind::Listen)).expect("monotonic");
                } else {
                    tracker.apply_raw(Event::bot(ts, action)).expect("monotonic");
                    targets.push(None);
                    open = Some(targets.len() - 1);
                }
            }
        }
    }
    // A trailing bot action still ends its turn with a listen; a trailing
    // user turn has nothing to predict.
    if let Some(o) = open {
        if !story.steps.last().is_some_and(Step::is_user) {
            targets[o] = Some(listen);
            let ts = story.steps.len() as i64;
            tracker.apply_raw(Event::new(ts, EventKind::Listen)).expect("monotonic");
        }
    }
    let events = tracker.events().to_vec();
    let rows = history_rows(&events, domain);
    debug_assert_eq!(rows.len(), targets.len());
    Ok(UnrolledStory {
        name: story.name.clone(),
        events,
        rows,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTraining {
    pub params: PolicyParams,
    pub epoch_losses: Vec<f64>,
    /// Argmax accuracy over all unrolled training pairs.
    pub accuracy: f64,
    pub pairs: usize,
}

struct Pair {
    features: StateFeatures,
    /// Indices into the memory-source list.
    memory: Vec<usize>,
    target: usize,
}

/// Jointly train encoder, attention, fusion and action embeddings with the
/// margin ranking loss. Memory embeddings are recomputed with the current
/// parameters at the start of every epoch.
pub fn train_policy(
    stories: &[Story],
    domain: &DomainSpec,
    config: &PolicyConfig,
) -> Result<PolicyTraining, TrainError> {
    config.hyper.validate()?;
    if config.history < 1 {
        return Err(TrainError::InvalidHyperparams("history must be at least 1".into()));
    }
    if stories.is_empty() {
        return Err(TrainError::EmptyStories);
    }
    let width = state_width(domain);
    let k = config.history;

    let mut sources: Vec<StateFeatures> = Vec::new();
    let mut pairs: Vec<Pair> = Vec::new();
    let mut unrolled = Vec::with_capacity(stories.len());
    for story in stories {
        let u = unroll_story(story, domain)?;
        let mut user_sources: Vec<usize> = Vec::new();
        for (i, row) in u.rows.iter().enumerate() {
            if let Some(target) = u.targets[i] {
                let skip = user_sources.len().saturating_sub(config.memory_capacity);
                pairs.push(Pair {
                    features: window(&u.rows, i, k, width),
                    memory: user_sources[skip..].to_vec(),
                    target,
                });
            }
            if row.user_turn {
                sources.push(window(&u.rows, i, k, width));
                user_sources.push(sources.len() - 1);
            }
        }
        unrolled.push(u);
    }
    if pairs.is_empty() {
        return Err(TrainError::EmptyStories);
    }

    let mut params = PolicyParams::init(domain, config.clone());
    let n_actions = domain.actions.len();
    let mut epoch_losses = Vec::with_capacity(config.hyper.epochs);
    if n_actions > 1 {
        let negatives = config.hyper.negatives.min(n_actions - 1);
        let mut rng = stream_rng(config.hyper.seed, SAMPLING_STREAM);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        for _ in 0..config.hyper.epochs {
            let encoded: Vec<Vec<f64>> = sources.iter().map(|s| params.encode_dialogue(s)).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &p in &order {
                let pair = &pairs[p];
                let memory: Vec<Vec<f64>> = pair.memory.iter().map(|&m| encoded[m].clone()).collect();
                let negs: Vec<usize> = index::sample(&mut rng, n_actions - 1, negatives)
                    .into_iter()
                    .map(|i| if i >= pair.target { i + 1 } else { i })
                    .collect();
                let (loss, grads) = policy_example_gradients(&params, &pair.features, &memory, pair.target, &negs);
                total += loss;
                if loss > 0.0 {
                    params.net.add_scaled(-config.hyper.learning_rate, &grads);
                }
            }
            epoch_losses.push(total);
        }
    }
    if !params.net.is_finite() {
        return Err(TrainError::InvalidHyperparams("training diverged".into()));
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    for u in &unrolled {
        for (i, target) in u.pairs() {
            let pred = params.predict_rows(&u.rows[..=i]);
            total += 1;
            if argmax(&pred.scores) == Some(target) {
                correct += 1;
            }
        }
    }
    Ok(PolicyTraining {
        params,
        epoch_losses,
        accuracy: correct as f64 / total as f64,
        pairs: total,
    })
}

/// Index of the best score, ties to the lexicographically smaller action.
pub fn argmax(scores: &[ActionScore]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.score.total_cmp(&b.score).then_with(|| b.action.cmp(&a.action)))
        .map(|(i, _)| i)
}

/// Histogram of targets, handy for reporting class balance.
pub fn target_counts(unrolled: &[UnrolledStory], domain: &DomainSpec) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for u in unrolled {
        for (_, t) in u.pairs() {
            *out.entry(domain.actions[t].clone()).or_insert(0) += 1;
        }
    }
    out
}
