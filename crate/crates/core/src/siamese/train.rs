//! Mini-batch training with hand-written backpropagation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{view, ForwardTrace, ScalarNorm, SiameseError, SiameseModel};
use crate::corpus::{time_gap_cc, time_gap_cu, Issue, IssueSet, LabeledPair};
use crate::embeddings::{encode, EmbeddingTable, EncodedSeq};
use crate::features::{Feature, FeatureSet};
use crate::textprep::concat_fields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-pair loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
    pub pairs: usize,
}

/// One training example. `query` and `candidate` index into the encoding
/// slice handed to the trainer; `scalars` are raw time gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub query: usize,
    pub candidate: usize,
    pub scalars: Vec<f64>,
    pub label: u8,
}

/// Preprocesses and encodes the selected text fields of one issue.
pub fn encode_issue(
    issue: &Issue,
    features: &FeatureSet,
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<EncodedSeq, SiameseError> {
    Ok(encode(&concat_fields(issue, features)?, table, max_len))
}

/// Raw scalar inputs in the order C2, CU.
pub fn scalar_features(query: &Issue, candidate: &Issue, features: &FeatureSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(2);
    if features.contains(Feature::CreatedGap) {
        out.push(time_gap_cc(query, candidate));
    }
    if features.contains(Feature::CreatedUpdatedGap) {
        out.push(time_gap_cu(query, candidate));
    }
    out
}

/// Drops the all-zero tail so the encoder only touches real rows.
fn compact(mut e: EncodedSeq) -> EncodedSeq {
    e.values.truncate(e.true_len * e.dim);
    e
}

/// Trains on labelled pairs drawn from `corpus`. Within a pair the later
/// issue is the query. Returns the trained copy and its loss trace.
pub fn train(
    model: &SiameseModel,
    pairs: &[LabeledPair],
    corpus: &IssueSet,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(SiameseModel, TrainReport), SiameseError> {
    if pairs.is_empty() {
        return Err(SiameseError::NoPairs);
    }
    if table.dim() != model.config.dim {
        return Err(SiameseError::InvalidSpec(format!(
            "embedding dim {} does not match model dim {}",
            table.dim(),
            model.config.dim
        )));
    }
    let features = model.config.features;
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut encodings = Vec::new();
    let mut inputs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let mut idx = [0usize; 2];
        for (k, key) in [&p.a, &p.b].into_iter().enumerate() {
            let pos = corpus
                .position(key)
                .ok_or_else(|| SiameseError::UnknownIssue(key.clone()))?;
            idx[k] = pos;
            if let std::collections::hash_map::Entry::Vacant(e) = slot.entry(pos) {
                let issue = &corpus.issues()[pos];
                let enc = encode_issue(issue, &features, table, model.config.max_len)?;
                e.insert(encodings.len());
                encodings.push(compact(enc));
            }
        }
        // Issues are stored in (created, key) order.
        let (query, candidate) = if idx[0] > idx[1] { (idx[0], idx[1]) } else { (idx[1], idx[0]) };
        let issues = corpus.issues();
        inputs.push(PairInput {
            query: slot[&query],
            candidate: slot[&candidate],
            scalars: scalar_features(&issues[query], &issues[candidate], &features),
            label: p.label,
        });
    }
    let mut trained = model.clone();
    let report = fit_pairs(&mut trained, &encodings, &inputs, cfg)?;
    Ok((trained, report))
}

/// Core loop over pre-encoded inputs. Fits the scalar normalisation on
/// `pairs` before the first epoch.
pub fn fit_pairs(
    model: &mut SiameseModel,
    encodings: &[EncodedSeq],
    pairs: &[PairInput],
    cfg: &TrainConfig,
) -> Result<TrainReport, SiameseError> {
    if pairs.is_empty() {
        return Err(SiameseError::NoPairs);
    }
    if cfg.batch_size == 0 {
        return Err(SiameseError::InvalidSpec("batch size must be positive".into()));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(SiameseError::InvalidSpec(format!(
            "learning rate must be a non-negative number, got {}",
            cfg.learning_rate
        )));
    }
    let n_scalar = model.scalar_count();
    for p in pairs {
        if p.scalars.len() != n_scalar {
            return Err(SiameseError::ScalarMismatch {
                expected: n_scalar,
                got: p.scalars.len(),
            });
        }
    }
    let rows: Vec<Vec<f64>> = pairs.iter().map(|p| p.scalars.clone()).collect();
    model.norm = ScalarNorm::fit(&rows, n_scalar);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut adam = AdamState::new(model);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros(model);
            for &i in batch {
                total += accumulate(model, encodings, &pairs[i], &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            match cfg.optimizer {
                Optimizer::Sgd => grads.apply_sgd(model, cfg.learning_rate),
                Optimizer::Adam => adam.step(model, &grads, cfg.learning_rate),
            }
        }
        let loss = total / pairs.len() as f64;
        log::debug!("epoch {epoch}: loss {loss:.6}");
        if !loss.is_finite() || !model.all_finite() {
            return Err(SiameseError::Diverged {
                epoch,
                learning_rate: cfg.learning_rate,
                loss,
            });
        }
        epoch_losses.push(loss);
    }
    Ok(TrainReport {
        epoch_losses,
        pairs: pairs.len(),
    })
}

/// Gradient buffers laid out like [`SiameseModel::param_groups`].
#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    pub groups: Vec<Vec<f64>>,
}

const CONV_W: usize = 0;
const CONV_B: usize = 1;
const DENSE_W: usize = 2;
const DENSE_B: usize = 3;
const HEAD_W: usize = 4;
const HEAD_B: usize = 5;

impl Gradients {
    pub fn zeros(model: &SiameseModel) -> Self {
        Gradients {
            groups: model
                .param_groups()
                .iter()
                .map(|(_, g)| vec![0.0; g.len()])
                .collect(),
        }
    }

    fn scale(&mut self, k: f64) {
        self.groups.iter_mut().flatten().for_each(|g| *g *= k);
    }

    fn apply_sgd(&self, model: &mut SiameseModel, lr: f64) {
        for ((_, params), grads) in model.param_groups_mut().into_iter().zip(&self.groups) {
            for (w, g) in params.iter_mut().zip(grads) {
                *w -= lr * g;
            }
        }
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(model: &SiameseModel) -> Self {
        let zeros = Gradients::zeros(model).groups;
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut SiameseModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, (_, params)) in model.param_groups_mut().into_iter().enumerate() {
            for (i, w) in params.iter_mut().enumerate() {
                let g = grads.groups[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Mean over the two outputs of the squared error against the one-hot label.
pub(crate) fn pair_loss(probs: [f64; 2], label: u8) -> f64 {
    let t = one_hot(label);
    ((probs[0] - t[0]).powi(2) + (probs[1] - t[1]).powi(2)) / 2.0
}

fn one_hot(label: u8) -> [f64; 2] {
    if label == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

/// Forward plus backward for one pair; adds into `grads`, returns the loss.
pub(crate) fn accumulate(
    model: &SiameseModel,
    encodings: &[EncodedSeq],
    pair: &PairInput,
    grads: &mut Gradients,
) -> Result<f64, SiameseError> {
    let q = view(&encodings[pair.query]);
    let c = view(&encodings[pair.candidate]);
    let trace = model.forward_views(q, c, &pair.scalars)?;
    backward(model, &trace, pair.label, grads, |d_u, d_v, g| {
        let cnn = model.cnn();
        let [cw, cb] = two_groups(&mut g.groups, CONV_W, CONV_B);
        cnn.backward(q, &trace.query, d_u, cw, cb);
        let [cw, cb] = two_groups(&mut g.groups, CONV_W, CONV_B);
        cnn.backward(c, &trace.candidate, d_v, cw, cb);
    });
    Ok(pair_loss(trace.probs, pair.label))
}

fn two_groups(groups: &mut [Vec<f64>], a: usize, b: usize) -> [&mut [f64]; 2] {
    debug_assert!(a < b);
    let (lo, hi) = groups.split_at_mut(b);
    [&mut lo[a][..], &mut hi[0][..]]
}

fn backward(
    model: &SiameseModel,
    trace: &ForwardTrace,
    label: u8,
    grads: &mut Gradients,
    encoder_backward: impl FnOnce(&[f64], &[f64], &mut Gradients),
) {
    let t = one_hot(label);
    let p = trace.probs;
    // d loss / d p_k for the 2-output mean squared error.
    let dp = [p[0] - t[0], p[1] - t[1]];
    let s = p[0] * dp[0] + p[1] * dp[1];
    let dz = [p[0] * (dp[0] - s), p[1] * (dp[1] - s)];

    let h = model.config.hidden;
    let head_in = model.head.inputs;
    let mut d_hidden = vec![0.0; h];
    for (o, &g) in dz.iter().enumerate() {
        grads.groups[HEAD_B][o] += g;
        let gw = &mut grads.groups[HEAD_W][o * head_in..(o + 1) * head_in];
        for (dw, x) in gw.iter_mut().zip(trace.hidden.iter().chain(&trace.scalars)) {
            *dw += g * x;
        }
        let row = &model.head.weight[o * head_in..o * head_in + h];
        for (dh, w) in d_hidden.iter_mut().zip(row) {
            *dh += g * w;
        }
    }

    let act = model.config.activation;
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&trace.pre_activation)
        .map(|(g, &x)| g * act.derivative(x))
        .collect();

    let u = &trace.query.features;
    let v = &trace.candidate.features;
    let f = u.len();
    let sum: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a - b).abs()).collect();
    let sign: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(a, b)| if a > b { 1.0 } else if a < b { -1.0 } else { 0.0 })
        .collect();
    let dense_in = model.dense.inputs;
    let mut d_u = vec![0.0; f];
    let mut d_v = vec![0.0; f];
    for (o, &g) in d_pre.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.groups[DENSE_B][o] += g;
        let gw = &mut grads.groups[DENSE_W][o * dense_in..(o + 1) * dense_in];
        let (gs, gd) = gw.split_at_mut(f);
        for (dw, x) in gs.iter_mut().zip(&sum) {
            *dw += g * x;
        }
        for (dw, x) in gd.iter_mut().zip(&diff) {
            *dw += g * x;
        }
        let row = &model.dense.weight[o * dense_in..(o + 1) * dense_in];
        let (ws, wd) = row.split_at(f);
        for i in 0..f {
            let through_diff = wd[i] * sign[i];
            d_u[i] += g * (ws[i] + through_diff);
            d_v[i] += g * (ws[i] - through_diff);
        }
    }
    encoder_backward(&d_u, &d_v, grads);
}

/// Total loss and gradients averaged over `pairs`, with no update.
pub(crate) fn loss_and_gradients(
    model: &SiameseModel,
    encodings: &[EncodedSeq],
    pairs: &[PairInput],
) -> Result<(f64, Gradients), SiameseError> {
    let mut grads = Gradients::zeros(model);
    let mut total = 0.0;
    for p in pairs {
        total += accumulate(model, encodings, p, &mut grads)?;
    }
    let n = pairs.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Mean loss over `pairs` without gradients.
pub(crate) fn mean_loss(
    model: &SiameseModel,
    encodings: &[EncodedSeq],
    pairs: &[PairInput],
) -> Result<f64, SiameseError> {
    let mut total = 0.0;
    for p in pairs {
        let trace = model.forward_views(
            view(&encodings[p.query]),
            view(&encodings[p.candidate]),
            &p.scalars,
        )?;
        total += pair_loss(trace.probs, p.label);
    }
    Ok(total / pairs.len().max(1) as f64)
}
