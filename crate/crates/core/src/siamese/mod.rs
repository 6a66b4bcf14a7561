//! Siamese matcher: one shared encoder over both issues, a dense layer over
//! the merged features, and a two-way softmax whose second output is the
//! link probability.
//!
//! ```text
//! u = enc(query), v = enc(candidate)
//! h = act(W_s u + W_s v + W_d |u - v| + b)      // merge [u; v; |u - v|]
//! p = softmax(W_o [h; scalars] + b_o)
//! ```
//!
//! The `u` and `v` blocks of the dense layer share `W_s`, which keeps the
//! score symmetric in its two text inputs. Scalars are the z-scored time
//! gaps selected by the feature set (C2 then CU).

mod checkpoint;
mod conv;
mod gradcheck;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    from_json, load_checkpoint, save_checkpoint, to_json, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use conv::{conv1d, CnnEncoder, ConvSpec, Pooled, SeqView};
pub use gradcheck::{analytic_gradients, gradient_check, GradCheckReport};
pub use train::{
    encode_issue, fit_pairs, scalar_features, train, Optimizer, PairInput, TrainConfig, TrainReport,
};

use crate::embeddings::EncodedSeq;
use crate::features::FeatureSet;

#[derive(Debug, Error)]
pub enum SiameseError {
    #[error("input shorter than kernel (length {len}, kernel {kernel})")]
    InputShorterThanKernel { len: usize, kernel: usize },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("unsupported encoder kind {kind:?}; available: {available}")]
    UnsupportedEncoder { kind: String, available: String },
    #[error("model expects {expected} scalar feature(s), got {got}")]
    ScalarMismatch { expected: usize, got: usize },
    #[error("input has embedding dim {got} x length {len}, model expects {expected_dim} x {expected_len}")]
    InputShape {
        got: usize,
        len: usize,
        expected_dim: usize,
        expected_len: usize,
    },
    #[error("no training pairs")]
    NoPairs,
    #[error("pair references unknown issue {0:?}")]
    UnknownIssue(String),
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss is {loss}")]
    Diverged {
        epoch: usize,
        learning_rate: f64,
        loss: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Gru,
    Lstm,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Cnn => "cnn",
            EncoderKind::Gru => "gru",
            EncoderKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = SiameseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(EncoderKind::Cnn),
            "gru" => Ok(EncoderKind::Gru),
            "lstm" => Ok(EncoderKind::Lstm),
            _ => Err(SiameseError::UnsupportedEncoder {
                kind: s.to_string(),
                available: SUPPORTED_ENCODERS.join(", "),
            }),
        }
    }
}

/// Encoder kinds this build can construct.
pub const SUPPORTED_ENCODERS: &[&str] = &["cnn"];

/// Shared sequence encoder: `EncodedSeq` to a fixed-length feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoder {
    Cnn(CnnEncoder),
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Cnn(_) => EncoderKind::Cnn,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Cnn(c) => c.output_dim(),
        }
    }

    pub fn encode(&self, x: &EncodedSeq) -> Result<Vec<f64>, SiameseError> {
        match self {
            Encoder::Cnn(c) => Ok(c.forward(view(x))?.features),
        }
    }
}

/// Builds an encoder with Glorot-initialised weights.
pub fn make_encoder(
    kind: EncoderKind,
    spec: ConvSpec,
    dim: usize,
    seed: u64,
) -> Result<Encoder, SiameseError> {
    spec.validate()?;
    match kind {
        EncoderKind::Cnn => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Encoder::Cnn(CnnEncoder::glorot(spec, dim, &mut rng)))
        }
        EncoderKind::Gru | EncoderKind::Lstm => Err(SiameseError::UnsupportedEncoder {
            kind: kind.name().to_string(),
            available: SUPPORTED_ENCODERS.join(", "),
        }),
    }
}

pub(crate) fn view(x: &EncodedSeq) -> SeqView<'_> {
    SeqView {
        values: &x.values,
        max_len: x.max_len(),
        dim: x.dim,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
    Sigmoid,
}

const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl FromStr for Activation {
    type Err = SiameseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(SiameseError::InvalidSpec(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub conv: ConvSpec,
    pub hidden: usize,
    pub activation: Activation,
    pub dim: usize,
    pub max_len: usize,
    pub features: FeatureSet,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Cnn,
            conv: ConvSpec::default(),
            hidden: 256,
            activation: Activation::Relu,
            dim: crate::embeddings::DEFAULT_DIM,
            max_len: crate::embeddings::DEFAULT_MAX_LEN,
            features: FeatureSet::TDS,
            init_seed: 0,
        }
    }
}

/// Fully connected layer, `weight` is `(out x in)` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot<R: rand::Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        for w in &mut d.weight {
            *w = rng.gen_range(-limit..limit);
        }
        d
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.inputs..(o + 1) * self.inputs]
    }

    /// `W[:, range] x` without the bias.
    fn partial(&self, range: std::ops::Range<usize>, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| dot(&self.row(o)[range.clone()], x))
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Z-score statistics of the scalar features, fitted on training pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalarNorm {
    pub fn identity(n: usize) -> Self {
        ScalarNorm {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn fit(rows: &[Vec<f64>], n: usize) -> Self {
        if rows.is_empty() {
            return Self::identity(n);
        }
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / count;
            }
        }
        let mut var = vec![0.0; n];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / count;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        ScalarNorm { mean, std }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    /// Inputs: `[u; v; |u - v|]` laid out as the shared block (filters
    /// columns) followed by the difference block.
    pub dense: Dense,
    pub head: Dense,
    pub norm: ScalarNorm,
}

/// Everything `forward` computes, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub query: Pooled,
    pub candidate: Pooled,
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub scalars: Vec<f64>,
    pub probs: [f64; 2],
}

impl ForwardTrace {
    pub fn score(&self) -> f64 {
        self.probs[1]
    }
}

/// Per-issue precomputation for ranking many pairs with a frozen model.
#[derive(Debug, Clone)]
pub struct IssueEmbedding {
    pub features: Vec<f64>,
    shared: Vec<f64>,
}

impl SiameseModel {
    pub fn new(config: ModelConfig) -> Result<Self, SiameseError> {
        if config.hidden == 0 || config.dim == 0 {
            return Err(SiameseError::InvalidSpec("hidden units and dim must be positive".into()));
        }
        config.conv.window_count(config.max_len)?;
        let encoder = make_encoder(config.encoder, config.conv, config.dim, config.init_seed)?;
        let f = encoder.output_dim();
        let n_scalar = config.features.scalar_count();
        // Separate stream from the encoder's so the two stay independent.
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed ^ 0x9e37_79b9_7f4a_7c15);
        let dense = Dense::glorot(2 * f, config.hidden, &mut rng);
        let head = Dense::glorot(config.hidden + n_scalar, 2, &mut rng);
        Ok(SiameseModel {
            config,
            encoder,
            dense,
            head,
            norm: ScalarNorm::identity(n_scalar),
        })
    }

    /// Same shapes with every weight and bias zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self, SiameseError> {
        let mut m = Self::new(config)?;
        for group in m.param_groups_mut() {
            group.1.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(m)
    }

    pub fn scalar_count(&self) -> usize {
        self.config.features.scalar_count()
    }

    fn cnn(&self) -> &CnnEncoder {
        match &self.encoder {
            Encoder::Cnn(c) => c,
        }
    }

    fn check_input(&self, x: &EncodedSeq) -> Result<(), SiameseError> {
        if x.dim != self.config.dim || x.max_len() != self.config.max_len {
            return Err(SiameseError::InputShape {
                got: x.dim,
                len: x.max_len(),
                expected_dim: self.config.dim,
                expected_len: self.config.max_len,
            });
        }
        Ok(())
    }

    fn check_scalars(&self, scalars: Option<&[f64]>) -> Result<(), SiameseError> {
        let got = scalars.map_or(0, <[f64]>::len);
        if got != self.scalar_count() {
            return Err(SiameseError::ScalarMismatch {
                expected: self.scalar_count(),
                got,
            });
        }
        Ok(())
    }

    /// Link probability of `(query, candidate)`. `scalars` are the raw
    /// (unnormalised) time gaps in the order C2, CU.
    pub fn forward(
        &self,
        query: &EncodedSeq,
        candidate: &EncodedSeq,
        scalars: Option<&[f64]>,
    ) -> Result<f64, SiameseError> {
        self.check_input(query)?;
        self.check_input(candidate)?;
        self.check_scalars(scalars)?;
        Ok(self
            .forward_views(view(query), view(candidate), scalars.unwrap_or(&[]))?
            .score())
    }

    /// Both class probabilities.
    pub fn predict_proba(
        &self,
        query: &EncodedSeq,
        candidate: &EncodedSeq,
        scalars: Option<&[f64]>,
    ) -> Result<[f64; 2], SiameseError> {
        self.check_input(query)?;
        self.check_input(candidate)?;
        self.check_scalars(scalars)?;
        Ok(self
            .forward_views(view(query), view(candidate), scalars.unwrap_or(&[]))?
            .probs)
    }

    pub(crate) fn forward_views(
        &self,
        query: SeqView<'_>,
        candidate: SeqView<'_>,
        raw_scalars: &[f64],
    ) -> Result<ForwardTrace, SiameseError> {
        let cnn = self.cnn();
        let q = cnn.forward(query)?;
        let c = cnn.forward(candidate)?;
        let f = cnn.output_dim();
        let diff: Vec<f64> = q.features.iter().zip(&c.features).map(|(a, b)| (a - b).abs()).collect();
        let pre: Vec<f64> = (0..self.dense.outputs)
            .map(|o| {
                let row = self.dense.row(o);
                let shared = &row[..f];
                dot(shared, &q.features) + dot(shared, &c.features) + dot(&row[f..], &diff)
                    + self.dense.bias[o]
            })
            .collect();
        let scalars = self.norm.apply(raw_scalars);
        let trace = self.finish(pre, scalars);
        Ok(ForwardTrace {
            query: q,
            candidate: c,
            ..trace
        })
    }

    fn finish(&self, pre: Vec<f64>, scalars: Vec<f64>) -> ForwardTrace {
        let act = self.config.activation;
        let hidden: Vec<f64> = pre.iter().map(|&x| act.apply(x)).collect();
        let h = self.config.hidden;
        let logits: [f64; 2] = std::array::from_fn(|o| {
            let row = self.head.row(o);
            dot(&row[..h], &hidden) + dot(&row[h..], &scalars) + self.head.bias[o]
        });
        ForwardTrace {
            query: Pooled {
                features: Vec::new(),
                argmax: Vec::new(),
            },
            candidate: Pooled {
                features: Vec::new(),
                argmax: Vec::new(),
            },
            pre_activation: pre,
            hidden,
            scalars,
            probs: softmax2(logits),
        }
    }

    /// Precomputes what a frozen model needs from one issue.
    pub fn embed_issue(&self, x: &EncodedSeq) -> Result<IssueEmbedding, SiameseError> {
        self.check_input(x)?;
        self.embed_view(view(x))
    }

    pub(crate) fn embed_view(&self, x: SeqView<'_>) -> Result<IssueEmbedding, SiameseError> {
        let features = self.cnn().forward(x)?.features;
        let f = features.len();
        let shared = self.dense.partial(0..f, &features);
        Ok(IssueEmbedding { features, shared })
    }

    /// Score from two precomputed embeddings; equal to [`Self::forward`] up
    /// to floating-point summation order.
    pub fn score_embedded(
        &self,
        query: &IssueEmbedding,
        candidate: &IssueEmbedding,
        scalars: Option<&[f64]>,
    ) -> Result<f64, SiameseError> {
        self.check_scalars(scalars)?;
        let f = query.features.len();
        let diff: Vec<f64> = query
            .features
            .iter()
            .zip(&candidate.features)
            .map(|(a, b)| (a - b).abs())
            .collect();
        let pre: Vec<f64> = (0..self.dense.outputs)
            .map(|o| {
                query.shared[o]
                    + candidate.shared[o]
                    + dot(&self.dense.row(o)[f..], &diff)
                    + self.dense.bias[o]
            })
            .collect();
        let scalars = self.norm.apply(scalars.unwrap_or(&[]));
        Ok(self.finish(pre, scalars).score())
    }

    /// Named views of every trainable tensor.
    pub fn param_groups(&self) -> Vec<(&'static str, &[f64])> {
        let cnn = self.cnn();
        vec![
            ("conv.weight", &cnn.weight[..]),
            ("conv.bias", &cnn.bias[..]),
            ("dense.weight", &self.dense.weight[..]),
            ("dense.bias", &self.dense.bias[..]),
            ("head.weight", &self.head.weight[..]),
            ("head.bias", &self.head.bias[..]),
        ]
    }

    pub fn param_groups_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        let Encoder::Cnn(cnn) = &mut self.encoder;
        vec![
            ("conv.weight", &mut cnn.weight),
            ("conv.bias", &mut cnn.bias),
            ("dense.weight", &mut self.dense.weight),
            ("dense.bias", &mut self.dense.bias),
            ("head.weight", &mut self.head.weight),
            ("head.bias", &mut self.head.bias),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.param_groups()
            .iter()
            .all(|(_, g)| g.iter().all(|w| w.is_finite()))
    }
}

pub(crate) fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}
