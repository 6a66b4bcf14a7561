//! Run configuration, single evaluations, the experiment grid with its
//! reproducibility manifest, and the unit/activation sweep.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    chronological_split, generate_training_pairs, load_issues, CorpusError, IssueSet,
    NegativePool, PairSampling,
};
use crate::embeddings::{load_vectors, EmbeddingError, EmbeddingTable, LoadOptions};
use crate::features::FeatureSet;
use crate::metrics::{
    enumerate_feature_combos, evaluate, CsvRow, EvalReport, EvalSpec, MetricsError, DEFAULT_KS,
};
use crate::ranker::{BaselineScorer, RankError, Scorer, SiameseScorer, TimeFilter};
use crate::siamese::{
    train, Activation, ConvSpec, EncoderKind, ModelConfig, SiameseError, SiameseModel, TrainConfig,
};
use crate::textprep::concat_fields;
use crate::tfidf::{FieldLayout, IssueVectorizer, Metric, TfidfError};

pub const TOOL_NAME: &str = "linkrec";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Tfidf(#[from] TfidfError),
    #[error(transparent)]
    Siamese(#[from] SiameseError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{failed} of {total} grid runs failed")]
    GridFailures { failed: usize, total: usize },
    #[error("reproduced CSV differs from the manifest (expected sha256 {expected}, got {actual})")]
    NotReproduced { expected: String, actual: String },
}

impl ExperimentError {
    /// Problems with what was asked for rather than with running it.
    pub fn is_validation(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Either ranker family: TF-IDF under one metric, or a Siamese encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerSpec {
    Tfidf(Metric),
    Siamese(EncoderKind),
}

impl ScorerSpec {
    pub const BASELINES: [ScorerSpec; 4] = [
        ScorerSpec::Tfidf(Metric::Cosine),
        ScorerSpec::Tfidf(Metric::Euclidean),
        ScorerSpec::Tfidf(Metric::Manhattan),
        ScorerSpec::Tfidf(Metric::Chebyshev),
    ];
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Tfidf(m) => write!(f, "tfidf-{m}"),
            ScorerSpec::Siamese(k) => write!(f, "siamese-{k}"),
        }
    }
}

impl FromStr for ScorerSpec {
    type Err = ExperimentError;

    /// Accepts `tfidf-<metric>`, `siamese-<encoder>` and the bare metric or
    /// encoder name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bare = t
            .strip_prefix("tfidf-")
            .or_else(|| t.strip_prefix("siamese-"))
            .unwrap_or(&t);
        if let Ok(m) = bare.parse::<Metric>() {
            if !t.starts_with("siamese-") {
                return Ok(ScorerSpec::Tfidf(m));
            }
        }
        if !t.starts_with("tfidf-") {
            if let Ok(k) = bare.parse::<EncoderKind>() {
                return Ok(ScorerSpec::Siamese(k));
            }
        }
        Err(ExperimentError::Config(format!(
            "unknown scorer {s:?} (expected tfidf-<cosine|euclidean|manhattan|chebyshev> or siamese-cnn)"
        )))
    }
}

impl Serialize for ScorerSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScorerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Siamese architecture knobs. `units` is both the filter count of the
/// convolution and the width of the dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub encoder: EncoderKind,
    pub kernel_size: usize,
    pub stride: usize,
    pub units: usize,
    pub activation: Activation,
    pub max_len: usize,
    /// Stem the embedding vocabulary so it matches preprocessed text.
    pub stem_vocab: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        let conv = ConvSpec::default();
        ModelParams {
            encoder: EncoderKind::Cnn,
            kernel_size: conv.kernel_size,
            stride: conv.stride,
            units: conv.filters,
            activation: Activation::Relu,
            max_len: crate::embeddings::DEFAULT_MAX_LEN,
            stem_vocab: true,
        }
    }
}

/// The axes a grid sweeps. Empty lists fall back to the single value in
/// the enclosing run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridAxes {
    /// `["all"]` expands to the 28 standard combinations.
    pub features: Vec<String>,
    pub scorers: Vec<ScorerSpec>,
    pub filters: Vec<TimeFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSON-lines issue export.
    pub data: PathBuf,
    /// Name used in reports; defaults to the data file stem.
    pub dataset: Option<String>,
    pub split_day: u32,
    pub features: FeatureSet,
    pub scorer: ScorerSpec,
    pub filter: TimeFilter,
    pub ks: Vec<usize>,
    pub layout: FieldLayout,
    pub embeddings: Option<PathBuf>,
    pub dim: usize,
    pub seed: u64,
    pub neg_ratio: f64,
    pub negative_pool: NegativePool,
    pub model: ModelParams,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub grid: GridAxes,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::new(),
            dataset: None,
            split_day: 0,
            features: FeatureSet::TDS,
            scorer: ScorerSpec::Tfidf(Metric::Cosine),
            filter: TimeFilter::None,
            ks: DEFAULT_KS.to_vec(),
            layout: FieldLayout::Concatenated,
            embeddings: None,
            dim: crate::embeddings::DEFAULT_DIM,
            seed: 0,
            neg_ratio: 1.0,
            negative_pool: NegativePool::AnyUnlinked,
            model: ModelParams::default(),
            train: TrainConfig::default(),
            out: PathBuf::from("out"),
            grid: GridAxes::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| {
            self.data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }

    /// Feature sets the grid covers.
    pub fn grid_features(&self) -> Result<Vec<FeatureSet>, ExperimentError> {
        if self.grid.features.is_empty() {
            return Ok(vec![self.features]);
        }
        let mut out = Vec::new();
        for label in &self.grid.features {
            if label.eq_ignore_ascii_case("all") {
                out.extend(enumerate_feature_combos());
            } else {
                out.push(
                    label
                        .parse()
                        .map_err(|e| ExperimentError::Config(format!("features {label:?}: {e}")))?,
                );
            }
        }
        Ok(out)
    }

    pub fn grid_scorers(&self) -> Vec<ScorerSpec> {
        if self.grid.scorers.is_empty() {
            vec![self.scorer]
        } else {
            self.grid.scorers.clone()
        }
    }

    pub fn grid_filters(&self) -> Vec<TimeFilter> {
        if self.grid.filters.is_empty() {
            vec![self.filter]
        } else {
            self.grid.filters.clone()
        }
    }

    fn needs_embeddings(&self) -> bool {
        matches!(self.scorer, ScorerSpec::Siamese(_))
            || self.grid.scorers.iter().any(|s| matches!(s, ScorerSpec::Siamese(_)))
    }

    /// Checks everything that can be checked without reading the data.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.check().map_err(|e| match e {
            ExperimentError::Config(_) => e,
            other => ExperimentError::Config(other.to_string()),
        })
    }

    fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.data.as_os_str().is_empty() {
            return bad("no data file given".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad(format!("K values must be positive and non-empty, got {:?}", self.ks));
        }
        for fs in self.grid_features()?.iter().chain([&self.features]) {
            if !fs.has_text() {
                return bad(format!("feature set {fs} has no text feature"));
            }
        }
        for s in self.grid_scorers().into_iter().chain([self.scorer]) {
            if let ScorerSpec::Siamese(kind) = s {
                if kind != EncoderKind::Cnn {
                    return Err(SiameseError::UnsupportedEncoder {
                        kind: kind.to_string(),
                        available: crate::siamese::SUPPORTED_ENCODERS.join(", "),
                    }
                    .into());
                }
            }
        }
        if self.needs_embeddings() {
            if self.embeddings.is_none() {
                return bad("a siamese scorer needs an embeddings file".into());
            }
            if self.dim == 0 {
                return bad("embedding dim must be positive".into());
            }
            let m = &self.model;
            let conv = ConvSpec {
                kernel_size: m.kernel_size,
                stride: m.stride,
                filters: m.units,
            };
            conv.validate()?;
            conv.window_count(m.max_len)?;
            if self.train.batch_size == 0 || self.train.epochs == 0 {
                return bad("batch size and epochs must be positive".into());
            }
            if !(self.train.learning_rate.is_finite() && self.train.learning_rate > 0.0) {
                return bad(format!("learning rate must be positive, got {}", self.train.learning_rate));
            }
            if !(self.neg_ratio.is_finite() && self.neg_ratio > 0.0) {
                return bad(format!("neg_ratio must be positive, got {}", self.neg_ratio));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, features: FeatureSet) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            encoder: m.encoder,
            conv: ConvSpec {
                kernel_size: m.kernel_size,
                stride: m.stride,
                filters: m.units,
            },
            hidden: m.units,
            activation: m.activation,
            dim: self.dim,
            max_len: m.max_len,
            features,
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn sampling(&self) -> PairSampling {
        PairSampling {
            neg_ratio: self.neg_ratio,
            seed: self.seed,
            pool: self.negative_pool,
        }
    }
}

/// A loaded and split dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub corpus: IssueSet,
    pub train: IssueSet,
    pub test: IssueSet,
}

impl Dataset {
    pub fn load(config: &RunConfig) -> Result<Self, ExperimentError> {
        let corpus = load_issues(&config.data)?;
        Ok(Self::from_corpus(config.dataset_name(), corpus, config.split_day))
    }

    pub fn from_corpus(name: String, corpus: IssueSet, split_day: u32) -> Self {
        let (train, test) = chronological_split(&corpus, split_day);
        Dataset {
            name,
            corpus,
            train,
            test,
        }
    }

    pub fn test_keys(&self) -> impl Iterator<Item = &str> {
        self.test.issues().iter().map(|i| i.key.as_str())
    }
}

/// Every stem any text field of the corpus produces.
pub fn corpus_vocabulary(corpus: &IssueSet) -> HashSet<String> {
    let all = "TDS".parse::<FeatureSet>().expect("valid label");
    corpus
        .issues()
        .iter()
        .flat_map(|i| concat_fields(i, &all).expect("has text").into_inner())
        .collect()
}

pub fn load_table(config: &RunConfig, corpus: &IssueSet) -> Result<EmbeddingTable, ExperimentError> {
    let path = config
        .embeddings
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("no embeddings file given".into()))?;
    let opts = LoadOptions {
        stem_vocab: config.model.stem_vocab,
        keep: Some(corpus_vocabulary(corpus)),
    };
    let (table, stats) = load_vectors(path, config.dim, &opts)?;
    log::info!(
        "loaded {} vectors from {} ({} lines, {} skipped, {} stem collisions)",
        stats.stored,
        path.display(),
        stats.lines,
        stats.skipped,
        stats.stem_collisions
    );
    Ok(table)
}

/// Builds the scorer for one configuration. TF-IDF is fitted on the
/// training split; the Siamese model is trained on pairs sampled from it.
pub fn build_scorer(
    config: &RunConfig,
    data: &Dataset,
    features: FeatureSet,
    spec: ScorerSpec,
    table: Option<&EmbeddingTable>,
) -> Result<Box<dyn Scorer>, ExperimentError> {
    match spec {
        ScorerSpec::Tfidf(metric) => {
            let vec = IssueVectorizer::fit(data.train.issues(), features, config.layout)?;
            Ok(Box::new(BaselineScorer::new(vec, metric, &data.corpus)))
        }
        ScorerSpec::Siamese(_) => {
            let table = table.ok_or_else(|| ExperimentError::Config("no embeddings loaded".into()))?;
            let model = train_model(config, data, features, table)?;
            Ok(Box::new(SiameseScorer::new(model, table.clone(), &data.corpus)?))
        }
    }
}

pub fn train_model(
    config: &RunConfig,
    data: &Dataset,
    features: FeatureSet,
    table: &EmbeddingTable,
) -> Result<SiameseModel, ExperimentError> {
    let pairs = generate_training_pairs(&data.train, &config.sampling())?;
    let model = SiameseModel::new(config.model_config(features))?;
    let (trained, report) = train(&model, &pairs, &data.train, table, &config.train_config())?;
    log::info!(
        "trained {features} on {} pairs, loss {:?}",
        report.pairs,
        report.epoch_losses
    );
    Ok(trained)
}

/// Evaluates the configuration's own features, scorer and filter.
pub fn run_evaluate(config: &RunConfig) -> Result<EvalReport, ExperimentError> {
    config.validate()?;
    let data = Dataset::load(config)?;
    let table = match config.scorer {
        ScorerSpec::Siamese(_) => Some(load_table(config, &data.corpus)?),
        ScorerSpec::Tfidf(_) => None,
    };
    let scorer = build_scorer(config, &data, config.features, config.scorer, table.as_ref())?;
    evaluate_with(config, &data, config.features, config.scorer, config.filter, scorer.as_ref())
}

pub fn evaluate_with(
    config: &RunConfig,
    data: &Dataset,
    features: FeatureSet,
    spec: ScorerSpec,
    filter: TimeFilter,
    scorer: &dyn Scorer,
) -> Result<EvalReport, ExperimentError> {
    let name = spec.to_string();
    let (report, _) = evaluate(
        &data.corpus,
        data.test_keys(),
        scorer,
        &EvalSpec {
            dataset: &data.name,
            features,
            scorer_name: &name,
            filter,
            ks: &config.ks,
        },
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub features: String,
    pub scorer: String,
    pub filter: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub reports: Vec<EvalReport>,
    pub failures: Vec<GridFailure>,
}

impl GridOutcome {
    pub fn rows(&self) -> Vec<CsvRow> {
        self.reports.iter().flat_map(EvalReport::csv_rows).collect()
    }

    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row).expect("in-memory CSV write");
        }
        if self.reports.is_empty() {
            w.write_record([
                "dataset", "features", "scorer", "filter", "K", "accuracy", "mrr", "recall", "queries",
                "excluded",
            ])
            .expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("CSV is UTF-8")
    }
}

/// Evaluates every (features, scorer, filter) combination. A failing
/// combination is recorded and the rest still run.
pub fn run_grid(config: &RunConfig, data: &Dataset) -> Result<GridOutcome, ExperimentError> {
    let features = config.grid_features()?;
    let scorers = config.grid_scorers();
    let filters = config.grid_filters();
    let table = if scorers.iter().any(|s| matches!(s, ScorerSpec::Siamese(_))) {
        Some(load_table(config, &data.corpus)?)
    } else {
        None
    };

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    // TF-IDF ignores scalar features, so fitted vectorizers are shared by
    // combinations with the same text fields.
    let mut vectorizers: HashMap<FeatureSet, IssueVectorizer> = HashMap::new();
    for fs in &features {
        for &spec in &scorers {
            let scorer: Result<Box<dyn Scorer>, ExperimentError> = match spec {
                ScorerSpec::Tfidf(metric) => {
                    let text = fs.text_only();
                    let fitted = match vectorizers.get(&text) {
                        Some(v) => Ok(v.clone()),
                        None => IssueVectorizer::fit(data.train.issues(), text, config.layout)
                            .inspect(|v| {
                                vectorizers.insert(text, v.clone());
                            })
                            .map_err(ExperimentError::from),
                    };
                    fitted.map(|v| Box::new(BaselineScorer::new(v, metric, &data.corpus)) as Box<dyn Scorer>)
                }
                ScorerSpec::Siamese(_) => build_scorer(config, data, *fs, spec, table.as_ref()),
            };
            let scorer = match scorer {
                Ok(s) => s,
                Err(e) => {
                    for filter in &filters {
                        failures.push(failure(fs, spec, *filter, &e));
                    }
                    continue;
                }
            };
            for &filter in &filters {
                match evaluate_with(config, data, *fs, spec, filter, scorer.as_ref()) {
                    Ok(r) => reports.push(r),
                    Err(e) => failures.push(failure(fs, spec, filter, &e)),
                }
            }
        }
    }
    for f in &failures {
        log::warn!("grid run {} / {} / {} failed: {}", f.features, f.scorer, f.filter, f.error);
    }
    Ok(GridOutcome { reports, failures })
}

fn failure(fs: &FeatureSet, spec: ScorerSpec, filter: TimeFilter, e: &ExperimentError) -> GridFailure {
    GridFailure {
        features: fs.label(),
        scorer: spec.to_string(),
        filter: filter.to_string(),
        error: e.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, ExperimentError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Everything needed to re-run a grid and check its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    /// Input file path to sha256.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub csv: String,
    pub csv_sha256: String,
    pub rows: usize,
    pub failures: Vec<GridFailure>,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn input_checksums(config: &RunConfig) -> Result<BTreeMap<String, String>, ExperimentError> {
    let mut out = BTreeMap::new();
    out.insert(config.data.display().to_string(), sha256_file(&config.data)?);
    if config.needs_embeddings() {
        if let Some(e) = &config.embeddings {
            out.insert(e.display().to_string(), sha256_file(e)?);
        }
    }
    Ok(out)
}

/// Runs the grid and writes the CSV and manifest into `config.out`.
/// Fails after writing both if any combination failed.
pub fn cmd_grid(config: &RunConfig) -> Result<Manifest, ExperimentError> {
    config.validate()?;
    let inputs = input_checksums(config)?;
    let data = Dataset::load(config)?;
    let outcome = run_grid(config, &data)?;
    let csv = outcome.csv();
    fs::create_dir_all(&config.out).map_err(|e| io_err(&config.out, e))?;
    let csv_path = config.out.join(RESULTS_FILE);
    fs::write(&csv_path, &csv).map_err(|e| io_err(&csv_path, e))?;
    let manifest = Manifest {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: config.clone(),
        inputs,
        seeds: BTreeMap::from([
            ("init".to_string(), config.seed),
            ("negatives".to_string(), config.seed),
            ("shuffle".to_string(), config.seed),
        ]),
        csv: csv_path.display().to_string(),
        csv_sha256: sha256_hex(csv.as_bytes()),
        rows: outcome.rows().len(),
        failures: outcome.failures.clone(),
    };
    let manifest_path = config.out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;
    if !outcome.failures.is_empty() {
        return Err(ExperimentError::GridFailures {
            failed: outcome.failures.len(),
            total: outcome.failures.len() + outcome.reports.len(),
        });
    }
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

/// Re-runs the grid a manifest describes, writing into `out`, and checks
/// the inputs and the resulting CSV against the recorded checksums.
pub fn reproduce(manifest: &Manifest, out: &Path) -> Result<Manifest, ExperimentError> {
    let current = input_checksums(&manifest.config)?;
    for (path, sum) in &manifest.inputs {
        if current.get(path) != Some(sum) {
            return Err(ExperimentError::Config(format!("input {path} changed since the manifest was written")));
        }
    }
    let config = RunConfig {
        out: out.to_path_buf(),
        ..manifest.config.clone()
    };
    let again = cmd_grid(&config)?;
    if again.csv_sha256 != manifest.csv_sha256 {
        return Err(ExperimentError::NotReproduced {
            expected: manifest.csv_sha256.clone(),
            actual: again.csv_sha256,
        });
    }
    Ok(again)
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub units: usize,
    pub activation: Activation,
    /// `None` when training diverged.
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSweep {
    pub best_units: usize,
    pub best_metric: f64,
    pub trace: Vec<(usize, Option<f64>)>,
}

/// Tries `start`, `start + step`, ... up to `max`, stopping at the first
/// step that does not improve on the best so far or whose training
/// diverges. A divergent first step is an error.
pub fn sweep_units(
    start: usize,
    step: usize,
    max: usize,
    mut score: impl FnMut(usize) -> Result<f64, ExperimentError>,
) -> Result<UnitSweep, ExperimentError> {
    if start == 0 || step == 0 || max < start {
        return Err(ExperimentError::Config(format!(
            "unit sweep needs 0 < start <= max and a positive step (start {start}, step {step}, max {max})"
        )));
    }
    let mut trace = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut units = start;
    while units <= max {
        match score(units) {
            Ok(m) => {
                trace.push((units, Some(m)));
                match best {
                    Some((_, b)) if m <= b => break,
                    _ => best = Some((units, m)),
                }
            }
            Err(ExperimentError::Siamese(SiameseError::Diverged { .. })) if best.is_some() => {
                trace.push((units, None));
                break;
            }
            Err(e) => return Err(e),
        }
        units += step;
    }
    let (best_units, best_metric) = best.expect("first step either scored or returned");
    Ok(UnitSweep {
        best_units,
        best_metric,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub start: usize,
    pub step: usize,
    pub max_units: usize,
    /// Fraction of the training days held out for validation.
    pub validation_fraction: f64,
    pub k: usize,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            start: 50,
            step: 50,
            max_units: 500,
            validation_fraction: 0.2,
            k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub units: UnitSweep,
    pub activations: Vec<SweepPoint>,
    pub best: ModelParams,
    pub best_metric: f64,
}

/// Splits the training issues chronologically into a fitting part and a
/// validation part holding roughly the last `fraction` of the days.
pub fn validation_split(data: &Dataset, fraction: f64) -> Result<Dataset, ExperimentError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ExperimentError::Config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let days = data.train.issues().iter().map(|i| data.train.day_of(i)).max().unwrap_or(0);
    let cut = ((days + 1) as f64 * (1.0 - fraction)).floor().max(1.0) as u32;
    Ok(Dataset::from_corpus(format!("{}-validation", data.name), data.train.clone(), cut))
}

/// Accuracy@K of the configured Siamese model on the validation slice.
pub fn validation_metric(
    config: &RunConfig,
    data: &Dataset,
    table: &EmbeddingTable,
    k: usize,
) -> Result<f64, ExperimentError> {
    let spec = ScorerSpec::Siamese(config.model.encoder);
    let scorer = build_scorer(config, data, config.features, spec, Some(table))?;
    let cfg = RunConfig {
        ks: vec![k],
        ..config.clone()
    };
    let report = evaluate_with(&cfg, data, config.features, spec, config.filter, scorer.as_ref())?;
    Ok(report.per_k[0].accuracy)
}

/// Unit sweep followed by an activation sweep at the chosen width.
pub fn cmd_tune(
    config: &RunConfig,
    data: &Dataset,
    table: &EmbeddingTable,
    settings: &TuneSettings,
) -> Result<TuneOutcome, ExperimentError> {
    let val = validation_split(data, settings.validation_fraction)?;
    let with = |units: usize, activation: Activation| RunConfig {
        model: ModelParams {
            units,
            activation,
            ..config.model
        },
        ..config.clone()
    };
    let base_act = config.model.activation;
    let units = sweep_units(settings.start, settings.step, settings.max_units, |u| {
        let m = validation_metric(&with(u, base_act), &val, table, settings.k)?;
        log::info!("units {u}: accuracy@{} {m:.4}", settings.k);
        Ok(m)
    })?;
    let mut activations = Vec::new();
    let mut best = (base_act, units.best_metric);
    for act in Activation::ALL {
        let metric = if act == base_act {
            Some(units.best_metric)
        } else {
            match validation_metric(&with(units.best_units, act), &val, table, settings.k) {
                Ok(m) => Some(m),
                Err(ExperimentError::Siamese(SiameseError::Diverged { .. })) => None,
                Err(e) => return Err(e),
            }
        };
        if let Some(m) = metric {
            if m > best.1 {
                best = (act, m);
            }
        }
        activations.push(SweepPoint {
            units: units.best_units,
            activation: act,
            metric,
        });
    }
    Ok(TuneOutcome {
        best: ModelParams {
            units: units.best_units,
            activation: best.0,
            ..config.model
        },
        best_metric: best.1,
        units,
        activations,
    })
}
