use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use linkrec::corpus::{generate_training_pairs, load_issues, Issue, IssueSet};
use linkrec::embeddings::write_vectors;
use linkrec::experiment::{
    build_scorer, cmd_grid, cmd_tune, evaluate_with, load_manifest, load_table, reproduce,
    train_model, Dataset, ExperimentError, RunConfig, ScorerSpec, TuneSettings,
};
use linkrec::features::FeatureSet;
use linkrec::ranker::{recommend, recommendations_json, Scorer, SiameseScorer, TimeFilter};
use linkrec::siamese::{load_checkpoint, save_checkpoint};
use linkrec::synthetic::{separable_corpus, SyntheticSpec};
use linkrec::tfidf::Metric;

#[derive(Parser)]
#[command(name = "linkrec", version, about = "Recommend earlier issues a new issue likely depends on")]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an export and print corpus statistics.
    Ingest(Common),
    /// Split chronologically and report (or write) both halves.
    Split(Common),
    /// Train a Siamese model on the training split and save a checkpoint.
    Train(Common),
    /// Rank earlier issues for one query issue.
    Recommend {
        #[command(flatten)]
        common: Common,
        /// Key of the query issue.
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        /// Siamese checkpoint to score with instead of TF-IDF.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate one configuration on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Siamese checkpoint to evaluate instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the feature x scorer x filter grid, or re-run one from its manifest.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Re-run the grid recorded in this manifest and check the CSV matches.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Sweep layer widths and dense activations on a validation slice.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        start: usize,
        #[arg(long, default_value_t = 50)]
        step: usize,
        #[arg(long, default_value_t = 500)]
        max_units: usize,
    },
    /// Write a small separable corpus, matching word vectors and a config.
    Synth {
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Settings shared by most subcommands. Flags override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON-lines issue export.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Days since the first issue at which the test split starts.
    #[arg(long)]
    split_day: Option<u32>,
    /// Feature label such as TDS or TC2CU.
    #[arg(long)]
    features: Option<String>,
    /// tfidf-<metric> or siamese-cnn.
    #[arg(long)]
    scorer: Option<String>,
    /// Shorthand for --scorer tfidf-<metric>.
    #[arg(long)]
    metric: Option<String>,
    /// none, 1m, 2m or 3m.
    #[arg(long)]
    filter: Option<String>,
    /// Word vectors in plain text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory or file, depending on the subcommand.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn bad(msg: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(msg.to_string())
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ExperimentError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            c.data = v.clone();
        }
        if let Some(v) = self.split_day {
            c.split_day = v;
        }
        if let Some(v) = &self.features {
            c.features = v.parse().map_err(|e| bad(format!("--features {v:?}: {e}")))?;
        }
        if let Some(v) = &self.scorer {
            c.scorer = v.parse()?;
        }
        if let Some(v) = &self.metric {
            let m: Metric = v.parse().map_err(|e| bad(format!("--metric {v:?}: {e}")))?;
            c.scorer = ScorerSpec::Tfidf(m);
        }
        if let Some(v) = &self.filter {
            c.filter = v.parse().map_err(bad)?;
        }
        if let Some(v) = &self.embeddings {
            c.embeddings = Some(v.clone());
        }
        if let Some(v) = self.dim {
            c.dim = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if c.data.as_os_str().is_empty() {
            return Err(bad("--data (or `data` in the config) is required"));
        }
        Ok(c)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io(path, e))
}

fn io(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn issues_jsonl(set: &IssueSet) -> String {
    let mut out = String::new();
    for issue in set.issues() {
        out.push_str(&serde_json::to_string(issue).expect("issue serialises"));
        out.push('\n');
    }
    out
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn print_json(v: &serde_json::Value) {
    emit(&serde_json::to_string_pretty(v).expect("json"));
}

fn ingest(common: &Common) -> Result<(), ExperimentError> {
    let c = common.resolve()?;
    let set = load_issues(&c.data)?;
    let last = set.issues().last().map(|i| set.day_of(i)).unwrap_or(0);
    print_json(&json!({
        "issues": set.len(),
        "links": set.link_count(),
        "dropped_links": set.dropped_links(),
        "day_zero": set.day_zero().to_rfc3339(),
        "last_day": last,
    }));
    Ok(())
}

fn split(common: &Common) -> Result<(), ExperimentError> {
    let c = common.resolve()?;
    let data = Dataset::load(&c)?;
    let total = data.corpus.link_count();
    let train_links = data.train.link_count();
    print_json(&json!({
        "split_day": c.split_day,
        "train": data.train.len(),
        "test": data.test.len(),
        "train_links": train_links,
        "test_links": total - train_links,
    }));
    if common.out.is_some() {
        write_file(&c.out.join("train.jsonl"), &issues_jsonl(&data.train))?;
        write_file(&c.out.join("test.jsonl"), &issues_jsonl(&data.test))?;
    }
    Ok(())
}

fn train_cmd(common: &Common) -> Result<(), ExperimentError> {
    let mut c = common.resolve()?;
    if !matches!(c.scorer, ScorerSpec::Siamese(_)) {
        c.scorer = "siamese-cnn".parse()?;
    }
    c.validate()?;
    let data = Dataset::load(&c)?;
    let table = load_table(&c, &data.corpus)?;
    let model = train_model(&c, &data, c.features, &table)?;
    let path = if c.out.extension().is_some() {
        c.out.clone()
    } else {
        c.out.join("model.json")
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    save_checkpoint(&model, &path)?;
    let pairs = generate_training_pairs(&data.train, &c.sampling())?.len();
    print_json(&json!({"checkpoint": path.display().to_string(), "pairs": pairs}));
    Ok(())
}

fn scorer_for(
    c: &RunConfig,
    data: &Dataset,
    model: Option<&Path>,
) -> Result<(Box<dyn Scorer>, ScorerSpec, FeatureSet), ExperimentError> {
    if let Some(path) = model {
        let model = load_checkpoint(path)?;
        let cfg = RunConfig {
            dim: model.config.dim,
            ..c.clone()
        };
        let features = model.config.features;
        let spec = ScorerSpec::Siamese(model.config.encoder);
        let table = load_table(&cfg, &data.corpus)?;
        return Ok((Box::new(SiameseScorer::new(model, table, &data.corpus)?), spec, features));
    }
    c.validate()?;
    let table = match c.scorer {
        ScorerSpec::Siamese(_) => Some(load_table(c, &data.corpus)?),
        ScorerSpec::Tfidf(_) => None,
    };
    let scorer = build_scorer(c, data, c.features, c.scorer, table.as_ref())?;
    Ok((scorer, c.scorer, c.features))
}

fn recommend_cmd(common: &Common, query: &str, k: usize, model: Option<&Path>) -> Result<(), ExperimentError> {
    let c = common.resolve()?;
    if k == 0 {
        return Err(bad("-k must be at least 1"));
    }
    let data = Dataset::load(&c)?;
    let q: &Issue = data
        .corpus
        .get(query)
        .ok_or_else(|| bad(format!("no issue with key {query:?}")))?;
    let (scorer, _, _) = scorer_for(&c, &data, model)?;
    let recs = recommend(q, &data.corpus, scorer.as_ref(), c.filter, k)?;
    let text = recommendations_json(&recs);
    emit(&text);
    if common.out.is_some() {
        write_file(&c.out, &text)?;
    }
    Ok(())
}

fn evaluate_cmd(common: &Common, model: Option<&Path>) -> Result<(), ExperimentError> {
    let c = common.resolve()?;
    let data = Dataset::load(&c)?;
    let (scorer, spec, features) = scorer_for(&c, &data, model)?;
    let report = evaluate_with(&c, &data, features, spec, c.filter, scorer.as_ref())?;
    emit(&report.to_json());
    if common.out.is_some() {
        write_file(&c.out.join("report.json"), &report.to_json())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in report.csv_rows() {
            w.serialize(row).map_err(|e| io(&c.out, e))?;
        }
        let bytes = w.into_inner().map_err(|e| io(&c.out, e))?;
        write_file(&c.out.join("report.csv"), &String::from_utf8_lossy(&bytes))?;
    }
    Ok(())
}

fn grid_cmd(common: &Common, manifest: Option<&Path>) -> Result<(), ExperimentError> {
    let m = match manifest {
        Some(path) => {
            let recorded = load_manifest(path)?;
            let out = common.out.clone().unwrap_or_else(|| recorded.config.out.clone());
            reproduce(&recorded, &out)?
        }
        None => cmd_grid(&common.resolve()?)?,
    };
    print_json(&json!({
        "csv": m.csv,
        "csv_sha256": m.csv_sha256,
        "rows": m.rows,
        "failures": m.failures.len(),
    }));
    Ok(())
}

fn tune_cmd(common: &Common, start: usize, step: usize, max_units: usize) -> Result<(), ExperimentError> {
    let mut c = common.resolve()?;
    if !matches!(c.scorer, ScorerSpec::Siamese(_)) {
        c.scorer = "siamese-cnn".parse()?;
    }
    c.validate()?;
    let data = Dataset::load(&c)?;
    let table = load_table(&c, &data.corpus)?;
    let settings = TuneSettings {
        start,
        step,
        max_units,
        ..TuneSettings::default()
    };
    let outcome = cmd_tune(&c, &data, &table, &settings)?;
    let text = serde_json::to_string_pretty(&outcome).expect("json");
    emit(&text);
    if common.out.is_some() {
        write_file(&c.out.join("tune.json"), &text)?;
    }
    Ok(())
}

fn synth_cmd(out: &Path, seed: u64) -> Result<(), ExperimentError> {
    let spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = separable_corpus(&spec);
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let data = out.join("issues.jsonl");
    write_file(&data, &issues_jsonl(&corpus.issues))?;
    let vectors = out.join("vectors.txt");
    let mut buf = Vec::new();
    write_vectors(&corpus.table, &mut buf).map_err(|e| io(&vectors, e))?;
    fs::write(&vectors, buf).map_err(|e| io(&vectors, e))?;

    let mut config = RunConfig {
        data: data.clone(),
        dataset: Some("synthetic".into()),
        split_day: corpus.split_day,
        features: "T".parse().expect("label"),
        embeddings: Some(vectors),
        dim: spec.dim,
        seed,
        out: out.join("grid"),
        ..RunConfig::default()
    };
    config.model.units = 64;
    config.model.max_len = 16;
    config.train.learning_rate = 0.003;
    config.train.optimizer = linkrec::siamese::Optimizer::Adam;
    config.grid.scorers = ScorerSpec::BASELINES.to_vec();
    config.grid.scorers.push("siamese-cnn".parse()?);
    config.grid.filters = TimeFilter::GRID.to_vec();
    let config_path = out.join("config.toml");
    write_file(&config_path, &config.to_toml())?;
    print_json(&json!({
        "data": data.display().to_string(),
        "config": config_path.display().to_string(),
        "issues": corpus.issues.len(),
        "split_day": corpus.split_day,
    }));
    Ok(())
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Ingest(c) => ingest(c),
        Command::Split(c) => split(c),
        Command::Train(c) => train_cmd(c),
        Command::Recommend {
            common,
            query,
            k,
            model,
        } => recommend_cmd(common, query, *k, model.as_deref()),
        Command::Evaluate { common, model } => evaluate_cmd(common, model.as_deref()),
        Command::Grid { common, manifest } => grid_cmd(common, manifest.as_deref()),
        Command::Tune {
            common,
            start,
            step,
            max_units,
        } => tune_cmd(common, *start, *step, *max_units),
        Command::Synth { out, seed } => synth_cmd(out, *seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
