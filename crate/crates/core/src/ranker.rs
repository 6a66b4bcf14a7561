//! Candidate generation, time-window filtering and top-K selection.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Issue, IssueSet};
use crate::embeddings::EmbeddingTable;
use crate::siamese::{encode_issue, scalar_features, IssueEmbedding, SiameseError, SiameseModel};
use crate::tfidf::{score, IssueVectorizer, Metric, SparseVec};

pub const DAYS_PER_MONTH: u32 = 30;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("unknown time filter {0:?} (expected none, 1m, 2m or 3m)")]
    UnknownFilter(String),
    #[error("scorer does not match the pool: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Siamese(#[from] SiameseError),
}

/// How far back candidates may be created relative to the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TimeFilter {
    #[default]
    None,
    Days(u32),
}

impl TimeFilter {
    /// The four windows of the experiment grid.
    pub const GRID: [TimeFilter; 4] = [
        TimeFilter::None,
        TimeFilter::Days(DAYS_PER_MONTH),
        TimeFilter::Days(2 * DAYS_PER_MONTH),
        TimeFilter::Days(3 * DAYS_PER_MONTH),
    ];

    pub fn admits(self, query: &Issue, candidate: &Issue) -> bool {
        if candidate.created >= query.created || candidate.key == query.key {
            return false;
        }
        match self {
            TimeFilter::None => true,
            TimeFilter::Days(d) => {
                let gap = query.created.timestamp() - candidate.created.timestamp();
                gap <= i64::from(d) * 86_400
            }
        }
    }
}

impl fmt::Display for TimeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TimeFilter::None => f.write_str("none"),
            TimeFilter::Days(d) if d % DAYS_PER_MONTH == 0 => write!(f, "{}m", d / DAYS_PER_MONTH),
            TimeFilter::Days(d) => write!(f, "{d}d"),
        }
    }
}

impl FromStr for TimeFilter {
    type Err = RankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || RankError::UnknownFilter(s.to_string());
        if t == "none" {
            return Ok(TimeFilter::None);
        }
        let (num, unit) = t.split_at(t.len().saturating_sub(1));
        let n: u32 = num.parse().map_err(|_| bad())?;
        let days = match unit {
            "m" => n.checked_mul(DAYS_PER_MONTH).ok_or_else(bad)?,
            "d" => n,
            _ => return Err(bad()),
        };
        if days == 0 {
            return Err(bad());
        }
        Ok(TimeFilter::Days(days))
    }
}

impl Serialize for TimeFilter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeFilter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub key: String,
    pub score: f64,
    pub rank: usize,
}

/// Issues of `pool` the filter admits for `query`, newest first, then by key.
pub fn candidates<'a>(query: &Issue, pool: &'a IssueSet, filter: TimeFilter) -> Vec<&'a Issue> {
    let mut out: Vec<&Issue> = pool
        .issues()
        .iter()
        .filter(|c| filter.admits(query, c))
        .collect();
    out.sort_by(|a, b| newest_first(a, b));
    out
}

fn newest_first(a: &Issue, b: &Issue) -> Ordering {
    b.created.cmp(&a.created).then_with(|| a.key.cmp(&b.key))
}

/// Scores a candidate for a query; higher means more likely linked.
pub trait Scorer: Sync {
    fn score(&self, query: &Issue, candidate: &Issue) -> Result<f64, RankError>;
}

/// TF-IDF vectors under one metric. Vectors of the pool are cached.
pub struct BaselineScorer {
    vectorizer: IssueVectorizer,
    metric: Metric,
    cache: HashMap<String, SparseVec>,
}

impl BaselineScorer {
    pub fn new(vectorizer: IssueVectorizer, metric: Metric, pool: &IssueSet) -> Self {
        let cache = pool
            .issues()
            .iter()
            .map(|i| (i.key.clone(), vectorizer.vectorize(i)))
            .collect();
        BaselineScorer {
            vectorizer,
            metric,
            cache,
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    fn vector<'a>(&'a self, issue: &Issue, slot: &'a mut Option<SparseVec>) -> &'a SparseVec {
        match self.cache.get(&issue.key) {
            Some(v) => v,
            None => slot.insert(self.vectorizer.vectorize(issue)),
        }
    }
}

impl Scorer for BaselineScorer {
    fn score(&self, query: &Issue, candidate: &Issue) -> Result<f64, RankError> {
        let (mut a, mut b) = (None, None);
        let u = self.vector(query, &mut a);
        let v = self.vector(candidate, &mut b);
        Ok(score(u, v, self.metric))
    }
}

/// A frozen Siamese model with per-issue encoder outputs cached for a pool.
pub struct SiameseScorer {
    model: SiameseModel,
    table: EmbeddingTable,
    cache: HashMap<String, IssueEmbedding>,
}

impl SiameseScorer {
    pub fn new(model: SiameseModel, table: EmbeddingTable, pool: &IssueSet) -> Result<Self, RankError> {
        if table.dim() != model.config.dim {
            return Err(RankError::Mismatch(format!(
                "embedding dim {} but model expects {}",
                table.dim(),
                model.config.dim
            )));
        }
        let mut scorer = SiameseScorer {
            model,
            table,
            cache: HashMap::new(),
        };
        for issue in pool.issues() {
            let e = scorer.embed(issue)?;
            scorer.cache.insert(issue.key.clone(), e);
        }
        Ok(scorer)
    }

    pub fn model(&self) -> &SiameseModel {
        &self.model
    }

    fn embed(&self, issue: &Issue) -> Result<IssueEmbedding, RankError> {
        let cfg = &self.model.config;
        let enc = encode_issue(issue, &cfg.features, &self.table, cfg.max_len)?;
        Ok(self.model.embed_issue(&enc)?)
    }
}

impl Scorer for SiameseScorer {
    fn score(&self, query: &Issue, candidate: &Issue) -> Result<f64, RankError> {
        let fetch = |i: &Issue| -> Result<std::borrow::Cow<'_, IssueEmbedding>, RankError> {
            Ok(match self.cache.get(&i.key) {
                Some(e) => std::borrow::Cow::Borrowed(e),
                None => std::borrow::Cow::Owned(self.embed(i)?),
            })
        };
        let q = fetch(query)?;
        let c = fetch(candidate)?;
        let scalars = scalar_features(query, candidate, &self.model.config.features);
        Ok(self.model.score_embedded(&q, &c, Some(&scalars))?)
    }
}

/// Top-K candidates by score. Ties go to the more recently created issue,
/// then to the smaller key.
pub fn recommend(
    query: &Issue,
    pool: &IssueSet,
    scorer: &dyn Scorer,
    filter: TimeFilter,
    k: usize,
) -> Result<Vec<Recommendation>, RankError> {
    if k == 0 {
        return Err(RankError::ZeroK);
    }
    let mut scored = Vec::new();
    for c in candidates(query, pool, filter) {
        scored.push((scorer.score(query, c)?, c));
    }
    Ok(top_k(scored, k))
}

/// Sorts `(score, issue)` pairs by the ranking order and keeps `k`.
pub fn top_k(mut scored: Vec<(f64, &Issue)>, k: usize) -> Vec<Recommendation> {
    scored.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| newest_first(a, b)));
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (score, c))| Recommendation {
            key: c.key.clone(),
            score,
            rank: i + 1,
        })
        .collect()
}

pub fn recommendations_json(recs: &[Recommendation]) -> String {
    serde_json::to_string_pretty(recs).expect("recommendations serialise")
}
