//! Ranking metrics and query-level evaluation.
//!
//! Accuracy@K is the hit rate: the share of queries with at least one
//! relevant issue in the top K. MRR@K is truncated (0 on a miss) and
//! Recall@K is macro-averaged over queries.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IssueSet;
use crate::features::{Feature, FeatureSet};
use crate::ranker::{recommend, RankError, Scorer, TimeFilter};

pub const DEFAULT_KS: [usize; 4] = [1, 2, 3, 5];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no evaluable queries")]
    NoQueries,
    #[error("K must be at least 1")]
    ZeroK,
    #[error("query {0:?} is not in the corpus")]
    UnknownQuery(String),
    #[error(transparent)]
    Rank(#[from] RankError),
}

/// One query's ranked list against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub ranked: Vec<String>,
    pub relevant: BTreeSet<String>,
}

impl QueryResult {
    /// 1-based rank of the first relevant item within the top `k`.
    pub fn first_hit(&self, k: usize) -> Option<usize> {
        self.ranked
            .iter()
            .take(k)
            .position(|key| self.relevant.contains(key))
            .map(|p| p + 1)
    }

    fn hits(&self, k: usize) -> usize {
        self.ranked.iter().take(k).filter(|key| self.relevant.contains(*key)).count()
    }
}

fn mean_over(
    results: &[QueryResult],
    k: usize,
    f: impl Fn(&QueryResult) -> f64,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if results.is_empty() {
        return Err(MetricsError::NoQueries);
    }
    Ok(results.iter().map(f).sum::<f64>() / results.len() as f64)
}

pub fn accuracy_at_k(results: &[QueryResult], k: usize) -> Result<f64, MetricsError> {
    mean_over(results, k, |r| if r.first_hit(k).is_some() { 1.0 } else { 0.0 })
}

pub fn mrr_at_k(results: &[QueryResult], k: usize) -> Result<f64, MetricsError> {
    mean_over(results, k, |r| r.first_hit(k).map_or(0.0, |rank| 1.0 / rank as f64))
}

pub fn recall_at_k(results: &[QueryResult], k: usize) -> Result<f64, MetricsError> {
    mean_over(results, k, |r| {
        if r.relevant.is_empty() {
            0.0
        } else {
            r.hits(k) as f64 / r.relevant.len() as f64
        }
    })
}

/// The 28 feature selections: each non-empty subset of {T, D, S}, alone and
/// with C2, CU, and both.
pub fn enumerate_feature_combos() -> Vec<FeatureSet> {
    let text = [Feature::Title, Feature::Description, Feature::Summary];
    let scalar_options: [&[Feature]; 4] = [
        &[],
        &[Feature::CreatedGap],
        &[Feature::CreatedUpdatedGap],
        &[Feature::CreatedGap, Feature::CreatedUpdatedGap],
    ];
    let mut out = Vec::with_capacity(28);
    for mask in 1u8..8 {
        let mut base: Vec<Feature> = Vec::new();
        for (bit, f) in text.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                base.push(*f);
            }
        }
        for extra in scalar_options {
            let mut fs = base.clone();
            fs.extend_from_slice(extra);
            out.push(FeatureSet::from_features(&fs));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub accuracy: f64,
    pub mrr: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub features: FeatureSet,
    pub scorer: String,
    pub filter: TimeFilter,
    pub per_k: Vec<AtK>,
    pub queries: usize,
    /// Test issues with no link to an earlier issue.
    pub excluded: usize,
    /// Links from a query to an issue created at or after it.
    pub dropped_forward_links: usize,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&AtK> {
        self.per_k.iter().find(|m| m.k == k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.per_k
            .iter()
            .map(|m| CsvRow {
                dataset: self.dataset.clone(),
                features: self.features.label(),
                scorer: self.scorer.clone(),
                filter: self.filter.to_string(),
                k: m.k,
                accuracy: m.accuracy,
                mrr: m.mrr,
                recall: m.recall,
                queries: self.queries,
                excluded: self.excluded,
            })
            .collect()
    }
}

/// One line of the grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub dataset: String,
    pub features: String,
    pub scorer: String,
    pub filter: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub mrr: f64,
    pub recall: f64,
    pub queries: usize,
    pub excluded: usize,
}

pub fn summarize(results: &[QueryResult], ks: &[usize]) -> Result<Vec<AtK>, MetricsError> {
    ks.iter()
        .map(|&k| {
            Ok(AtK {
                k,
                accuracy: accuracy_at_k(results, k)?,
                mrr: mrr_at_k(results, k)?,
                recall: recall_at_k(results, k)?,
            })
        })
        .collect()
}

/// What evaluation needs besides the scorer.
#[derive(Debug, Clone)]
pub struct EvalSpec<'a> {
    pub dataset: &'a str,
    pub features: FeatureSet,
    pub scorer_name: &'a str,
    pub filter: TimeFilter,
    pub ks: &'a [usize],
}

/// Ranks every query against all earlier issues of `corpus` and scores the
/// lists. Ground truth is the query's links to strictly earlier issues in
/// the full corpus, so links that cross the split still count.
pub fn evaluate<'q>(
    corpus: &IssueSet,
    queries: impl IntoIterator<Item = &'q str>,
    scorer: &dyn Scorer,
    spec: &EvalSpec<'_>,
) -> Result<(EvalReport, Vec<QueryResult>), MetricsError> {
    let k_max = spec.ks.iter().copied().max().ok_or(MetricsError::ZeroK)?;
    if spec.ks.contains(&0) {
        return Err(MetricsError::ZeroK);
    }
    let mut jobs = Vec::new();
    let mut excluded = 0;
    let mut dropped = 0;
    for key in queries {
        let q = corpus.get(key).ok_or_else(|| MetricsError::UnknownQuery(key.to_string()))?;
        let mut relevant = BTreeSet::new();
        for link in &q.links {
            match corpus.get(link) {
                Some(other) if other.created < q.created => {
                    relevant.insert(link.clone());
                }
                Some(_) => dropped += 1,
                None => {}
            }
        }
        if relevant.is_empty() {
            excluded += 1;
        } else {
            jobs.push((q, relevant));
        }
    }
    let results: Vec<QueryResult> = jobs
        .into_par_iter()
        .map(|(q, relevant)| {
            let recs = recommend(q, corpus, scorer, spec.filter, k_max)?;
            Ok(QueryResult {
                query: q.key.clone(),
                ranked: recs.into_iter().map(|r| r.key).collect(),
                relevant,
            })
        })
        .collect::<Result<_, MetricsError>>()?;
    let per_k = summarize(&results, spec.ks)?;
    let report = EvalReport {
        dataset: spec.dataset.to_string(),
        features: spec.features,
        scorer: spec.scorer_name.to_string(),
        filter: spec.filter,
        per_k,
        queries: results.len(),
        excluded,
        dropped_forward_links: dropped,
    };
    Ok((report, results))
}
