//! TF-IDF vectors with max-normalised term frequency and the four distance
//! scorers of the traditional baseline.
//!
//! `tf(w, d) = f(w, d) / max_w' f(w', d)` and `idf(w) = ln(|D| / df(w))`, with
//! no smoothing: a term present in every training document weighs zero.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Issue;
use crate::features::FeatureSet;
use crate::textprep::{self, TokenSeq};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TfidfError {
    #[error("cannot fit TF-IDF on an empty corpus")]
    EmptyCorpus,
    #[error("cannot fit TF-IDF: every document is empty")]
    AllDocumentsEmpty,
    #[error("text feature required")]
    TextRequired,
    #[error("unknown metric {0:?} (expected cosine, euclidean, manhattan or chebyshev)")]
    UnknownMetric(String),
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn new() -> Self {
        SparseVec::default()
    }

    /// Builds from unordered pairs; duplicate indices are summed and zeros
    /// dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut entries: Vec<(u32, f64)> = pairs.into_iter().collect();
        entries.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += w,
                _ => merged.push((i, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        SparseVec { entries: merged }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseVec::from_pairs(values.iter().enumerate().map(|(i, &w)| (i as u32, w)))
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut sum = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    sum += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        sum
    }

    pub fn scaled(&self, factor: f64) -> SparseVec {
        SparseVec::from_pairs(self.entries.iter().map(|&(i, w)| (i, w * factor)))
    }

    /// Appends `other` with its indices shifted by `offset`.
    fn append_shifted(&mut self, other: &SparseVec, offset: u32) {
        debug_assert!(self.entries.last().is_none_or(|&(i, _)| i < offset));
        self.entries
            .extend(other.entries.iter().map(|&(i, w)| (i + offset, w)));
    }

    /// Visits the union of non-zero coordinates as `(u_i, v_i)`.
    fn zip_union(&self, other: &SparseVec, mut f: impl FnMut(f64, f64)) {
        let (a, b) = (&self.entries, &other.entries);
        let (mut p, mut q) = (0, 0);
        while p < a.len() || q < b.len() {
            match (a.get(p), b.get(q)) {
                (Some(&(i, x)), Some(&(j, y))) if i == j => {
                    f(x, y);
                    p += 1;
                    q += 1;
                }
                (Some(&(i, x)), Some(&(j, _))) if i < j => {
                    f(x, 0.0);
                    p += 1;
                }
                (Some(&(_, x)), None) => {
                    f(x, 0.0);
                    p += 1;
                }
                (_, Some(&(_, y))) => {
                    f(0.0, y);
                    q += 1;
                }
                (None, None) => unreachable!(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Cosine,
        Metric::Euclidean,
        Metric::Manhattan,
        Metric::Chebyshev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Chebyshev => "chebyshev",
        }
    }

    pub fn is_similarity(self) -> bool {
        self == Metric::Cosine
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = TfidfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            "chebyshev" => Ok(Metric::Chebyshev),
            _ => Err(TfidfError::UnknownMetric(s.to_string())),
        }
    }
}

/// Result of [`distance`]: a similarity for cosine, a distance otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub value: f64,
    /// Set when cosine was asked of a zero vector and 0 was returned.
    pub degenerate: bool,
}

pub fn distance(u: &SparseVec, v: &SparseVec, metric: Metric) -> Distance {
    let value = match metric {
        Metric::Cosine => {
            let denom = u.norm() * v.norm();
            if denom == 0.0 {
                return Distance {
                    value: 0.0,
                    degenerate: true,
                };
            }
            u.dot(v) / denom
        }
        Metric::Euclidean => {
            let mut sum = 0.0;
            u.zip_union(v, |x, y| sum += (x - y) * (x - y));
            sum.sqrt()
        }
        Metric::Manhattan => {
            let mut sum = 0.0;
            u.zip_union(v, |x, y| sum += (x - y).abs());
            sum
        }
        Metric::Chebyshev => {
            let mut max: f64 = 0.0;
            u.zip_union(v, |x, y| max = max.max((x - y).abs()));
            max
        }
    };
    Distance {
        value,
        degenerate: false,
    }
}

/// Higher-is-better score: the similarity for cosine, the negated distance
/// for the others.
pub fn score(u: &SparseVec, v: &SparseVec, metric: Metric) -> f64 {
    let d = distance(u, v, metric).value;
    if metric.is_similarity() {
        d
    } else {
        -d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfidfModelRepr")]
pub struct TfidfModel {
    terms: Vec<String>,
    #[serde(skip)]
    vocab: HashMap<String, u32>,
    idf: Vec<f64>,
    doc_count: usize,
}

#[derive(Deserialize)]
struct TfidfModelRepr {
    terms: Vec<String>,
    idf: Vec<f64>,
    doc_count: usize,
}

impl From<TfidfModelRepr> for TfidfModel {
    fn from(r: TfidfModelRepr) -> Self {
        let vocab = r
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        TfidfModel {
            terms: r.terms,
            vocab,
            idf: r.idf,
            doc_count: r.doc_count,
        }
    }
}

impl TfidfModel {
    pub fn fit(docs: &[TokenSeq]) -> Result<Self, TfidfError> {
        if docs.is_empty() {
            return Err(TfidfError::EmptyCorpus);
        }
        if docs.iter().all(TokenSeq::is_empty) {
            return Err(TfidfError::AllDocumentsEmpty);
        }
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut terms: Vec<String> = Vec::new();
        let mut df: Vec<usize> = Vec::new();
        let mut seen_in_doc: Vec<usize> = Vec::new();
        for (d, doc) in docs.iter().enumerate() {
            for token in doc {
                let id = *vocab.entry(token.clone()).or_insert_with(|| {
                    terms.push(token.clone());
                    df.push(0);
                    seen_in_doc.push(usize::MAX);
                    (terms.len() - 1) as u32
                }) as usize;
                if seen_in_doc[id] != d {
                    seen_in_doc[id] = d;
                    df[id] += 1;
                }
            }
        }
        let n = docs.len() as f64;
        let idf = df.iter().map(|&f| (n / f as f64).ln()).collect();
        Ok(TfidfModel {
            terms,
            vocab,
            idf,
            doc_count: docs.len(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.vocab.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i as usize])
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn vectorize(&self, doc: &TokenSeq) -> SparseVec {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for token in doc {
            if let Some(&id) = self.vocab.get(token.as_str()) {
                *counts.entry(id).or_default() += 1;
            }
        }
        // The max-frequency normaliser counts in-vocabulary terms only.
        let max = counts.values().copied().max().unwrap_or(0);
        if max == 0 {
            return SparseVec::new();
        }
        SparseVec::from_pairs(
            counts
                .into_iter()
                .map(|(id, f)| (id, f as f64 / max as f64 * self.idf[id as usize])),
        )
    }

    /// Diagnostic dump: `{"terms": [...], "idf": [...], "doc_count": n}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "terms": self.terms,
            "idf": self.idf,
            "doc_count": self.doc_count,
        })
    }
}

/// How the selected textual fields become one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldLayout {
    /// One token stream `T ++ D ++ S`, one model.
    #[default]
    Concatenated,
    /// One model per field; the per-field vectors are laid side by side.
    Blocks,
}

/// TF-IDF representation of issues under a feature selection. Time-gap
/// features in the selection do not take part; only text is vectorised.
#[derive(Debug, Clone)]
pub struct IssueVectorizer {
    features: FeatureSet,
    layout: FieldLayout,
    models: Vec<(FeatureSet, TfidfModel)>,
}

impl IssueVectorizer {
    pub fn fit<'a>(
        issues: impl IntoIterator<Item = &'a Issue>,
        features: FeatureSet,
        layout: FieldLayout,
    ) -> Result<Self, TfidfError> {
        if !features.has_text() {
            return Err(TfidfError::TextRequired);
        }
        let issues: Vec<&Issue> = issues.into_iter().collect();
        let groups: Vec<FeatureSet> = match layout {
            FieldLayout::Concatenated => vec![features.text_only()],
            FieldLayout::Blocks => features
                .text_only()
                .members()
                .map(|f| FeatureSet::from_features(&[f]))
                .collect(),
        };
        let mut models = Vec::with_capacity(groups.len());
        for group in groups {
            let docs: Vec<TokenSeq> = issues
                .iter()
                .map(|i| textprep::concat_fields(i, &group).expect("group has text"))
                .collect();
            let model = match TfidfModel::fit(&docs) {
                // A field empty across the whole corpus contributes no block.
                Err(TfidfError::AllDocumentsEmpty) if layout == FieldLayout::Blocks => continue,
                other => other?,
            };
            models.push((group, model));
        }
        if models.is_empty() {
            return Err(TfidfError::AllDocumentsEmpty);
        }
        Ok(IssueVectorizer {
            features,
            layout,
            models,
        })
    }

    pub fn features(&self) -> FeatureSet {
        self.features
    }

    pub fn layout(&self) -> FieldLayout {
        self.layout
    }

    pub fn vectorize(&self, issue: &Issue) -> SparseVec {
        let mut out = SparseVec::new();
        let mut offset = 0u32;
        for (group, model) in &self.models {
            let tokens = textprep::concat_fields(issue, group).expect("group has text");
            out.append_shifted(&model.vectorize(&tokens), offset);
            offset += model.vocab_size() as u32;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(words: &[&str]) -> TokenSeq {
        words.iter().copied().collect()
    }

    #[test]
    fn hand_computed_idf() {
        let model = TfidfModel::fit(&[seq(&["a", "b"]), seq(&["a"])]).unwrap();
        assert_eq!(model.idf("a"), Some(0.0));
        assert_eq!(model.idf("b"), Some(2f64.ln()));
        assert_eq!(model.idf("c"), None);
        assert_eq!(model.doc_count(), 2);
    }

    #[test]
    fn single_document_has_zero_idf() {
        let model = TfidfModel::fit(&[seq(&["x", "y", "x"])]).unwrap();
        assert_eq!(model.idf("x"), Some(0.0));
        assert_eq!(model.idf("y"), Some(0.0));
    }

    #[test]
    fn fit_errors() {
        assert_eq!(TfidfModel::fit(&[]), Err(TfidfError::EmptyCorpus));
        assert_eq!(
            TfidfModel::fit(&[seq(&[]), seq(&[])]),
            Err(TfidfError::AllDocumentsEmpty)
        );
    }

    #[test]
    fn max_normalised_weights() {
        let model = TfidfModel::fit(&[seq(&["a", "b"]), seq(&["a"])]).unwrap();
        let v = model.vectorize(&seq(&["a", "a", "b"]));
        let b = model.index_of("b").unwrap();
        let a = model.index_of("a").unwrap();
        assert_eq!(v.get(a), 0.0);
        assert_eq!(v.get(b), 0.5 * 2f64.ln());
        // Zero weights are not stored.
        assert_eq!(v.nnz(), 1);

        assert!(model.vectorize(&seq(&[])).is_zero());
        assert!(model.vectorize(&seq(&["zzz"])).is_zero());
        let single = model.vectorize(&seq(&["b", "b", "b"]));
        assert_eq!(single.get(b), 2f64.ln());
    }

    #[test]
    fn hand_evaluated_distances() {
        let u = SparseVec::from_dense(&[1.0, 0.0]);
        let v = SparseVec::from_dense(&[0.0, 1.0]);
        assert_eq!(distance(&u, &v, Metric::Cosine).value, 0.0);
        assert_eq!(distance(&u, &v, Metric::Euclidean).value, 2f64.sqrt());
        assert_eq!(distance(&u, &v, Metric::Manhattan).value, 2.0);
        assert_eq!(distance(&u, &v, Metric::Chebyshev).value, 1.0);

        let u = SparseVec::from_dense(&[3.0, 4.0]);
        let z = SparseVec::from_dense(&[0.0, 0.0]);
        assert_eq!(distance(&u, &z, Metric::Euclidean).value, 5.0);
        assert_eq!(distance(&u, &z, Metric::Manhattan).value, 7.0);
        assert_eq!(distance(&u, &z, Metric::Chebyshev).value, 4.0);
    }

    #[test]
    fn identity() {
        let u = SparseVec::from_dense(&[0.2, 0.0, 1.5]);
        assert!((distance(&u, &u, Metric::Cosine).value - 1.0).abs() < 1e-12);
        for m in [Metric::Euclidean, Metric::Manhattan, Metric::Chebyshev] {
            assert_eq!(distance(&u, &u, m).value, 0.0);
        }
    }

    #[test]
    fn zero_cosine_is_flagged() {
        let z = SparseVec::new();
        let d = distance(&z, &z, Metric::Cosine);
        assert_eq!(d.value, 0.0);
        assert!(d.degenerate);
    }

    #[test]
    fn scores_are_higher_is_better() {
        let u = SparseVec::from_dense(&[1.0, 0.0]);
        let near = SparseVec::from_dense(&[0.9, 0.1]);
        let far = SparseVec::from_dense(&[0.0, 1.0]);
        for m in Metric::ALL {
            assert!(score(&u, &near, m) > score(&u, &far, m), "{m}");
        }
    }

    #[test]
    fn metric_names_parse() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("hamming".parse::<Metric>().is_err());
    }

    #[test]
    fn block_layout_offsets_fields() {
        use chrono::{TimeZone, Utc};
        let mut a = Issue::new("A", "login crash", Utc.timestamp_opt(0, 0).unwrap());
        a.description = "crash on start".into();
        let mut b = Issue::new("B", "memory leak", Utc.timestamp_opt(1, 0).unwrap());
        b.description = "leak in login".into();
        let td: FeatureSet = "TD".parse().unwrap();
        let blocks = IssueVectorizer::fit([&a, &b], td, FieldLayout::Blocks).unwrap();
        let concat = IssueVectorizer::fit([&a, &b], td, FieldLayout::Concatenated).unwrap();
        // Title vocab {login, crash, memori, leak}; description vocab
        // {crash, start, leak, login}: blocks keep "login" twice.
        assert_eq!(blocks.models.len(), 2);
        assert_eq!(concat.models.len(), 1);
        assert_eq!(blocks.vectorize(&a).nnz(), 4);
        assert!(IssueVectorizer::fit([&a], "C2".parse().unwrap(), FieldLayout::Concatenated).is_err());
    }

    #[test]
    fn serde_round_trip_restores_lookup() {
        let model = TfidfModel::fit(&[seq(&["a", "b"]), seq(&["a"])]).unwrap();
        let back: TfidfModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.index_of("b"), Some(1));
    }
}
