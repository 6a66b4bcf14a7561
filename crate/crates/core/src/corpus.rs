//! Issue exports, the undirected link graph, chronological splitting and
//! labelled training pairs.
//!
//! Exports are JSON lines, one issue per line:
//!
//! ```text
//! {"key":"FLUME-12","title":"...","description":"...","summary":"...",
//!  "created":"2011-06-30T19:05:26+00:00","updated":"2011-07-02T10:00:00Z",
//!  "links":["FLUME-9"]}
//! ```
//!
//! `key`, `title` and `created` are required. Timestamps carry a zone and are
//! normalised to UTC at second resolution.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate issue key {0:?}")]
    DuplicateKey(String),
    #[error("no links in training split")]
    NoPositivePairs,
    #[error("training split is empty")]
    EmptyTrain,
    #[error("negative ratio must be a positive finite number, got {0}")]
    InvalidRatio(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub key: String,
    pub title: String,
    pub description: String,
    pub summary: String,
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
    pub links: BTreeSet<String>,
}

impl Issue {
    /// Convenience constructor for issues without description, summary or links.
    pub fn new(key: impl Into<String>, title: impl Into<String>, created: DateTime<Utc>) -> Self {
        Issue {
            key: key.into(),
            title: title.into(),
            description: String::new(),
            summary: String::new(),
            created,
            updated: created,
            links: BTreeSet::new(),
        }
    }
}

/// Absolute gap between the two creation dates, in fractional days.
pub fn time_gap_cc(x: &Issue, y: &Issue) -> f64 {
    seconds_between(x.created, y.created).abs() / SECONDS_PER_DAY
}

/// Absolute gap between the query's creation date and the candidate's last
/// update, in fractional days. Not symmetric in its arguments.
pub fn time_gap_cu(query: &Issue, candidate: &Issue) -> f64 {
    seconds_between(query.created, candidate.updated).abs() / SECONDS_PER_DAY
}

fn seconds_between(a: DateTime<Utc>, b: DateTime<Utc>) -> f64 {
    (a.timestamp() - b.timestamp()) as f64
}

/// Issues ordered by `(created, key)` with a symmetric link graph.
#[derive(Debug, Clone, PartialEq)]
pub struct IssueSet {
    issues: Vec<Issue>,
    index: HashMap<String, usize>,
    day_zero: DateTime<Utc>,
    dropped_links: usize,
}

impl IssueSet {
    /// Builds a set from arbitrary issues: sorts them, drops self links and
    /// links to keys outside the set, and takes the union of both link
    /// directions.
    pub fn new(issues: Vec<Issue>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(issues.len());
        for issue in &issues {
            if !seen.insert(issue.key.as_str()) {
                return Err(CorpusError::DuplicateKey(issue.key.clone()));
            }
        }
        let day_zero = issues
            .iter()
            .map(|i| i.created)
            .min()
            .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
        Ok(Self::assemble(issues, day_zero))
    }

    fn assemble(mut issues: Vec<Issue>, day_zero: DateTime<Utc>) -> Self {
        issues.sort_by(|a, b| a.created.cmp(&b.created).then_with(|| a.key.cmp(&b.key)));
        let index: HashMap<String, usize> = issues
            .iter()
            .enumerate()
            .map(|(i, issue)| (issue.key.clone(), i))
            .collect();

        let mut dropped = 0;
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for (i, issue) in issues.iter().enumerate() {
            for other in &issue.links {
                match index.get(other) {
                    Some(&j) if j != i => edges.push((i, j)),
                    Some(_) => {}
                    None => dropped += 1,
                }
            }
        }
        for issue in &mut issues {
            issue.links.clear();
        }
        for (i, j) in edges {
            let (ki, kj) = (issues[i].key.clone(), issues[j].key.clone());
            issues[i].links.insert(kj);
            issues[j].links.insert(ki);
        }

        IssueSet {
            issues,
            index,
            day_zero,
            dropped_links: dropped,
        }
    }

    pub fn issues(&self) -> &[Issue] {
        &self.issues
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Issue> {
        self.index.get(key).map(|&i| &self.issues[i])
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Creation time of the earliest issue of the dataset this set came from.
    pub fn day_zero(&self) -> DateTime<Utc> {
        self.day_zero
    }

    /// Directed link mentions dropped because they named keys outside the set.
    pub fn dropped_links(&self) -> usize {
        self.dropped_links
    }

    /// Whole days elapsed between `day_zero` and the issue's creation.
    pub fn day_of(&self, issue: &Issue) -> i64 {
        (issue.created.timestamp() - self.day_zero.timestamp()).div_euclid(86_400)
    }

    /// Number of undirected links.
    pub fn link_count(&self) -> usize {
        self.issues.iter().map(|i| i.links.len()).sum::<usize>() / 2
    }

    /// Undirected links as `(earlier, later)` index pairs in set order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(self.link_count());
        for (i, issue) in self.issues.iter().enumerate() {
            for other in &issue.links {
                let j = self.index[other];
                if i < j {
                    edges.push((i, j));
                }
            }
        }
        edges.sort_unstable();
        edges
    }

    pub fn is_linked(&self, a: &str, b: &str) -> bool {
        self.get(a).is_some_and(|i| i.links.contains(b))
    }

    /// Keeps the issues matching `keep`; links leaving the subset are removed.
    pub fn subset(&self, mut keep: impl FnMut(&Issue) -> bool) -> IssueSet {
        let issues: Vec<Issue> = self.issues.iter().filter(|i| keep(i)).cloned().collect();
        let mut subset = Self::assemble(issues, self.day_zero);
        subset.dropped_links = 0;
        subset
    }
}

#[derive(Deserialize)]
struct RawIssue {
    key: String,
    title: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    summary: Option<String>,
    created: String,
    #[serde(default)]
    updated: Option<String>,
    #[serde(default)]
    links: Option<Vec<String>>,
}

/// Parses an ISO-8601 timestamp with zone and returns it in UTC, truncated
/// to whole seconds. Accepts RFC 3339 as well as the `+0000` offset style
/// used by Jira exports.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    let parsed = DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z"))
        .or_else(|_| DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f%z"))
        .ok()?;
    Utc.timestamp_opt(parsed.timestamp(), 0).single()
}

fn parse_record(line: usize, text: &str) -> Result<Issue, CorpusError> {
    let malformed = |message: String| CorpusError::Malformed { line, message };
    let raw: RawIssue = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    if raw.key.trim().is_empty() {
        return Err(malformed("empty issue key".into()));
    }
    let created = parse_timestamp(&raw.created)
        .ok_or_else(|| malformed(format!("invalid created timestamp {:?}", raw.created)))?;
    let updated = match raw.updated.as_deref() {
        None | Some("") => created,
        Some(u) => {
            parse_timestamp(u).ok_or_else(|| malformed(format!("invalid updated timestamp {u:?}")))?
        }
    };
    if updated < created {
        return Err(malformed(format!(
            "updated {updated} precedes created {created}"
        )));
    }
    let links = raw
        .links
        .unwrap_or_default()
        .into_iter()
        .filter(|l| !l.is_empty() && *l != raw.key)
        .collect();
    Ok(Issue {
        key: raw.key,
        title: raw.title,
        description: raw.description.unwrap_or_default(),
        summary: raw.summary.unwrap_or_default(),
        created,
        updated,
        links,
    })
}

/// Reads a JSON-lines export. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_issues<R: Read>(reader: R) -> Result<IssueSet, CorpusError> {
    let reader = BufReader::new(reader);
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.split(b'\n').enumerate() {
        let line_no = n + 1;
        let bytes = line.map_err(|e| CorpusError::Io {
            path: "<reader>".into(),
            source: e,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        if text.trim().is_empty() {
            continue;
        }
        let issue = parse_record(line_no, &text)?;
        if !seen.insert(issue.key.clone()) {
            return Err(CorpusError::DuplicateKey(issue.key));
        }
        issues.push(issue);
    }
    IssueSet::new(issues)
}

pub fn load_issues(path: impl AsRef<Path>) -> Result<IssueSet, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_issues(file)
}

/// Partitions by creation day: issues created in the first `split_day` days
/// (counted from `day_zero`) train, the rest test. Links crossing the cut are
/// removed from both halves.
pub fn chronological_split(set: &IssueSet, split_day: u32) -> (IssueSet, IssueSet) {
    let cut = i64::from(split_day);
    let train = set.subset(|i| set.day_of(i) < cut);
    let test = set.subset(|i| set.day_of(i) >= cut);
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: String,
    pub b: String,
    pub label: u8,
}

/// Which unlinked pairs may serve as negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePool {
    /// Every pair of issues without a link between them.
    #[default]
    AnyUnlinked,
    /// Only pairs where at least one side has no links at all.
    Lonely,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSampling {
    pub neg_ratio: f64,
    pub seed: u64,
    #[serde(default)]
    pub pool: NegativePool,
}

impl Default for PairSampling {
    fn default() -> Self {
        PairSampling {
            neg_ratio: 1.0,
            seed: 0,
            pool: NegativePool::AnyUnlinked,
        }
    }
}

/// Emits every link once as `(earlier, later, 1)` followed by
/// `round(neg_ratio * positives)` negatives drawn without replacement from
/// eligible unlinked pairs (capped at what exists).
pub fn generate_training_pairs(
    train: &IssueSet,
    sampling: &PairSampling,
) -> Result<Vec<LabeledPair>, CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::EmptyTrain);
    }
    if !sampling.neg_ratio.is_finite() || sampling.neg_ratio <= 0.0 {
        return Err(CorpusError::InvalidRatio(sampling.neg_ratio));
    }
    let edges = train.edges();
    if edges.is_empty() {
        return Err(CorpusError::NoPositivePairs);
    }
    let issues = train.issues();
    let mut pairs: Vec<LabeledPair> = edges
        .iter()
        .map(|&(i, j)| LabeledPair {
            a: issues[i].key.clone(),
            b: issues[j].key.clone(),
            label: 1,
        })
        .collect();

    let n = issues.len() as u64;
    let all_pairs = n * (n - 1) / 2;
    let linked_issues = issues.iter().filter(|i| !i.links.is_empty()).count() as u64;
    let available = match sampling.pool {
        NegativePool::AnyUnlinked => all_pairs - edges.len() as u64,
        NegativePool::Lonely => all_pairs - linked_issues * linked_issues.saturating_sub(1) / 2,
    };
    let wanted = ((sampling.neg_ratio * edges.len() as f64).round() as u64).min(available);

    let eligible = |i: usize, j: usize| -> bool {
        match sampling.pool {
            NegativePool::AnyUnlinked => !issues[i].links.contains(&issues[j].key),
            NegativePool::Lonely => issues[i].links.is_empty() || issues[j].links.is_empty(),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let negatives: Vec<(usize, usize)> = if wanted * 2 <= available {
        // Sparse regime: rejection sampling over the triangle.
        let mut chosen = HashSet::with_capacity(wanted as usize);
        let mut out = Vec::with_capacity(wanted as usize);
        while (out.len() as u64) < wanted {
            let x = rng.gen_range(0..issues.len());
            let y = rng.gen_range(0..issues.len());
            if x == y {
                continue;
            }
            let (i, j) = (x.min(y), x.max(y));
            if eligible(i, j) && chosen.insert((i, j)) {
                out.push((i, j));
            }
        }
        out
    } else {
        let mut all = Vec::with_capacity(available as usize);
        for i in 0..issues.len() {
            for j in i + 1..issues.len() {
                if eligible(i, j) {
                    all.push((i, j));
                }
            }
        }
        index::sample(&mut rng, all.len(), wanted as usize)
            .into_iter()
            .map(|k| all[k])
            .collect()
    };

    pairs.extend(negatives.into_iter().map(|(i, j)| LabeledPair {
        a: issues[i].key.clone(),
        b: issues[j].key.clone(),
        label: 0,
    }));
    Ok(pairs)
}
