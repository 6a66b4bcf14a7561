//! Text normalisation: raw issue text to stemmed token sequences.
//!
//! The pipeline runs in a fixed order: lowercase, strip HTML tags and
//! URL-like tokens, turn everything but ASCII letters into spaces, split on
//! whitespace, drop stop words, Porter-stem, then drop stems that are empty
//! or stop words themselves.

pub mod porter;

use std::collections::HashSet;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::corpus::Issue;
use crate::features::{FeatureError, FeatureSet};

/// The shipped stop-word snapshot, one lowercase word per line.
pub const STOP_WORDS_FILE: &str = include_str!("../../data/stopwords_en.txt");

static STOP_WORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    STOP_WORDS_FILE
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect()
});

pub fn stop_words() -> &'static HashSet<&'static str> {
    &STOP_WORDS
}

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.contains(word)
}

/// Ordered, non-empty lowercase ASCII stems.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn extend(&mut self, other: TokenSeq) {
        self.0.extend(other.0);
    }

    pub fn join(&self, sep: &str) -> String {
        self.0.join(sep)
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().map(Into::into).collect())
    }
}

/// Removes `<...>` spans. An unmatched `<` is kept as ordinary text.
fn strip_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        match rest[open..].find('>') {
            Some(close) => {
                out.push_str(&rest[..open]);
                out.push(' ');
                rest = &rest[open + close + 1..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

fn is_url_token(token: &str) -> bool {
    token.starts_with("http") || token.starts_with("www")
}

pub fn preprocess(raw: &str) -> TokenSeq {
    let lowered = raw.to_lowercase();
    let untagged = strip_tags(&lowered);
    let mut letters = String::with_capacity(untagged.len());
    for token in untagged.split_whitespace().filter(|t| !is_url_token(t)) {
        letters.extend(
            token
                .chars()
                .map(|c| if c.is_ascii_lowercase() { c } else { ' ' }),
        );
        letters.push(' ');
    }
    letters
        .split_whitespace()
        .filter(|w| !is_stop_word(w))
        .map(porter::stem)
        .filter(|s| !s.is_empty() && !is_stop_word(s))
        .collect()
}

/// As [`preprocess`], replacing invalid UTF-8 sequences first.
pub fn preprocess_bytes(raw: &[u8]) -> TokenSeq {
    preprocess(&String::from_utf8_lossy(raw))
}

/// Preprocesses the selected textual fields and concatenates them in the
/// fixed order title, description, summary.
pub fn concat_fields(issue: &Issue, features: &FeatureSet) -> Result<TokenSeq, FeatureError> {
    if !features.has_text() {
        return Err(FeatureError::TextRequired);
    }
    let mut out = TokenSeq::new();
    for (selected, text) in [
        (features.title, &issue.title),
        (features.description, &issue.description),
        (features.summary, &issue.summary),
    ] {
        if selected {
            out.extend(preprocess(text));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn words(seq: &TokenSeq) -> Vec<&str> {
        seq.iter().map(String::as_str).collect()
    }

    #[test]
    fn snapshot_contains_the_extra_words() {
        for w in ["e.g", "i.e", "http", "htt", "or", "www", "the", "doesn"] {
            assert!(is_stop_word(w), "{w}");
        }
        assert_eq!(stop_words().len(), 184);
    }

    #[test]
    fn empty_and_all_stop_words() {
        assert!(preprocess("").is_empty());
        assert!(preprocess("The THE the!!!").is_empty());
        assert!(preprocess("   \n\t ").is_empty());
    }

    #[test]
    fn run_family_shares_a_stem_prefix() {
        let out = preprocess("Running runs runner");
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|t| t.starts_with("run")));
        assert_eq!(words(&out), ["run", "run", "runner"]);
    }

    #[test]
    fn tags_urls_numbers_and_punctuation_are_removed() {
        let out = preprocess(
            "<p>See https://issues.apache.org/jira/FLUME-1 and www.example.com, \
             perms 600 on centos/redhat.</p>",
        );
        assert_eq!(words(&out), ["see", "perm", "cento", "redhat"]);
    }

    #[test]
    fn unmatched_angle_bracket_is_text() {
        assert_eq!(words(&preprocess("x < z mapping")), ["x", "z", "map"]);
    }

    #[test]
    fn curly_apostrophes_split_contractions() {
        assert_eq!(words(&preprocess("Flume doesn’t report")), ["flume", "report"]);
    }

    #[test]
    fn invalid_utf8_is_replaced() {
        let out = preprocess_bytes(b"broken \xff\xfe bytes");
        assert_eq!(words(&out), ["broken", "byte"]);
    }

    fn issue(title: &str, description: &str, summary: &str) -> Issue {
        let mut i = Issue::new("K-1", title, Utc.timestamp_opt(0, 0).unwrap());
        i.description = description.into();
        i.summary = summary.into();
        i
    }

    #[test]
    fn concat_single_field() {
        let i = issue("Fix login bug", "ignored text", "");
        let t: FeatureSet = "T".parse().unwrap();
        assert_eq!(concat_fields(&i, &t).unwrap(), preprocess("Fix login bug"));
    }

    #[test]
    fn concat_duplicate_summary_repeats_title() {
        let i = issue("Fix login bug", "", "Fix login bug");
        let ts: FeatureSet = "TS".parse().unwrap();
        let title = preprocess("Fix login bug");
        let mut expected = title.clone();
        expected.extend(title);
        assert_eq!(concat_fields(&i, &ts).unwrap(), expected);
    }

    #[test]
    fn concat_order_is_fixed() {
        let i = issue("alpha", "beta", "gamma");
        let all: FeatureSet = "SDT".parse().unwrap();
        assert_eq!(words(&concat_fields(&i, &all).unwrap()), ["alpha", "beta", "gamma"]);
    }

    #[test]
    fn concat_requires_text() {
        let i = issue("a", "b", "c");
        let scalars: FeatureSet = "C2CU".parse().unwrap();
        assert_eq!(
            concat_fields(&i, &scalars).unwrap_err().to_string(),
            "text feature required"
        );
    }
}
