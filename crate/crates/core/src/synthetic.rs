//! A small corpus that is separable by construction, for sanity-checking
//! the learners without the real exports.
//!
//! Issues come in linked pairs. Both members of a pair carry the same
//! private vocabulary, in the same order, that no other issue uses. A few
//! words from a vocabulary shared by everyone are inserted at random
//! positions as noise. Word vectors are random.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Issue, IssueSet};
use crate::embeddings::EmbeddingTable;

/// Letters with no effect on the stemmer and no stop-word collisions once
/// prefixed.
const ALPHABET: &[u8] = b"bcdfghjkmnpqrtvwxz";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Linked pairs used for training.
    pub train_groups: usize,
    /// Linked pairs created after the training ones.
    pub heldout_groups: usize,
    pub private_vocab: usize,
    pub shared_vocab: usize,
    pub noise_words: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_groups: 100,
            heldout_groups: 25,
            private_vocab: 10,
            shared_vocab: 30,
            noise_words: 2,
            dim: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub issues: IssueSet,
    pub table: EmbeddingTable,
    /// First day of the held-out groups; a chronological split here puts
    /// every training group before the cut.
    pub split_day: u32,
}

fn word(prefix: &str, mut n: usize) -> String {
    let mut s = String::from(prefix);
    for _ in 0..4 {
        s.push(ALPHABET[n % ALPHABET.len()] as char);
        n /= ALPHABET.len();
    }
    s
}

/// Private word `k` of group `g`.
pub fn private_word(spec: &SyntheticSpec, g: usize, k: usize) -> String {
    word("zk", g * spec.private_vocab + k)
}

pub fn shared_word(k: usize) -> String {
    word("qv", k)
}

pub fn separable_corpus(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = spec.train_groups + spec.heldout_groups;
    let base = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    let mut issues = Vec::with_capacity(2 * groups);
    for g in 0..groups {
        let private: Vec<String> = (0..spec.private_vocab).map(|k| private_word(spec, g, k)).collect();
        let keys = [format!("SYN-{}", 2 * g + 1), format!("SYN-{}", 2 * g + 2)];
        for (member, key) in keys.iter().enumerate() {
            let mut words = private.clone();
            for _ in 0..spec.noise_words {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, shared_word(rng.gen_range(0..spec.shared_vocab.max(1))));
            }
            // Uniform over the training period or the held-out period, so a
            // partner is not simply the most recent earlier issue.
            let (from, days) = if g < spec.train_groups {
                (0, spec.train_groups)
            } else {
                (spec.train_groups, spec.heldout_groups)
            };
            let mut offset = from as i64 * 86_400 + rng.gen_range(0..days.max(1) as i64 * 86_400);
            if g == 0 && member == 0 {
                // Anchors day zero of the corpus at `base`.
                offset = 0;
            }
            let created = base + chrono::Duration::seconds(offset);
            let mut issue = Issue::new(key.clone(), words.join(" "), created);
            issue.updated = created + chrono::Duration::days(1);
            issue.links.insert(keys[1 - member].clone());
            issues.push(issue);
        }
    }
    let issues = IssueSet::new(issues).expect("synthetic keys are unique");

    let mut table = EmbeddingTable::new(spec.dim).expect("dim is positive");
    let mut vocab: Vec<String> = (0..groups)
        .flat_map(|g| (0..spec.private_vocab).map(move |k| (g, k)))
        .map(|(g, k)| private_word(spec, g, k))
        .collect();
    vocab.extend((0..spec.shared_vocab).map(shared_word));
    for w in vocab {
        let v: Vec<f32> = (0..spec.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        table.insert(w, &v);
    }
    SyntheticCorpus {
        issues,
        table,
        split_day: spec.train_groups as u32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::chronological_split;
    use crate::textprep::preprocess;

    #[test]
    fn words_survive_preprocessing() {
        let spec = SyntheticSpec::default();
        for n in [0, 1, 17, 18, 999, 1249] {
            let w = word("zk", n);
            assert_eq!(preprocess(&w).into_inner(), [w]);
        }
        for k in 0..spec.shared_vocab {
            let w = shared_word(k);
            assert_eq!(preprocess(&w).into_inner(), [w]);
        }
    }

    #[test]
    fn layout_and_split() {
        let spec = SyntheticSpec::default();
        let c = separable_corpus(&spec);
        assert_eq!(c.issues.len(), 250);
        assert_eq!(c.issues.link_count(), 125);
        let (train, test) = chronological_split(&c.issues, c.split_day);
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 50);
        assert_eq!(train.link_count(), 100);
        assert_eq!(test.link_count(), 25);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec::default();
        let a = separable_corpus(&spec);
        let b = separable_corpus(&spec);
        assert_eq!(a.issues, b.issues);
        assert_eq!(a.table, b.table);
        let c = separable_corpus(&SyntheticSpec { seed: 1, ..spec });
        assert_ne!(a.issues, c.issues);
    }
}
