//! Recommends previously created issues that a newly created issue likely
//! depends on.
//!
//! Two ranker families share one evaluation harness: a TF-IDF baseline with
//! four distance scorers, and a Siamese CNN matcher over pretrained word
//! vectors. Candidates can be restricted to a recent time window before
//! scoring.

pub mod corpus;
pub mod features;
pub mod textprep;
pub mod tfidf;
pub mod embeddings;
pub mod siamese;
pub mod ranker;
pub mod metrics;
pub mod synthetic;
pub mod experiment;
