//! Pretrained word vectors in the plain text format shared by GloVe,
//! word2vec and FastText (`.vec`), and fixed-length encoding of token
//! sequences against them.
//!
//! A file is an optional `count dim` header followed by one line per word:
//! the word, then `dim` space-separated reals. Subword information is not
//! used; FastText files are read as plain word vectors.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use log::warn;
use thiserror::Error;

use crate::textprep::{self, porter, TokenSeq};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
const FIRST_WORD_ID: u32 = 2;

pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} components, found {found}")]
    DimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Porter-stem file tokens so they match preprocessed text. Tokens that
    /// preprocessing could never produce (digits, punctuation, stop words)
    /// are skipped. When several surface forms share a stem the first one
    /// in the file is kept.
    pub stem_vocab: bool,
    /// Keep only these (post-stemming) tokens.
    pub keep: Option<HashSet<String>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub stored: usize,
    /// Tokens appearing more than once verbatim; the last occurrence won.
    pub duplicates: usize,
    /// Distinct surface forms that stemmed onto an already stored token.
    pub stem_collisions: usize,
    pub skipped: usize,
}

/// Token to vector map. Padding and out-of-vocabulary positions both encode
/// as zero vectors but keep distinct ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    /// Inserts or overwrites a word vector. Panics if `vector.len() != dim`.
    pub fn insert(&mut self, word: impl Into<String>, vector: &[f32]) {
        assert_eq!(vector.len(), self.dim, "vector length must equal dim");
        let word = word.into();
        match self.index.get(&word) {
            Some(&id) => {
                let row = (id - FIRST_WORD_ID) as usize;
                self.data[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector);
            }
            None => {
                let id = FIRST_WORD_ID + self.words.len() as u32;
                self.index.insert(word.clone(), id);
                self.words.push(word);
                self.data.extend_from_slice(vector);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Vector for an id; pad and OOV ids give `None` (they are zero).
    pub fn row(&self, id: u32) -> Option<&[f32]> {
        if id < FIRST_WORD_ID {
            return None;
        }
        let row = (id - FIRST_WORD_ID) as usize;
        self.data.get(row * self.dim..(row + 1) * self.dim)
    }

    /// Stored words and their vectors in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.words
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(w, v)| (w.as_str(), v))
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index.get(word).and_then(|&id| self.row(id))
    }
}

pub fn load_vectors(
    path: impl AsRef<Path>,
    dim: usize,
    options: &LoadOptions,
) -> Result<(EmbeddingTable, LoadStats), EmbeddingError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EmbeddingError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_vectors(file, dim, options)
}

pub fn read_vectors<R: Read>(
    reader: R,
    dim: usize,
    options: &LoadOptions,
) -> Result<(EmbeddingTable, LoadStats), EmbeddingError> {
    let mut table = EmbeddingTable::new(dim)?;
    let mut stats = LoadStats::default();
    // stored token -> surface form it came from
    let mut origin: HashMap<String, String> = HashMap::new();
    let mut values = Vec::with_capacity(dim);

    for (n, line) in BufReader::new(reader).split(b'\n').enumerate() {
        let line_no = n + 1;
        let bytes = line.map_err(|e| EmbeddingError::Io {
            path: "<reader>".into(),
            source: e,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let mut fields = text.split_ascii_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        stats.lines += 1;
        let rest: Vec<&str> = fields.collect();

        if line_no == 1 && rest.len() == 1 {
            if let (Ok(_), Ok(header_dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                if header_dim != dim {
                    return Err(EmbeddingError::DimMismatch {
                        line: 1,
                        expected: dim,
                        found: header_dim,
                    });
                }
                continue;
            }
        }
        if rest.len() != dim {
            return Err(EmbeddingError::DimMismatch {
                line: line_no,
                expected: dim,
                found: rest.len(),
            });
        }
        values.clear();
        for field in &rest {
            let v: f32 = field.parse().map_err(|_| EmbeddingError::Malformed {
                line: line_no,
                message: format!("invalid component {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(EmbeddingError::Malformed {
                    line: line_no,
                    message: format!("non-finite component {field:?}"),
                });
            }
            values.push(v);
        }

        let token = if options.stem_vocab {
            let lower = word.to_lowercase();
            if !lower.bytes().all(|b| b.is_ascii_lowercase()) || textprep::is_stop_word(&lower) {
                stats.skipped += 1;
                continue;
            }
            let stemmed = porter::stem(&lower);
            if stemmed.is_empty() || textprep::is_stop_word(&stemmed) {
                stats.skipped += 1;
                continue;
            }
            stemmed
        } else {
            word.to_string()
        };
        if options.keep.as_ref().is_some_and(|k| !k.contains(&token)) {
            stats.skipped += 1;
            continue;
        }

        match origin.get(&token) {
            Some(src) if src == word => {
                warn!("line {line_no}: duplicate vector for {word:?}; keeping the last");
                stats.duplicates += 1;
                table.insert(token, &values);
            }
            Some(_) => stats.stem_collisions += 1,
            None => {
                origin.insert(token.clone(), word.to_string());
                table.insert(token, &values);
            }
        }
    }
    stats.stored = table.len();
    Ok((table, stats))
}

/// Writes the table in the plain text format, without a header. Values
/// are printed in shortest round-trip form.
pub fn write_vectors<W: std::io::Write>(table: &EmbeddingTable, mut out: W) -> std::io::Result<()> {
    for (word, v) in table.iter() {
        write!(out, "{word}")?;
        for x in v {
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// A `(max_len x dim)` row-major matrix plus the ids it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSeq {
    pub ids: Vec<u32>,
    pub values: Vec<f64>,
    pub dim: usize,
    pub true_len: usize,
    pub oov_count: usize,
}

impl EncodedSeq {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.values[position * self.dim..(position + 1) * self.dim]
    }

    /// An all-padding sequence.
    pub fn padding(max_len: usize, dim: usize) -> Self {
        EncodedSeq {
            ids: vec![PAD_ID; max_len],
            values: vec![0.0; max_len * dim],
            dim,
            true_len: 0,
            oov_count: 0,
        }
    }

    /// Wraps an explicit matrix; every row counts as a known token.
    pub fn from_matrix(values: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && values.len().is_multiple_of(dim));
        let len = values.len() / dim;
        EncodedSeq {
            ids: vec![FIRST_WORD_ID; len],
            values,
            dim,
            true_len: len,
            oov_count: 0,
        }
    }
}

/// Maps the first `max_len` tokens to their vectors and right-pads.
pub fn encode(tokens: &TokenSeq, table: &EmbeddingTable, max_len: usize) -> EncodedSeq {
    let dim = table.dim();
    let mut out = EncodedSeq::padding(max_len, dim);
    for (pos, token) in tokens.iter().take(max_len).enumerate() {
        let id = table.id(token);
        out.ids[pos] = id;
        match table.row(id) {
            Some(v) => {
                for (dst, &src) in out.values[pos * dim..(pos + 1) * dim].iter_mut().zip(v) {
                    *dst = f64::from(src);
                }
            }
            None => out.oov_count += 1,
        }
        out.true_len = pos + 1;
    }
    out
}
