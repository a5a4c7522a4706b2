//! Pretrained word-embedding tables and the text → sentence-matrix pipeline.
//!
//! Tables are read from the plain-text vector format: an optional
//! `count dim` header followed by one `key x1 ... xd` line per entry.
//! Multiword keys join their words with `_` (`hello_world`), and text is
//! segmented greedily so that the longest known n-gram wins.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Matrix;
use crate::{Error, Result};

pub const DEFAULT_TRUNC_LEN: usize = 100;

/// Half-width of the uniform distribution the unknown-word vector is drawn from.
pub const UNK_RANGE: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    max_ngram: usize,
    unk: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table from in-memory entries. Every vector must have length `dim`.
    pub fn from_entries<I, K>(dim: usize, entries: I, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (K, Vec<f64>)>,
        K: Into<String>,
    {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut table = EmbeddingTable {
            dim,
            entries: HashMap::new(),
            max_ngram: 1,
            unk: unk_vector(dim, seed),
        };
        for (i, (key, vec)) in entries.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(Error::format(
                    i + 1,
                    format!("vector of length {} where {dim} expected", vec.len()),
                ));
            }
            table.insert(key.into(), vec);
        }
        Ok(table)
    }

    fn insert(&mut self, key: String, vec: Vec<f64>) {
        let words = key.split('_').filter(|w| !w.is_empty()).count().max(1);
        self.max_ngram = self.max_ngram.max(words);
        self.entries.insert(key, vec);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest key, counted in `_`-separated words.
    pub fn max_ngram(&self) -> usize {
        self.max_ngram
    }

    pub fn unk_vector(&self) -> &[f64] {
        &self.unk
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    /// Vector for `key`, or the shared unknown-word vector.
    pub fn lookup(&self, key: &str) -> &[f64] {
        self.get(key).unwrap_or(&self.unk)
    }
}

fn unk_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| rng.gen_range(-UNK_RANGE..UNK_RANGE))
        .collect()
}

pub fn load_embeddings(path: impl AsRef<Path>, seed: u64) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), seed).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_embeddings<R: BufRead>(reader: R, seed: u64) -> Result<EmbeddingTable> {
    let mut dim = None;
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            continue;
        };
        let rest: Vec<&str> = parts.collect();

        if entries.is_empty() && dim.is_none() && is_header(key, &rest) {
            dim = rest[0].parse::<usize>().ok().filter(|&d| d > 0);
            if dim.is_none() {
                return Err(Error::format(lineno, "header declares zero dimensions"));
            }
            continue;
        }

        let vec = rest
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::format(lineno, format!("bad vector component {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if vec.is_empty() => {
                return Err(Error::format(lineno, format!("entry {key:?} has no vector")))
            }
            None => dim = Some(vec.len()),
            Some(d) if d != vec.len() => {
                return Err(Error::format(
                    lineno,
                    format!("entry {key:?} has {} components, expected {d}", vec.len()),
                ))
            }
            Some(_) => {}
        }
        entries.push((key.to_string(), vec));
    }

    if entries.is_empty() {
        return Err(Error::format(0, "embedding file contains no entries"));
    }
    EmbeddingTable::from_entries(dim.unwrap_or(0), entries, seed)
}

fn is_header(first: &str, rest: &[&str]) -> bool {
    rest.len() == 1 && first.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok()
}

/// Lowercases, splits on whitespace and strips non-alphanumeric characters
/// from both ends of every token. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Greedy longest-match segmentation against the table's key set.
///
/// At each position the longest n-gram (up to the table's `max_ngram`) that
/// exists as a key is taken; a word with no match at all is emitted alone
/// and later maps to the unknown vector.
pub fn segment_greedy<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Vec<String> {
    let mut keys = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = table.max_ngram().min(tokens.len() - i);
        let mut taken = None;
        for n in (1..=longest).rev() {
            let key = join_key(&tokens[i..i + n]);
            if table.contains(&key) {
                taken = Some((key, n));
                break;
            }
        }
        let (key, n) = taken.unwrap_or_else(|| (tokens[i].as_ref().to_string(), 1));
        keys.push(key);
        i += n;
    }
    keys
}

fn join_key<S: AsRef<str>>(words: &[S]) -> String {
    words
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join("_")
}

/// A fixed-height sentence matrix; rows at or beyond `valid_rows` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceMatrix {
    pub matrix: Matrix,
    pub valid_rows: usize,
}

impl SentenceMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

pub fn to_sentence_matrix(text: &str, table: &EmbeddingTable, trunc_len: usize) -> Result<SentenceMatrix> {
    if trunc_len == 0 {
        return Err(Error::Config("truncation length must be at least 1".into()));
    }
    let keys = segment_greedy(&tokenize(text), table);
    let valid_rows = keys.len().min(trunc_len);
    let mut matrix = Matrix::zeros(trunc_len, table.dim());
    for (r, key) in keys.iter().take(valid_rows).enumerate() {
        matrix.row_mut(r).copy_from_slice(table.lookup(key));
    }
    Ok(SentenceMatrix { matrix, valid_rows })
}
