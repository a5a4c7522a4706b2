//! Small planted datasets for tests, demos and smoke runs: LETOR-style
//! feature groups whose grades follow a hidden linear score, and raw-text
//! collections whose relevant documents share the query's topic words.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DocContent, Document, QueryGroup, QueryId};
use crate::embeddings::EmbeddingTable;
use crate::ranker::Grade;
use crate::{Error, Result};

/// Feature groups for query ids `1..=n_queries`. Each document's grade is
/// the bucket of a hidden linear score plus a little noise, so a learned
/// ranker can beat chance but not trivially reach 1.0.
pub fn planted_letor(n_queries: u32, docs_per_query: usize, dim: usize, seed: u64) -> Vec<QueryGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (1..=n_queries)
        .map(|q| {
            let docs = (0..docs_per_query)
                .map(|i| {
                    let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
                    // standardised hidden score: x is uniform, so each term has variance w^2 / 12
                    let spread = (weights.iter().map(|w| w * w).sum::<f64>() / 12.0).sqrt().max(1e-9);
                    let z = x.iter().zip(&weights).map(|(a, w)| (a - 0.5) * w).sum::<f64>() / spread
                        + rng.gen_range(-0.2..0.2);
                    let grade = match z {
                        z if z > 0.7 => Grade::DEFINITE,
                        z if z > -0.3 => Grade::PARTIAL,
                        _ => Grade::NON_RELEVANT,
                    };
                    Document {
                        doc_id: format!("{q}-{i}"),
                        content: DocContent::Features(x),
                        grade,
                    }
                })
                .collect();
            QueryGroup {
                query_id: q,
                query_text: None,
                docs,
            }
        })
        .collect()
}

/// Shape of a planted text collection.
#[derive(Clone, Debug)]
pub struct TextSpec {
    pub n_queries: u32,
    /// Documents per grade (definite, partial, non-relevant) for every query.
    pub per_grade: [usize; 3],
    pub words_per_topic: usize,
    pub dim: usize,
    /// Half-width of the uniform word-vector entries.
    pub scale: f64,
    pub seed: u64,
}

impl Default for TextSpec {
    fn default() -> Self {
        TextSpec {
            n_queries: 6,
            per_grade: [1, 1, 2],
            words_per_topic: 4,
            dim: 4,
            scale: 1.0,
            seed: 0,
        }
    }
}

/// Word vectors plus judged text groups. Query `k` is built from topic `k`'s
/// words; definitely relevant documents use only that topic, partially
/// relevant ones mix in a foreign topic, and non-relevant ones avoid it.
#[derive(Clone, Debug)]
pub struct SyntheticText {
    pub vectors: Vec<(String, Vec<f64>)>,
    pub groups: Vec<QueryGroup>,
}

fn topic_word(topic: usize, j: usize) -> String {
    format!("t{topic}w{j}")
}

pub fn planted_text(spec: &TextSpec) -> SyntheticText {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topics = spec.n_queries as usize + 1;
    let mut vectors = Vec::new();
    for t in 0..topics {
        for j in 0..spec.words_per_topic {
            let v = (0..spec.dim).map(|_| spec.scale * rng.gen_range(-1.0..1.0)).collect();
            vectors.push((topic_word(t, j), v));
        }
    }
    // one phrase entry so n-gram lookup is exercised
    let phrase = (0..spec.dim).map(|_| spec.scale * rng.gen_range(-1.0..1.0)).collect();
    vectors.push((format!("{}_{}", topic_word(0, 0), topic_word(0, 1)), phrase));

    let words = |rng: &mut ChaCha8Rng, topic: usize, n: usize| -> Vec<String> {
        (0..n).map(|_| topic_word(topic, rng.gen_range(0..spec.words_per_topic))).collect()
    };
    let groups = (0..spec.n_queries as usize)
        .map(|k| {
            let query = (0..spec.words_per_topic.min(2)).map(|j| topic_word(k, j)).collect::<Vec<_>>().join(" ");
            let mut docs = Vec::new();
            for (g, &count) in spec.per_grade.iter().enumerate() {
                for _ in 0..count {
                    let other = (k + 1 + rng.gen_range(0..topics - 1)) % topics;
                    let mut text = match g {
                        0 => words(&mut rng, k, 4),
                        1 => [words(&mut rng, k, 2), words(&mut rng, other, 2)].concat(),
                        _ => words(&mut rng, other, 4),
                    };
                    text.shuffle(&mut rng);
                    let grade = Grade::new(2 - g as u8).expect("grade in range");
                    docs.push(Document {
                        doc_id: format!("{}", 1000 * (k + 1) + docs.len()),
                        content: DocContent::Text(format!("{}.", text.join(" "))),
                        grade,
                    });
                }
            }
            QueryGroup {
                query_id: k as QueryId + 1,
                query_text: Some(query),
                docs,
            }
        })
        .collect();
    SyntheticText { vectors, groups }
}

impl SyntheticText {
    pub fn table(&self, seed: u64) -> Result<EmbeddingTable> {
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        EmbeddingTable::from_entries(dim, self.vectors.iter().cloned(), seed)
    }

    pub fn embeddings_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.vectors {
            out.push_str(w);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    /// Documents in the tagged MEDLINE layout (`.I`, `.U`, `.T`, `.W`).
    pub fn documents_text(&self) -> String {
        let mut out = String::new();
        let mut seq = 1;
        for g in &self.groups {
            for d in &g.docs {
                let text = d.text().unwrap_or_default();
                let (title, body) = text.split_at(text.find(' ').unwrap_or(text.len()));
                let _ = write!(out, ".I {seq}\n.U\n{}\n.T\n{}\n.W\n{}\n", d.doc_id, title.trim(), body.trim());
                seq += 1;
            }
        }
        out
    }

    pub fn queries_text(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let _ = write!(out, ".I {}\n.B\nsynthetic patient\n.W\n{}\n", g.query_id, g.query_text.as_deref().unwrap_or_default());
        }
        out
    }

    pub fn judgments_text(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            for d in &g.docs {
                let token = ["n", "p", "d"][d.grade.value() as usize];
                let _ = writeln!(out, "{}\t{}\t{token}", g.query_id, d.doc_id);
            }
        }
        out
    }

    /// Writes `docs.txt`, `queries.txt`, `judgments.txt` and `embeddings.txt`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("docs.txt", self.documents_text()),
            ("queries.txt", self.queries_text()),
            ("judgments.txt", self.judgments_text()),
            ("embeddings.txt", self.embeddings_text()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
