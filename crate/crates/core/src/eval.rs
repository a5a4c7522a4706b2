//! NDCG@k, the cross-validated experiment driver, and the two-tailed
//! Wilcoxon signed-rank test used to compare methods query by query.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{make_folds, FoldPlan, FoldSplit, QueryGroup, QueryId};
use crate::embeddings::{to_sentence_matrix, EmbeddingTable};
use crate::encoder::EncoderConfig;
use crate::ordering::rank_by_score;
use crate::ranker::{train, ConvRankNet, FeatureCorpus, RankNetConfig, RankNetModel, TextCorpus, TrainConfig, Triple};
use crate::{Error, Result};

/// Largest cutoff reported by the metric table.
pub const K_MAX: usize = 10;

/// Sample sizes up to this use the exact null distribution.
pub const EXACT_LIMIT: usize = 20;

/// DCG@k with gain `2^g - 1` and discount `log2(i + 1)` for 1-based rank `i`.
pub fn dcg_at_k(ranked: &[u8], k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of grades listed in ranked order. The ideal ordering is the same
/// grades sorted descending; a list with no relevant document scores 0.
pub fn ndcg_at_k(ranked: &[u8], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Config("NDCG cutoff k must be at least 1".into()));
    }
    if let Some(g) = ranked.iter().find(|&&g| g > 2) {
        return Err(Error::Label(g.to_string()));
    }
    let mut ideal = ranked.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at_k(ranked, k) / idcg)
}

/// Produces one score per document of a query group, in document order.
pub trait Scorer {
    fn score_group(&self, group: &QueryGroup) -> Result<Vec<f64>>;
}

impl Scorer for RankNetModel {
    fn score_group(&self, group: &QueryGroup) -> Result<Vec<f64>> {
        group
            .docs
            .iter()
            .map(|d| {
                let f = d
                    .features()
                    .ok_or_else(|| Error::Config(format!("document {} has no feature vector", d.doc_id)))?;
                self.score(f)
            })
            .collect()
    }
}

/// ConvRankNet over raw text; every document is encoded exactly once.
pub struct ConvScorer<'a> {
    pub model: ConvRankNet,
    pub table: &'a EmbeddingTable,
    pub trunc_len: usize,
}

impl Scorer for ConvScorer<'_> {
    fn score_group(&self, group: &QueryGroup) -> Result<Vec<f64>> {
        let query = group
            .query_text
            .as_deref()
            .ok_or_else(|| Error::Config(format!("query {} has no text", group.query_id)))?;
        let q = to_sentence_matrix(query, self.table, self.trunc_len)?;
        let docs = group
            .docs
            .iter()
            .map(|d| {
                let text = d
                    .text()
                    .ok_or_else(|| Error::Config(format!("document {} has no text", d.doc_id)))?;
                to_sentence_matrix(text, self.table, self.trunc_len)
            })
            .collect::<Result<Vec<_>>>()?;
        self.model.score_documents(&q, &docs)
    }
}

/// Scores each document by its own grade: the perfect ranking.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score_group(&self, group: &QueryGroup) -> Result<Vec<f64>> {
        Ok(group.docs.iter().map(|d| d.grade.value() as f64).collect())
    }
}

/// Uniform random scores, reproducible per `(seed, query)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score_group(&self, group: &QueryGroup) -> Result<Vec<f64>> {
        let mix = (group.query_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ mix);
        Ok(group.docs.iter().map(|_| rng.gen::<f64>()).collect())
    }
}

/// NDCG@1..k_max of one test query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryNdcg {
    pub query_id: QueryId,
    pub ndcg: Vec<f64>,
}

/// Scores and ranks every test query. Groups without documents are skipped.
pub fn evaluate_fold<S: Scorer + ?Sized>(scorer: &S, test: &[&QueryGroup], k_max: usize) -> Result<Vec<QueryNdcg>> {
    if k_max < 1 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(test.len());
    for group in test {
        if group.docs.is_empty() {
            warn!("query {} has no judged documents; skipped", group.query_id);
            continue;
        }
        let scores = scorer.score_group(group)?;
        if scores.len() != group.docs.len() {
            return Err(Error::dim("evaluate_fold", format!("{} documents", group.docs.len()), format!("{} scores", scores.len())));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score of document {} in query {}", group.docs[i].doc_id, group.query_id)));
        }
        let ranked: Vec<u8> = rank_by_score(&scores)
            .into_iter()
            .map(|i| group.docs[i].grade.value())
            .collect();
        let ndcg = (1..=k_max).map(|k| ndcg_at_k(&ranked, k)).collect::<Result<_>>()?;
        out.push(QueryNdcg {
            query_id: group.query_id,
            ndcg,
        });
    }
    Ok(out)
}

/// Feature vectors and preference triples of the given groups.
pub fn feature_corpus(groups: &[&QueryGroup]) -> Result<(FeatureCorpus, Vec<Triple>)> {
    let mut corpus = FeatureCorpus::default();
    let mut triples = Vec::new();
    let mut dim = None;
    for (qi, g) in groups.iter().enumerate() {
        let mut feats = Vec::with_capacity(g.docs.len());
        for d in &g.docs {
            let f = d
                .features()
                .ok_or_else(|| Error::Config(format!("document {} has no feature vector", d.doc_id)))?;
            match dim {
                None => dim = Some(f.len()),
                Some(n) if n != f.len() => {
                    return Err(Error::dim("feature corpus", format!("{n} features"), format!("{} in document {}", f.len(), d.doc_id)));
                }
                _ => {}
            }
            feats.push(f.to_vec());
        }
        corpus.groups.push(feats);
        triples.extend(g.pairs(qi));
    }
    Ok((corpus, triples))
}

/// Sentence matrices and preference triples of the given text groups.
pub fn text_corpus(groups: &[&QueryGroup], table: &EmbeddingTable, trunc_len: usize) -> Result<(TextCorpus, Vec<Triple>)> {
    let mut corpus = TextCorpus::default();
    let mut triples = Vec::new();
    for (qi, g) in groups.iter().enumerate() {
        let query = g
            .query_text
            .as_deref()
            .ok_or_else(|| Error::Config(format!("query {} has no text", g.query_id)))?;
        corpus.queries.push(to_sentence_matrix(query, table, trunc_len)?);
        let docs = g
            .docs
            .iter()
            .map(|d| {
                let text = d
                    .text()
                    .ok_or_else(|| Error::Config(format!("document {} has no text", d.doc_id)))?;
                to_sentence_matrix(text, table, trunc_len)
            })
            .collect::<Result<Vec<_>>>()?;
        corpus.docs.push(docs);
        triples.extend(g.pairs(qi));
    }
    Ok((corpus, triples))
}

/// A ranking method that can be fitted on one fold's training split.
pub trait Method: Sync {
    fn name(&self) -> &str;
    fn fit<'s>(&'s self, split: &FoldSplit<'_>) -> Result<Box<dyn Scorer + 's>>;
}

#[derive(Clone, Debug, Default)]
pub struct OracleMethod;

impl Method for OracleMethod {
    fn name(&self) -> &str {
        "oracle"
    }

    fn fit<'s>(&'s self, _split: &FoldSplit<'_>) -> Result<Box<dyn Scorer + 's>> {
        Ok(Box::new(OracleScorer))
    }
}

#[derive(Clone, Debug, Default)]
pub struct RandomMethod {
    pub seed: u64,
}

impl Method for RandomMethod {
    fn name(&self) -> &str {
        "random"
    }

    fn fit<'s>(&'s self, _split: &FoldSplit<'_>) -> Result<Box<dyn Scorer + 's>> {
        Ok(Box::new(RandomScorer { seed: self.seed }))
    }
}

/// Feature-based RankNet trained on the fold's training queries.
#[derive(Clone, Debug)]
pub struct RankNetMethod {
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Method for RankNetMethod {
    fn name(&self) -> &str {
        "ranknet"
    }

    fn fit<'s>(&'s self, split: &FoldSplit<'_>) -> Result<Box<dyn Scorer + 's>> {
        let (corpus, triples) = feature_corpus(&split.train)?;
        let input_dim = corpus
            .groups
            .iter()
            .flatten()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::Precondition("training split has no documents".into()))?;
        let mut model = RankNetModel::new(RankNetConfig { input_dim, hidden: self.hidden }, self.train.seed)?;
        let report = train(&mut model, &corpus, &triples, &self.train)?;
        info!(
            "fold {}: ranknet trained on {} pairs, final epoch loss {:?}",
            split.fold,
            triples.len(),
            report.loss_history.last()
        );
        Ok(Box::new(model))
    }
}

/// ConvRankNet trained end to end on the fold's training queries.
pub struct ConvRankNetMethod<'a> {
    pub table: &'a EmbeddingTable,
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub trunc_len: usize,
    pub train: TrainConfig,
}

impl Method for ConvRankNetMethod<'_> {
    fn name(&self) -> &str {
        "convranknet"
    }

    fn fit<'s>(&'s self, split: &FoldSplit<'_>) -> Result<Box<dyn Scorer + 's>> {
        let (corpus, triples) = text_corpus(&split.train, self.table, self.trunc_len)?;
        let mut model = ConvRankNet::init(self.encoder.clone(), self.hidden, self.train.seed)?;
        let report = train(&mut model, &corpus, &triples, &self.train)?;
        info!(
            "fold {}: convranknet trained on {} pairs, final epoch loss {:?}",
            split.fold,
            triples.len(),
            report.loss_history.last()
        );
        Ok(Box::new(ConvScorer {
            model,
            table: self.table,
            trunc_len: self.trunc_len,
        }))
    }
}

/// One per-query measurement, the unit of significance testing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: QueryId,
    pub fold: usize,
    pub method: String,
    pub k: usize,
    pub value: f64,
}

const RECORD_HEADER: &str = "query_id\tfold\tmethod\tk\tvalue";

pub fn records_to_tsv(records: &[QueryRecord]) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.query_id, r.fold, r.method, r.k, r.value);
    }
    out
}

pub fn parse_records(text: &str) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || (i == 0 && line.starts_with("query_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::format(lineno, format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let bad = |what: &str| Error::format(lineno, format!("bad {what} {:?}", cols[0]));
        out.push(QueryRecord {
            query_id: cols[0].parse().map_err(|_| bad("query id"))?,
            fold: cols[1].parse().map_err(|_| Error::format(lineno, format!("bad fold {:?}", cols[1])))?,
            method: cols[2].to_string(),
            k: cols[3].parse().map_err(|_| Error::format(lineno, format!("bad cutoff {:?}", cols[3])))?,
            value: cols[4]
                .parse()
                .map_err(|_| Error::format(lineno, format!("bad value {:?}", cols[4])))?,
        });
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    parse_records(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Mean NDCG@1..k_max per method, pooled over every evaluated test query.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub k_max: usize,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricTable {
    pub fn from_records(records: &[QueryRecord], k_max: usize) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut sums: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
        for r in records {
            if !order.contains(&r.method) {
                order.push(r.method.clone());
            }
            let e = sums.entry((r.method.clone(), r.k)).or_default();
            e.0 += r.value;
            e.1 += 1;
        }
        let rows = order
            .into_iter()
            .map(|m| {
                let means = (1..=k_max)
                    .map(|k| sums.get(&(m.clone(), k)).map_or(0.0, |&(s, n)| s / n as f64))
                    .collect();
                (m, means)
            })
            .collect();
        MetricTable { k_max, rows }
    }

    pub fn get(&self, method: &str, k: usize) -> Option<f64> {
        let (_, v) = self.rows.iter().find(|(m, _)| m == method)?;
        v.get(k.checked_sub(1)?).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method");
        for k in 1..=self.k_max {
            let _ = write!(out, "\tNDCG@{k}");
        }
        out.push('\n');
        for (m, vals) in &self.rows {
            out.push_str(m);
            for v in vals {
                let _ = write!(out, "\t{v:.4}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub table: MetricTable,
    pub records: Vec<QueryRecord>,
}

/// Trains and evaluates every method on each requested fold, folds in
/// parallel. Records come back ordered by fold, then method, then query.
pub fn cross_validate(
    methods: &[&dyn Method],
    groups: &[QueryGroup],
    plan: &FoldPlan,
    folds: &[usize],
    k_max: usize,
) -> Result<CvOutcome> {
    let per_fold: Vec<Vec<QueryRecord>> = folds
        .par_iter()
        .map(|&fold| run_fold(methods, groups, plan, fold, k_max).map_err(|e| Error::Fold { fold, source: Box::new(e) }))
        .collect::<Result<_>>()?;
    let records: Vec<QueryRecord> = per_fold.into_iter().flatten().collect();
    Ok(CvOutcome {
        table: MetricTable::from_records(&records, k_max),
        records,
    })
}

fn run_fold(methods: &[&dyn Method], groups: &[QueryGroup], plan: &FoldPlan, fold: usize, k_max: usize) -> Result<Vec<QueryRecord>> {
    let split = make_folds(groups, plan, fold)?;
    let mut records = Vec::new();
    for method in methods {
        let scorer = method.fit(&split)?;
        for q in evaluate_fold(scorer.as_ref(), &split.test, k_max)? {
            for (k, &value) in q.ndcg.iter().enumerate() {
                records.push(QueryRecord {
                    query_id: q.query_id,
                    fold,
                    method: method.name().to_string(),
                    k: k + 1,
                    value,
                });
            }
        }
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)` over average ranks of `|x_i - y_i|`.
    pub statistic: f64,
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n_effective: usize,
    pub method: PValueMethod,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Two-tailed Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. For at most [`EXACT_LIMIT`] remaining pairs
/// the p-value is exact: the null distribution of `W+` over all sign
/// assignments is counted by dynamic programming on doubled ranks (integers
/// even with ties). Larger samples use the normal approximation with tie and
/// continuity corrections.
pub fn wilcoxon_two_tailed(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::dim("wilcoxon_two_tailed", format!("{} values", x.len()), format!("{} values", y.len())));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if let Some(d) = diffs.iter().find(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("paired difference {d}")));
    }
    let n = diffs.len();
    if n == 0 {
        return Err(Error::UndefinedTest("all paired differences are zero".into()));
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    let (p_value, method) = if n <= EXACT_LIMIT {
        (exact_p_value(&ranks, statistic), PValueMethod::Exact)
    } else {
        (normal_p_value(&ranks, statistic), PValueMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        statistic,
        p_value,
        n_effective: n,
        method,
    })
}

fn exact_p_value(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments whose doubled W+ equals s
    let mut counts = vec![0u64; max_sum + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (2.0 * statistic).round() as usize;
    let tail: u64 = counts[..=w].iter().sum();
    let p = 2.0 * tail as f64 / 2f64.powi(ranks.len() as i32);
    p.min(1.0)
}

fn normal_p_value(ranks: &[f64], statistic: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Pairs the `k` records of two methods by query id and tests them.
/// Queries present on one side only make the records unpairable.
pub fn significance(a: &[QueryRecord], b: &[QueryRecord], k: usize) -> Result<WilcoxonResult> {
    let collect = |recs: &[QueryRecord]| -> Result<BTreeMap<QueryId, f64>> {
        let mut m = BTreeMap::new();
        for r in recs.iter().filter(|r| r.k == k) {
            if m.insert(r.query_id, r.value).is_some() {
                return Err(Error::Precondition(format!("query {} appears twice at k = {k}", r.query_id)));
            }
        }
        Ok(m)
    };
    let (ma, mb) = (collect(a)?, collect(b)?);
    let missing: Vec<String> = ma
        .keys()
        .filter(|q| !mb.contains_key(q))
        .chain(mb.keys().filter(|q| !ma.contains_key(q)))
        .map(|q| q.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Precondition(format!("unpaired query ids: {}", missing.join(", "))));
    }
    if ma.is_empty() {
        return Err(Error::Precondition(format!("no records at k = {k}")));
    }
    let x: Vec<f64> = ma.values().copied().collect();
    let y: Vec<f64> = mb.values().copied().collect();
    wilcoxon_two_tailed(&x, &y)
}
