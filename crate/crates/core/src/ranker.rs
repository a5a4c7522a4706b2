//! RankNet: pairwise preferences, the Bradley-Terry posterior, the pairwise
//! cross-entropy loss, and mini-batch SGD training for both the
//! feature-based model and the end-to-end ConvRankNet.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::SentenceMatrix;
use crate::encoder::{init_encoder, join_phi, join_phi_backward, EncodeTrace, EncoderConfig, EncoderModel};
use crate::numerics::{sgd_step, Differentiable, Matrix, ParamStore};
use crate::{Error, Result};

/// Graded relevance: 0 = non-relevant (n), 1 = partially relevant (p),
/// 2 = definitely relevant (d).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Grade(u8);

impl Grade {
    pub const MAX: u8 = 2;
    pub const NON_RELEVANT: Grade = Grade(0);
    pub const PARTIAL: Grade = Grade(1);
    pub const DEFINITE: Grade = Grade(2);

    pub fn new(value: u8) -> Result<Self> {
        if value > Self::MAX {
            return Err(Error::Label(value.to_string()));
        }
        Ok(Grade(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Accepts `n`/`p`/`d` (any case) or `0`/`1`/`2`.
    pub fn from_token(token: &str) -> Result<Self> {
        match token.to_ascii_lowercase().as_str() {
            "n" | "0" => Ok(Grade(0)),
            "p" | "1" => Ok(Grade(1)),
            "d" | "2" => Ok(Grade(2)),
            _ => Err(Error::Label(token.to_string())),
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preference {
    Worse = -1,
    Tie = 0,
    Better = 1,
}

impl Preference {
    pub fn value(self) -> i8 {
        self as i8
    }

    pub fn reverse(self) -> Self {
        match self {
            Preference::Worse => Preference::Better,
            Preference::Tie => Preference::Tie,
            Preference::Better => Preference::Worse,
        }
    }
}

pub fn preference(rel_i: Grade, rel_j: Grade) -> Preference {
    match rel_i.cmp(&rel_j) {
        std::cmp::Ordering::Greater => Preference::Better,
        std::cmp::Ordering::Equal => Preference::Tie,
        std::cmp::Ordering::Less => Preference::Worse,
    }
}

/// `(1 + p) / 2`, one of 0, 0.5 or 1.
pub fn target_probability(p: Preference) -> f64 {
    (1.0 + f64::from(p.value())) / 2.0
}

/// Logistic sigmoid of the score difference, evaluated without overflow.
pub fn posterior(s_ij: f64) -> f64 {
    if s_ij >= 0.0 {
        1.0 / (1.0 + (-s_ij).exp())
    } else {
        let e = s_ij.exp();
        e / (1.0 + e)
    }
}

/// Pairwise cross-entropy `-t s + log(1 + e^s)` in a form that stays finite
/// for large `|s|`.
pub fn ranknet_loss(s_ij: f64, target: f64) -> f64 {
    if s_ij > 0.0 {
        (1.0 - target) * s_ij + (-s_ij).exp().ln_1p()
    } else {
        -target * s_ij + s_ij.exp().ln_1p()
    }
}

/// `dC/ds_ij = sigmoid(s_ij) - target`.
pub fn ranknet_loss_grad(s_ij: f64, target: f64) -> f64 {
    posterior(s_ij) - target
}

/// One training pair within a query: `doc_i` is preferred over `doc_j` with
/// probability `target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triple {
    pub query: usize,
    pub doc_i: usize,
    pub doc_j: usize,
    pub target: f64,
}

/// All strictly ordered pairs of a query's documents, oriented so that
/// `doc_i` has the higher grade (target 1). Ties are skipped.
pub fn make_pairs(query: usize, grades: &[Grade]) -> Vec<Triple> {
    let mut out = Vec::new();
    for a in 0..grades.len() {
        for b in a + 1..grades.len() {
            let (doc_i, doc_j) = match preference(grades[a], grades[b]) {
                Preference::Tie => continue,
                Preference::Better => (a, b),
                Preference::Worse => (b, a),
            };
            out.push(Triple {
                query,
                doc_i,
                doc_j,
                target: 1.0,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankNetConfig {
    pub input_dim: usize,
    pub hidden: usize,
}

pub const W1: &str = "ranknet.w1";
pub const B1: &str = "ranknet.b1";
pub const W2: &str = "ranknet.w2";
pub const B2: &str = "ranknet.b2";

#[derive(Clone, Debug)]
pub struct ScoreTrace {
    input: Vec<f64>,
    hidden_pre: Vec<f64>,
}

/// Input → ReLU hidden layer → scalar score.
#[derive(Clone, Debug)]
pub struct RankNetModel {
    config: RankNetConfig,
    pub params: ParamStore,
    tape: Option<(ScoreTrace, ScoreTrace)>,
}

impl RankNetModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: RankNetConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.hidden == 0 {
            return Err(Error::Config(format!(
                "RankNet layer sizes must be positive, got {}x{}",
                config.input_dim, config.hidden
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_in, n_hid) = (config.input_dim, config.hidden);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let mut params = ParamStore::new();
        params.insert(W1, glorot(n_hid, n_in)?);
        params.insert(B1, Matrix::zeros(n_hid, 1));
        params.insert(W2, glorot(1, n_hid)?);
        params.insert(B2, Matrix::zeros(1, 1));
        Ok(RankNetModel {
            config,
            params,
            tape: None,
        })
    }

    pub fn from_params(config: RankNetConfig, params: ParamStore) -> Result<Self> {
        let (n_in, n_hid) = (config.input_dim, config.hidden);
        for (name, shape) in [(W1, (n_hid, n_in)), (B1, (n_hid, 1)), (W2, (1, n_hid)), (B2, (1, 1))] {
            let got = params.slot(name)?.value.shape();
            if got != shape {
                return Err(Error::dim("RankNetModel::from_params", format!("{name} {shape:?}"), format!("{got:?}")));
            }
        }
        Ok(RankNetModel {
            config,
            params,
            tape: None,
        })
    }

    pub fn config(&self) -> &RankNetConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, ScoreTrace)> {
        if x.len() != self.config.input_dim {
            return Err(Error::dim("RankNet score", format!("input of {}", self.config.input_dim), format!("features of {}", x.len())));
        }
        let w1 = &self.params.slot(W1)?.value;
        let b1 = self.params.slot(B1)?.value.as_slice();
        let w2 = self.params.slot(W2)?.value.as_slice();
        let b2 = self.params.slot(B2)?.value.as_slice()[0];
        let hidden_pre: Vec<f64> = w1.matvec(x)?.iter().zip(b1).map(|(a, b)| a + b).collect();
        let score = hidden_pre
            .iter()
            .zip(w2)
            .map(|(&z, &w)| z.max(0.0) * w)
            .sum::<f64>()
            + b2;
        Ok((score, ScoreTrace { input: x.to_vec(), hidden_pre }))
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        self.forward(features).map(|(s, _)| s)
    }

    /// Accumulates parameter gradients given `dL/dscore`; returns `dL/dinput`.
    pub fn backward_score(&mut self, trace: &ScoreTrace, upstream: f64) -> Result<Vec<f64>> {
        let n_in = self.config.input_dim;
        let w2 = self.params.slot(W2)?.value.as_slice().to_vec();
        let hidden_grad: Vec<f64> = trace
            .hidden_pre
            .iter()
            .zip(&w2)
            .map(|(&z, &w)| if z > 0.0 { upstream * w } else { 0.0 })
            .collect();

        {
            let gw2 = self.params.slot_mut(W2)?.grad.as_mut_slice();
            for (g, &z) in gw2.iter_mut().zip(&trace.hidden_pre) {
                *g += upstream * z.max(0.0);
            }
        }
        self.params.slot_mut(B2)?.grad.as_mut_slice()[0] += upstream;
        {
            let gb1 = self.params.slot_mut(B1)?.grad.as_mut_slice();
            for (g, &h) in gb1.iter_mut().zip(&hidden_grad) {
                *g += h;
            }
        }
        let gw1 = &mut self.params.slot_mut(W1)?.grad;
        for (r, &h) in hidden_grad.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            for (g, &x) in gw1.row_mut(r).iter_mut().zip(&trace.input) {
                *g += h * x;
            }
        }
        let w1 = &self.params.slot(W1)?.value;
        let mut grad_input = vec![0.0; n_in];
        for (r, &h) in hidden_grad.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            for (g, &w) in grad_input.iter_mut().zip(w1.row(r)) {
                *g += h * w;
            }
        }
        Ok(grad_input)
    }
}

impl Differentiable for RankNetModel {
    fn param_stores(&self) -> Vec<&ParamStore> {
        vec![&self.params]
    }

    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.params]
    }
}

/// A model trainable on [`Triple`]s drawn from some corpus.
///
/// `forward_pair` returns the score difference `s_ij` and records what
/// `backward_pair` needs; `backward_pair` consumes that record, so calling it
/// without a preceding forward pass is a state error.
pub trait PairwiseModel: Differentiable {
    type Corpus: ?Sized;

    fn forward_pair(
        &mut self,
        corpus: &Self::Corpus,
        triple: &Triple,
        train_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64>;

    /// Backpropagates `dL/ds_ij` through the last recorded pair, accumulating
    /// into the gradient slots.
    fn backward_pair(&mut self, corpus: &Self::Corpus, upstream: f64) -> Result<()>;

    /// Eval-mode `s_ij` without touching the recorded state.
    fn margin(&self, corpus: &Self::Corpus, triple: &Triple) -> Result<f64>;
}

/// Feature vectors indexed by `[query][document]`.
#[derive(Clone, Debug, Default)]
pub struct FeatureCorpus {
    pub groups: Vec<Vec<Vec<f64>>>,
}

impl FeatureCorpus {
    fn pair(&self, t: &Triple) -> Result<(&[f64], &[f64])> {
        let group = self
            .groups
            .get(t.query)
            .ok_or_else(|| Error::State(format!("triple refers to missing query {}", t.query)))?;
        let get = |d: usize| {
            group
                .get(d)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::State(format!("triple refers to missing document {d} of query {}", t.query)))
        };
        Ok((get(t.doc_i)?, get(t.doc_j)?))
    }
}

impl PairwiseModel for RankNetModel {
    type Corpus = FeatureCorpus;

    fn forward_pair(&mut self, corpus: &FeatureCorpus, t: &Triple, _train: bool, _rng: &mut ChaCha8Rng) -> Result<f64> {
        let (xi, xj) = corpus.pair(t)?;
        let (si, ti) = self.forward(xi)?;
        let (sj, tj) = self.forward(xj)?;
        self.tape = Some((ti, tj));
        Ok(si - sj)
    }

    fn backward_pair(&mut self, _corpus: &FeatureCorpus, upstream: f64) -> Result<()> {
        let (ti, tj) = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a forward pass".into()))?;
        self.backward_score(&ti, upstream)?;
        self.backward_score(&tj, -upstream)?;
        Ok(())
    }

    fn margin(&self, corpus: &FeatureCorpus, t: &Triple) -> Result<f64> {
        let (xi, xj) = corpus.pair(t)?;
        Ok(self.score(xi)? - self.score(xj)?)
    }
}

/// Sentence matrices indexed by query, and by `[query][document]`.
#[derive(Clone, Debug, Default)]
pub struct TextCorpus {
    pub queries: Vec<SentenceMatrix>,
    pub docs: Vec<Vec<SentenceMatrix>>,
}

impl TextCorpus {
    fn triple(&self, t: &Triple) -> Result<(&SentenceMatrix, &SentenceMatrix, &SentenceMatrix)> {
        let missing = || Error::State(format!("triple {t:?} refers outside the corpus"));
        let q = self.queries.get(t.query).ok_or_else(missing)?;
        let docs = self.docs.get(t.query).ok_or_else(missing)?;
        Ok((q, docs.get(t.doc_i).ok_or_else(missing)?, docs.get(t.doc_j).ok_or_else(missing)?))
    }
}

#[derive(Clone, Debug)]
struct BranchTape {
    features: Vec<f64>,
    trace: EncodeTrace,
}

#[derive(Clone, Debug)]
struct ConvTape {
    triple: Triple,
    query: BranchTape,
    doc_i: BranchTape,
    doc_j: BranchTape,
    score_i: ScoreTrace,
    score_j: ScoreTrace,
}

/// Siamese CNN encoder feeding `(v_q - v_d)^2` into a RankNet.
#[derive(Clone, Debug)]
pub struct ConvRankNet {
    pub encoder: EncoderModel,
    pub ranknet: RankNetModel,
    tape: Option<ConvTape>,
}

impl ConvRankNet {
    pub fn new(encoder: EncoderModel, ranknet: RankNetModel) -> Result<Self> {
        if encoder.output_dim() != ranknet.input_dim() {
            return Err(Error::dim("ConvRankNet", format!("encoder output {}", encoder.output_dim()), format!("RankNet input {}", ranknet.input_dim())));
        }
        Ok(ConvRankNet {
            encoder,
            ranknet,
            tape: None,
        })
    }

    /// Fresh model: the encoder is initialised from `seed`, the RankNet from `seed + 1`.
    pub fn init(encoder: EncoderConfig, hidden: usize, seed: u64) -> Result<Self> {
        let encoder = init_encoder(encoder, seed)?;
        let input_dim = encoder.output_dim();
        let ranknet = RankNetModel::new(RankNetConfig { input_dim, hidden }, seed.wrapping_add(1))?;
        ConvRankNet::new(encoder, ranknet)
    }

    /// Score of a document given an already encoded query (eval mode).
    pub fn score_conv(&self, v_q: &[f64], doc: &SentenceMatrix) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (v_d, _) = self.encoder.encode(doc, false, &mut rng)?;
        self.ranknet.score(&join_phi(v_q, &v_d)?)
    }

    pub fn encode_eval(&self, s: &SentenceMatrix) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.encoder.encode(s, false, &mut rng)?.0)
    }

    /// Scores every document against the query: one encoder pass for the
    /// query plus one per document, never one per pair.
    pub fn score_documents(&self, query: &SentenceMatrix, docs: &[SentenceMatrix]) -> Result<Vec<f64>> {
        let v_q = self.encode_eval(query)?;
        docs.iter().map(|d| self.score_conv(&v_q, d)).collect()
    }
}

impl Differentiable for ConvRankNet {
    fn param_stores(&self) -> Vec<&ParamStore> {
        vec![&self.encoder.params, &self.ranknet.params]
    }

    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.encoder.params, &mut self.ranknet.params]
    }
}

impl PairwiseModel for ConvRankNet {
    type Corpus = TextCorpus;

    fn forward_pair(&mut self, corpus: &TextCorpus, t: &Triple, train_mode: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
        let (q, di, dj) = corpus.triple(t)?;
        let mut branch = |s: &SentenceMatrix| -> Result<BranchTape> {
            let (features, trace) = self.encoder.encode(s, train_mode, rng)?;
            Ok(BranchTape { features, trace })
        };
        let query = branch(q)?;
        let doc_i = branch(di)?;
        let doc_j = branch(dj)?;
        let (si, score_i) = self.ranknet.forward(&join_phi(&query.features, &doc_i.features)?)?;
        let (sj, score_j) = self.ranknet.forward(&join_phi(&query.features, &doc_j.features)?)?;
        self.tape = Some(ConvTape {
            triple: *t,
            query,
            doc_i,
            doc_j,
            score_i,
            score_j,
        });
        Ok(si - sj)
    }

    fn margin(&self, corpus: &TextCorpus, t: &Triple) -> Result<f64> {
        let (q, di, dj) = corpus.triple(t)?;
        let v_q = self.encode_eval(q)?;
        Ok(self.score_conv(&v_q, di)? - self.score_conv(&v_q, dj)?)
    }

    fn backward_pair(&mut self, corpus: &TextCorpus, upstream: f64) -> Result<()> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a forward pass".into()))?;
        let (q, di, dj) = corpus.triple(&tape.triple)?;
        let g_phi_i = self.ranknet.backward_score(&tape.score_i, upstream)?;
        let g_phi_j = self.ranknet.backward_score(&tape.score_j, -upstream)?;
        let (gq_i, gdi) = join_phi_backward(&tape.query.features, &tape.doc_i.features, &g_phi_i);
        let (gq_j, gdj) = join_phi_backward(&tape.query.features, &tape.doc_j.features, &g_phi_j);
        let gq: Vec<f64> = gq_i.iter().zip(&gq_j).map(|(a, b)| a + b).collect();
        self.encoder.backward(q, &tape.query.trace, &gq, None)?;
        self.encoder.backward(di, &tape.doc_i.trace, &gdi, None)?;
        self.encoder.backward(dj, &tape.doc_j.trace, &gdj, None)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the epoch's forward passes.
    pub loss_history: Vec<f64>,
}

/// Mini-batch SGD on the mean pairwise loss. Triples are reshuffled every
/// epoch; shuffling and dropout draw from generators seeded by `config.seed`.
pub fn train<M: PairwiseModel>(
    model: &mut M,
    corpus: &M::Corpus,
    triples: &[Triple],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if triples.is_empty() {
        return Err(Error::Precondition("no training pairs".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if !config.lr.is_finite() || config.lr < 0.0 {
        return Err(Error::Config(format!("learning rate {} is not a finite non-negative number", config.lr)));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut report = TrainReport::default();
    model.zero_grads();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            for &idx in batch {
                let t = &triples[idx];
                let s = model.forward_pair(corpus, t, true, &mut dropout_rng)?;
                let loss = ranknet_loss(s, t.target);
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss {loss} at epoch {epoch}, batch {batch_no} (s_ij = {s})"
                    )));
                }
                epoch_loss += loss;
                model.backward_pair(corpus, weight * ranknet_loss_grad(s, t.target))?;
            }
            for store in model.param_stores_mut() {
                sgd_step(store, config.lr).map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at epoch {epoch}, batch {batch_no}")),
                    other => other,
                })?;
            }
        }
        report.loss_history.push(epoch_loss / triples.len() as f64);
    }
    Ok(report)
}

/// Eval-mode mean pairwise loss.
pub fn mean_loss<M: PairwiseModel>(model: &M, corpus: &M::Corpus, triples: &[Triple]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Precondition("no pairs to evaluate".into()));
    }
    let mut total = 0.0;
    for t in triples {
        total += ranknet_loss(model.margin(corpus, t)?, t.target);
    }
    Ok(total / triples.len() as f64)
}

/// Fraction of pairs whose eval-mode margin has the sign of the target
/// (`s_ij > 0` for target 1, `s_ij < 0` for target 0).
pub fn pairwise_accuracy<M: PairwiseModel>(model: &M, corpus: &M::Corpus, triples: &[Triple]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Precondition("no pairs to evaluate".into()));
    }
    let mut correct = 0usize;
    for t in triples {
        let s = model.margin(corpus, t)?;
        if (t.target > 0.5 && s > 0.0) || (t.target < 0.5 && s < 0.0) {
            correct += 1;
        }
    }
    Ok(correct as f64 / triples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FilterSpec;
    use crate::numerics::{dot, grad_check, relative_error};

    fn grades(v: &[u8]) -> Vec<Grade> {
        v.iter().map(|&g| Grade::new(g).unwrap()).collect()
    }

    #[test]
    fn preference_examples_and_antisymmetry() {
        assert_eq!(preference(Grade::DEFINITE, Grade::NON_RELEVANT), Preference::Better);
        assert_eq!(preference(Grade::PARTIAL, Grade::PARTIAL), Preference::Tie);
        for a in 0..3 {
            for b in 0..3 {
                let (ga, gb) = (Grade::new(a).unwrap(), Grade::new(b).unwrap());
                assert_eq!(preference(ga, gb).value(), -preference(gb, ga).value());
                assert_eq!(preference(ga, gb).reverse(), preference(gb, ga));
            }
        }
    }

    #[test]
    fn grade_labels() {
        assert_eq!(Grade::from_token("d").unwrap(), Grade::DEFINITE);
        assert_eq!(Grade::from_token("P").unwrap(), Grade::PARTIAL);
        assert!(matches!(Grade::from_token("x"), Err(Error::Label(_))));
        assert!(Grade::new(3).is_err());
    }

    #[test]
    fn target_probabilities() {
        assert_eq!(target_probability(Preference::Better), 1.0);
        assert_eq!(target_probability(Preference::Tie), 0.5);
        assert_eq!(target_probability(Preference::Worse), 0.0);
    }

    #[test]
    fn posterior_properties() {
        assert_eq!(posterior(0.0), 0.5);
        assert_eq!(posterior(1e3), 1.0);
        assert_eq!(posterior(-1e3), 0.0);
        let mut prev = 0.0;
        for i in -100..=100 {
            let p = posterior(i as f64 * 0.37);
            assert!(p >= prev && (0.0..=1.0).contains(&p));
            prev = p;
            assert!((p + posterior(-(i as f64) * 0.37) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_reference_values() {
        for t in [0.0, 0.5, 1.0] {
            assert!((ranknet_loss(0.0, t) - std::f64::consts::LN_2).abs() < 1e-12);
        }
        let confident = ranknet_loss(20.0, 1.0);
        assert!((confident - (-20f64).exp()).abs() < 1e-15 && confident < 3e-9);
        for s in [-1e3, -750.0, 750.0, 1e3] {
            for t in [0.0, 0.5, 1.0] {
                assert!(ranknet_loss(s, t).is_finite());
                assert!(ranknet_loss_grad(s, t).is_finite());
            }
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-5;
        for _ in 0..1000 {
            let s = rng.gen_range(-30.0..30.0);
            let t = rng.gen_range(0.0..=1.0);
            let num = (ranknet_loss(s + h, t) - ranknet_loss(s - h, t)) / (2.0 * h);
            let ana = ranknet_loss_grad(s, t);
            assert!((num - ana).abs() < 1e-6, "s={s} t={t}: {num} vs {ana}");
        }
    }

    #[test]
    fn loss_stationary_exactly_at_target() {
        for t in [0.1, 0.5, 0.9] {
            let s_star = (t / (1.0f64 - t)).ln();
            assert!(ranknet_loss_grad(s_star, t).abs() < 1e-12);
            assert!(ranknet_loss_grad(s_star + 0.1, t) > 0.0);
            assert!(ranknet_loss_grad(s_star - 0.1, t) < 0.0);
        }
    }

    #[test]
    fn make_pairs_examples() {
        assert_eq!(make_pairs(0, &grades(&[2, 0])).len(), 1);
        assert!(make_pairs(0, &grades(&[1, 1, 1])).is_empty());
        let pairs = make_pairs(3, &grades(&[2, 1, 0]));
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|t| t.query == 3 && t.target == 1.0));
        let pairs = make_pairs(0, &grades(&[0, 2]));
        assert_eq!((pairs[0].doc_i, pairs[0].doc_j), (1, 0));
    }

    fn hand_net() -> RankNetModel {
        let cfg = RankNetConfig { input_dim: 2, hidden: 1 };
        let mut m = RankNetModel::new(cfg, 0).unwrap();
        m.params.get_mut(W1).unwrap().value = Matrix::from_vec(1, 2, vec![0.5, -1.0]).unwrap();
        m.params.get_mut(B1).unwrap().value = Matrix::from_vec(1, 1, vec![0.25]).unwrap();
        m.params.get_mut(W2).unwrap().value = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        m.params.get_mut(B2).unwrap().value = Matrix::from_vec(1, 1, vec![-0.5]).unwrap();
        m
    }

    #[test]
    fn score_hand_computed() {
        let m = hand_net();
        // hidden = relu(0.5*2 - 1*0.5 + 0.25) = 0.75; score = 2*0.75 - 0.5
        assert!((m.score(&[2.0, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        // hidden pre-activation negative → score is the output bias
        assert_eq!(m.score(&[0.0, 3.0]).unwrap(), -0.5);
        assert!(m.score(&[1.0]).is_err());
    }

    #[test]
    fn zero_weights_score_zero() {
        let mut m = RankNetModel::new(RankNetConfig { input_dim: 3, hidden: 4 }, 1).unwrap();
        for (_, p) in m.params.iter_mut() {
            p.value.fill(0.0);
        }
        assert_eq!(m.score(&[1.0, -2.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut m = hand_net();
        let corpus = FeatureCorpus::default();
        assert!(matches!(m.backward_pair(&corpus, 1.0), Err(Error::State(_))));
    }

    fn random_feature_corpus(rng: &mut ChaCha8Rng, docs: usize, dim: usize) -> FeatureCorpus {
        FeatureCorpus {
            groups: vec![(0..docs).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()],
        }
    }

    #[test]
    fn feature_ranknet_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus = random_feature_corpus(&mut rng, 2, 5);
            let mut model = RankNetModel::new(RankNetConfig { input_dim: 5, hidden: 6 }, seed).unwrap();
            for x in model.params.get_mut(B1).unwrap().value.as_mut_slice() {
                *x = rng.gen_range(-0.5..0.5);
            }
            let t = Triple { query: 0, doc_i: 0, doc_j: 1, target: rng.gen_range(0.0..=1.0) };
            let report = grad_check(
                &mut model,
                |m| Ok(ranknet_loss(m.margin(&corpus, &t)?, t.target)),
                |m| {
                    let s = m.forward_pair(&corpus, &t, false, &mut ChaCha8Rng::seed_from_u64(0))?;
                    m.backward_pair(&corpus, ranknet_loss_grad(s, t.target))
                },
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }

    pub(crate) fn toy_conv(seed: u64, dim: usize) -> ConvRankNet {
        let cfg = EncoderConfig {
            embedding_dim: dim,
            filters: vec![FilterSpec { size: 1, copies: 2 }, FilterSpec { size: 2, copies: 2 }],
            dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = init_encoder(cfg, seed).unwrap();
        for (_, p) in encoder.params.iter_mut() {
            for x in p.value.as_mut_slice() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        let mut ranknet = RankNetModel::new(RankNetConfig { input_dim: 4, hidden: 3 }, seed).unwrap();
        for x in ranknet.params.get_mut(B1).unwrap().value.as_mut_slice() {
            *x = rng.gen_range(-0.5..0.5);
        }
        ConvRankNet::new(encoder, ranknet).unwrap()
    }

    #[test]
    fn conv_pipeline_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let sentence = |rng: &mut ChaCha8Rng| {
                let mut m = Matrix::zeros(4, 3);
                for r in 0..3 {
                    for c in 0..3 {
                        m.set(r, c, rng.gen_range(-1.0..1.0));
                    }
                }
                SentenceMatrix { matrix: m, valid_rows: 3 }
            };
            let corpus = TextCorpus {
                queries: vec![sentence(&mut rng)],
                docs: vec![vec![sentence(&mut rng), sentence(&mut rng)]],
            };
            let mut model = toy_conv(seed, 3);
            let t = Triple { query: 0, doc_i: 0, doc_j: 1, target: 1.0 };
            let report = grad_check(
                &mut model,
                |m| Ok(ranknet_loss(m.margin(&corpus, &t)?, t.target)),
                |m| {
                    let s = m.forward_pair(&corpus, &t, false, &mut ChaCha8Rng::seed_from_u64(0))?;
                    m.backward_pair(&corpus, ranknet_loss_grad(s, t.target))
                },
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn identical_query_and_document_score_like_zero_features() {
        let model = toy_conv(3, 3);
        let mut m = Matrix::zeros(4, 3);
        m.set(0, 0, 0.7);
        m.set(1, 2, -0.2);
        let s = SentenceMatrix { matrix: m, valid_rows: 2 };
        let v_q = model.encode_eval(&s).unwrap();
        let score = model.score_conv(&v_q, &s).unwrap();
        assert_eq!(score, model.ranknet.score(&[0.0; 4]).unwrap());
    }

    #[test]
    fn sgd_step_on_pair_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let corpus = random_feature_corpus(&mut rng, 2, 4);
        let mut model = RankNetModel::new(RankNetConfig { input_dim: 4, hidden: 5 }, 2).unwrap();
        for x in model.params.get_mut(B1).unwrap().value.as_mut_slice() {
            *x = 0.3;
        }
        let t = Triple { query: 0, doc_i: 0, doc_j: 1, target: 1.0 };
        let before = mean_loss(&model, &corpus, &[t]).unwrap();
        let cfg = TrainConfig { epochs: 1, lr: 1e-2, batch_size: 1, seed: 0 };
        train(&mut model, &corpus, &[t], &cfg).unwrap();
        let after = mean_loss(&model, &corpus, &[t]).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    fn separable_corpus(seed: u64) -> (FeatureCorpus, Vec<Triple>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = [1.0, -2.0, 0.5];
        let mut groups = Vec::new();
        let mut triples = Vec::new();
        for q in 0..5 {
            let docs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut order: Vec<usize> = (0..4).collect();
            order.sort_by(|&a, &b| dot(&w, &docs[b]).total_cmp(&dot(&w, &docs[a])));
            let mut g = vec![Grade::NON_RELEVANT; 4];
            g[order[0]] = Grade::DEFINITE;
            g[order[1]] = Grade::PARTIAL;
            triples.extend(make_pairs(q, &g));
            groups.push(docs);
        }
        (FeatureCorpus { groups }, triples)
    }

    #[test]
    fn feature_training_reduces_loss_and_is_deterministic() {
        let (corpus, triples) = separable_corpus(5);
        let cfg = TrainConfig { epochs: 200, lr: 0.05, batch_size: 4, seed: 9 };
        let mut a = RankNetModel::new(RankNetConfig { input_dim: 3, hidden: 8 }, 1).unwrap();
        let ra = train(&mut a, &corpus, &triples, &cfg).unwrap();
        let mut b = RankNetModel::new(RankNetConfig { input_dim: 3, hidden: 8 }, 1).unwrap();
        let rb = train(&mut b, &corpus, &triples, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params, b.params);
        assert_eq!(ra.loss_history.len(), 200);
        assert!(ra.loss_history.last().unwrap() < ra.loss_history.first().unwrap());
        assert!(pairwise_accuracy(&a, &corpus, &triples).unwrap() > 0.9);
    }

    #[test]
    fn zero_learning_rate_freezes_model() {
        let (corpus, triples) = separable_corpus(6);
        let mut model = RankNetModel::new(RankNetConfig { input_dim: 3, hidden: 4 }, 2).unwrap();
        let before = model.params.clone();
        let cfg = TrainConfig { epochs: 5, lr: 0.0, batch_size: 3, seed: 1 };
        let report = train(&mut model, &corpus, &triples, &cfg).unwrap();
        for (p, q) in model.params.iter().zip(before.iter()) {
            assert_eq!(p.1.value, q.1.value);
        }
        let first = report.loss_history[0];
        assert!(report.loss_history.iter().all(|&l| (l - first).abs() < 1e-12));
    }

    #[test]
    fn training_rejects_empty_and_bad_config() {
        let (corpus, _) = separable_corpus(1);
        let mut model = RankNetModel::new(RankNetConfig { input_dim: 3, hidden: 4 }, 2).unwrap();
        assert!(matches!(train(&mut model, &corpus, &[], &TrainConfig::default()), Err(Error::Precondition(_))));
        let t = [Triple { query: 0, doc_i: 0, doc_j: 1, target: 1.0 }];
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(&mut model, &corpus, &t, &cfg).is_err());
    }

    #[test]
    fn diverging_training_aborts_with_diagnostic() {
        let (corpus, triples) = separable_corpus(2);
        let mut model = RankNetModel::new(RankNetConfig { input_dim: 3, hidden: 4 }, 2).unwrap();
        for x in model.params.get_mut(W1).unwrap().value.as_mut_slice() {
            *x = f64::MAX;
        }
        let err = train(&mut model, &corpus, &triples, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("epoch 0")), "{err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn loss_is_convex(s1 in -50.0f64..50.0, s2 in -50.0f64..50.0, t in 0.0f64..=1.0, lam in 0.0f64..=1.0) {
                let mix = ranknet_loss(lam * s1 + (1.0 - lam) * s2, t);
                let chord = lam * ranknet_loss(s1, t) + (1.0 - lam) * ranknet_loss(s2, t);
                prop_assert!(mix <= chord + 1e-12);
            }

            #[test]
            fn swapping_orientation_keeps_the_loss(s in -800.0f64..800.0, t in 0.0f64..=1.0) {
                let a = ranknet_loss(s, t);
                let b = ranknet_loss(-s, 1.0 - t);
                prop_assert!(relative_error(a, b) < 1e-12 || (a - b).abs() < 1e-12);
                prop_assert!(a.is_finite());
            }

            #[test]
            fn posterior_complement(x in -700.0f64..700.0) {
                prop_assert!((posterior(x) + posterior(-x) - 1.0).abs() < 1e-15);
            }
        }
    }
}
