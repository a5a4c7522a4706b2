//! Command-line front end: training, evaluation, cross-validation, ranking,
//! significance testing and order verification.
//!
//! Every option can also come from a JSON config file (`--config`); flags
//! given on the command line win over the file, which wins over defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_text_groups, make_folds, min_max_normalize, parse_judgments, parse_letor, parse_letor_str,
    parse_ohsumed_docs, parse_ohsumed_queries, FoldPlan, QueryGroup,
};
use crate::embeddings::{load_embeddings, to_sentence_matrix, EmbeddingTable, DEFAULT_TRUNC_LEN};
use crate::encoder::{EncoderConfig, FilterSpec};
use crate::eval::{
    cross_validate, evaluate_fold, feature_corpus, read_records, records_to_tsv, significance, text_corpus,
    ConvRankNetMethod, ConvScorer, Method, MetricTable, OracleMethod, OracleScorer, QueryRecord, RandomMethod,
    RankNetMethod, Scorer, WilcoxonResult, K_MAX,
};
use crate::model_file::{Mode, Model, ModelFile};
use crate::ordering::verify_theorem1;
use crate::ranker::{train, ConvRankNet, RankNetConfig, RankNetModel, TrainConfig, TrainReport};
use crate::Error;

type CliResult<T> = anyhow::Result<T>;

/// Resolved settings of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// LETOR feature file, or a directory holding `Fold1/{train,vali,test}.txt`.
    pub letor: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub epochs: usize,
    /// Unset means the mode's default.
    pub lr: Option<f64>,
    /// Unset means the mode's default: single pairs for features, 64 for text.
    pub batch_size: Option<usize>,
    pub trunc_len: usize,
    pub filter_sizes: Vec<usize>,
    pub filter_copies: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Folds to run (1-based); empty means all five.
    pub folds: Vec<usize>,
    /// Per-query min-max feature scaling on load.
    pub normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::RanknetFeatures,
            letor: None,
            docs: None,
            queries: None,
            judgments: None,
            embeddings: None,
            epochs: 500,
            lr: None,
            batch_size: None,
            trunc_len: DEFAULT_TRUNC_LEN,
            filter_sizes: vec![3, 4, 5],
            filter_copies: 10,
            dropout: 0.5,
            hidden: 10,
            seed: 0,
            folds: Vec::new(),
            normalize: false,
        }
    }
}

impl RunConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.mode {
            Mode::RanknetFeatures => 1e-5,
            Mode::Convranknet => 1e-3,
        })
    }

    pub fn effective_batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.mode {
            Mode::RanknetFeatures => 1,
            Mode::Convranknet => 64,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.learning_rate(),
            batch_size: self.effective_batch_size(),
            seed: self.seed,
        }
    }

    pub fn encoder_config(&self, embedding_dim: usize) -> EncoderConfig {
        EncoderConfig {
            embedding_dim,
            filters: self
                .filter_sizes
                .iter()
                .map(|&size| FilterSpec { size, copies: self.filter_copies })
                .collect(),
            dropout: self.dropout,
        }
    }

    pub fn fold_list(&self) -> Vec<usize> {
        if self.folds.is_empty() {
            (1..=5).collect()
        } else {
            self.folds.clone()
        }
    }
}

/// Run options shared by the data-driven subcommands.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// JSON file with any RunConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub letor: Option<PathBuf>,
    /// Raw documents in tagged MEDLINE layout (text mode).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub trunc_len: Option<usize>,
    /// Comma-separated filter sizes, e.g. 3,4,5.
    #[arg(long, value_delimiter = ',')]
    pub filter_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub filter_copies: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated 1-based folds.
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long)]
    pub normalize: bool,
}

impl RunArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        self.resolve_over(RunConfig::default())
    }

    pub fn resolve_over(&self, base: RunConfig) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => base,
        };
        macro_rules! flag {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        flag!(mode, epochs, trunc_len, filter_sizes, filter_copies, dropout, hidden, seed, folds);
        macro_rules! optional {
            ($($field:ident),*) => {
                $(if self.$field.is_some() { cfg.$field = self.$field.clone(); })*
            };
        }
        optional!(letor, docs, queries, judgments, embeddings, lr, batch_size);
        if self.normalize {
            cfg.normalize = true;
        }
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "convrank", version, about = "Pairwise neural learning to rank")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on one fold's training split and save the model.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Fold whose training split is used.
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss history as CSV (epoch,mean_loss).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Evaluate a frozen model (or the grade oracle) on the test splits.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, required_unless_present = "oracle")]
        model: Option<PathBuf>,
        /// Score documents by their own grade.
        #[arg(long)]
        oracle: bool,
        /// Method name written to the records.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Five-fold cross-validation: train and evaluate every fold, in parallel.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        /// Also report these reference scorers (random, oracle).
        #[arg(long, value_delimiter = ',')]
        baselines: Vec<String>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Score and sort documents (one per line) for a query.
    Rank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "")]
        query: String,
        /// One document per line; feature mode expects whitespace-separated numbers.
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        trunc_len: Option<usize>,
    },
    /// Two-tailed Wilcoxon signed-rank test between two per-query record files.
    Significance {
        a: PathBuf,
        b: PathBuf,
        /// Cutoff whose NDCG values are paired.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        method_a: Option<String>,
        #[arg(long)]
        method_b: Option<String>,
    },
    /// Check score ranking against the topological sort of the pairwise tournament.
    Verify {
        #[arg(long, default_value_t = 8)]
        n_max: usize,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, hide = true)]
        inject_tie: bool,
    },
}

/// Runs a parsed command; the returned text is the command's report for stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Train { run, fold, out, loss_csv } => {
            let cfg = run.resolve()?;
            let outcome = cmd_train(&cfg, fold)?;
            ModelFile {
                model: outcome.model,
                config: serde_json::to_value(&cfg)?,
            }
            .save(&out)?;
            if let Some(path) = loss_csv {
                write_file(&path, &loss_csv_text(&outcome.report))?;
            }
            let losses = &outcome.report.loss_history;
            Ok(format!(
                "trained {} on {} pairs for {} epochs; first/last epoch loss {} / {}\nmodel written to {}\n",
                cfg.mode,
                outcome.pairs,
                losses.len(),
                losses.first().map_or("-".into(), |v| format!("{v:.6}")),
                losses.last().map_or("-".into(), |v| format!("{v:.6}")),
                out.display()
            ))
        }
        Command::Evaluate { run, model, oracle, name, table, records } => {
            let (metric, recs) = cmd_evaluate(&run, model.as_deref(), oracle, name)?;
            emit_tables(&metric, &recs, table.as_deref(), records.as_deref())
        }
        Command::Cv { run, baselines, table, records } => {
            let cfg = run.resolve()?;
            let (metric, recs) = cmd_cv(&cfg, &baselines)?;
            emit_tables(&metric, &recs, table.as_deref(), records.as_deref())
        }
        Command::Rank { model, query, docs, embeddings, trunc_len } => {
            let text = fs::read_to_string(&docs).with_context(|| format!("reading {}", docs.display()))?;
            let lines: Vec<&str> = text.lines().collect();
            let file = ModelFile::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let outcome = cmd_rank(&file, &query, &lines, embeddings.as_deref(), trunc_len)?;
            let mut out = String::from("rank\tdoc\tscore\ttext\n");
            for (r, &(i, s)) in outcome.ranking.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", r + 1, i, s, lines[i]);
            }
            let _ = writeln!(
                out,
                "# encoder forward passes: {} for documents, {} for the query",
                outcome.doc_passes, outcome.query_passes
            );
            Ok(out)
        }
        Command::Significance { a, b, k, method_a, method_b } => {
            let r = cmd_significance(&a, &b, k, method_a.as_deref(), method_b.as_deref())?;
            Ok(format!(
                "statistic\t{}\np_value\t{}\nn_effective\t{}\nmethod\t{:?}\n",
                r.statistic, r.p_value, r.n_effective, r.method
            ))
        }
        Command::Verify { n_max, seeds, inject_tie } => cmd_verify(n_max, seeds, inject_tie),
    }
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn emit_tables(metric: &MetricTable, recs: &[QueryRecord], table: Option<&Path>, records: Option<&Path>) -> CliResult<String> {
    if let Some(path) = records {
        write_file(path, &records_to_tsv(recs))?;
    }
    let text = metric.to_tsv();
    if let Some(path) = table {
        write_file(path, &text)?;
    }
    Ok(text)
}

pub fn loss_csv_text(report: &TrainReport) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (e, l) in report.loss_history.iter().enumerate() {
        let _ = writeln!(out, "{},{}", e + 1, l);
    }
    out
}

/// Query groups plus, in text mode, the embedding table.
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub table: Option<EmbeddingTable>,
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, mode: Mode) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("--{flag} is required in {mode} mode"))
}

pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    match cfg.mode {
        Mode::RanknetFeatures => {
            let path = require(&cfg.letor, "letor", cfg.mode)?;
            let mut groups = load_letor(path)?;
            if cfg.normalize {
                groups = min_max_normalize(&groups);
            }
            Ok(Dataset { groups, table: None })
        }
        Mode::Convranknet => {
            let table = load_table(cfg.embeddings.as_deref(), cfg.seed)?;
            let docs = parse_ohsumed_docs(require(&cfg.docs, "docs", cfg.mode)?).context("reading documents")?;
            let queries = parse_ohsumed_queries(require(&cfg.queries, "queries", cfg.mode)?).context("reading queries")?;
            let judgments = parse_judgments(require(&cfg.judgments, "judgments", cfg.mode)?).context("reading judgments")?;
            let groups = assemble_text_groups(&queries, &docs, &judgments);
            Ok(Dataset { groups, table: Some(table) })
        }
    }
}

fn load_table(path: Option<&Path>, seed: u64) -> CliResult<EmbeddingTable> {
    let path = path.ok_or_else(|| anyhow!("--embeddings is required in convranknet mode"))?;
    load_embeddings(path, seed).with_context(|| format!("loading embeddings {}", path.display()))
}

/// A single file, or a LETOR fold directory whose `Fold1` train, validation
/// and test files together hold every query once.
fn load_letor(path: &Path) -> CliResult<Vec<QueryGroup>> {
    if path.is_dir() {
        let mut text = String::new();
        for name in ["train.txt", "vali.txt", "test.txt"] {
            let file = path.join("Fold1").join(name);
            text.push_str(&fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?);
            text.push('\n');
        }
        return parse_letor_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    parse_letor(path).with_context(|| format!("parsing {}", path.display()))
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub pairs: usize,
}

/// Trains the configured model on fold `fold`'s training split.
pub fn cmd_train(cfg: &RunConfig, fold: usize) -> CliResult<TrainOutcome> {
    let data = load_dataset(cfg)?;
    let split = make_folds(&data.groups, &FoldPlan::ohsumed(), fold)?;
    let tc = cfg.train_config();
    match cfg.mode {
        Mode::RanknetFeatures => {
            let (corpus, triples) = feature_corpus(&split.train)?;
            let input_dim = corpus
                .groups
                .iter()
                .flatten()
                .next()
                .map(Vec::len)
                .ok_or_else(|| anyhow!("fold {fold} has no training documents"))?;
            let mut model = RankNetModel::new(RankNetConfig { input_dim, hidden: cfg.hidden }, cfg.seed)?;
            let report = train(&mut model, &corpus, &triples, &tc).with_context(|| format!("training on fold {fold}"))?;
            Ok(TrainOutcome { model: Model::Features(model), report, pairs: triples.len() })
        }
        Mode::Convranknet => {
            let table = data.table.as_ref().expect("text mode loads a table");
            let (corpus, triples) = text_corpus(&split.train, table, cfg.trunc_len)?;
            let mut model = ConvRankNet::init(cfg.encoder_config(table.dim()), cfg.hidden, cfg.seed)?;
            let report = train(&mut model, &corpus, &triples, &tc).with_context(|| format!("training on fold {fold}"))?;
            Ok(TrainOutcome { model: Model::Conv(model), report, pairs: triples.len() })
        }
    }
}

/// Frozen-model evaluation over the test splits of the selected folds.
pub fn cmd_evaluate(
    run: &RunArgs,
    model_path: Option<&Path>,
    oracle: bool,
    name: Option<String>,
) -> CliResult<(MetricTable, Vec<QueryRecord>)> {
    let file = match model_path {
        Some(p) if !oracle => Some(ModelFile::load(p).with_context(|| format!("loading {}", p.display()))?),
        _ => None,
    };
    let cfg = run.resolve()?;
    if let Some(f) = &file {
        if f.model.mode() != cfg.mode {
            bail!("model was trained in {} mode but the run is configured for {} mode", f.model.mode(), cfg.mode);
        }
    }
    let data = load_dataset(&cfg)?;
    let (scorer, default_name): (Box<dyn Scorer + '_>, &str) = match (&file, &data.table) {
        (None, _) => (Box::new(OracleScorer), "oracle"),
        (Some(ModelFile { model: Model::Features(m), .. }), _) => (Box::new(m.clone()), "ranknet"),
        (Some(ModelFile { model: Model::Conv(m), .. }), Some(table)) => (
            Box::new(ConvScorer { model: m.clone(), table, trunc_len: cfg.trunc_len }),
            "convranknet",
        ),
        (Some(_), None) => bail!("convranknet evaluation needs --embeddings"),
    };
    let method = name.unwrap_or_else(|| default_name.to_string());
    let mut records = Vec::new();
    for fold in cfg.fold_list() {
        let split = make_folds(&data.groups, &FoldPlan::ohsumed(), fold)?;
        for q in evaluate_fold(scorer.as_ref(), &split.test, K_MAX)? {
            for (k, &value) in q.ndcg.iter().enumerate() {
                records.push(QueryRecord { query_id: q.query_id, fold, method: method.clone(), k: k + 1, value });
            }
        }
    }
    Ok((MetricTable::from_records(&records, K_MAX), records))
}

/// Cross-validates the configured model, plus any named baselines.
pub fn cmd_cv(cfg: &RunConfig, baselines: &[String]) -> CliResult<(MetricTable, Vec<QueryRecord>)> {
    let data = load_dataset(cfg)?;
    let tc = cfg.train_config();
    let ranknet = RankNetMethod { hidden: cfg.hidden, train: tc.clone() };
    let conv = data.table.as_ref().map(|table| ConvRankNetMethod {
        table,
        encoder: cfg.encoder_config(table.dim()),
        hidden: cfg.hidden,
        trunc_len: cfg.trunc_len,
        train: tc.clone(),
    });
    let random = RandomMethod { seed: cfg.seed };
    let mut methods: Vec<&dyn Method> = match (&cfg.mode, &conv) {
        (Mode::Convranknet, Some(c)) => vec![c],
        _ => vec![&ranknet],
    };
    for b in baselines {
        match b.as_str() {
            "random" => methods.push(&random),
            "oracle" => methods.push(&OracleMethod),
            other => bail!("unknown baseline {other:?} (expected random or oracle)"),
        }
    }
    let outcome = cross_validate(&methods, &data.groups, &FoldPlan::ohsumed(), &cfg.fold_list(), K_MAX)?;
    info!("cross-validation finished: {} records", outcome.records.len());
    Ok((outcome.table, outcome.records))
}

pub struct RankOutcome {
    /// `(input index, score)` by descending score, ties in input order.
    pub ranking: Vec<(usize, f64)>,
    pub doc_passes: u64,
    pub query_passes: u64,
}

/// Scores each document once and sorts; document pairs are never compared.
pub fn cmd_rank(
    file: &ModelFile,
    query: &str,
    docs: &[&str],
    embeddings: Option<&Path>,
    trunc_len: Option<usize>,
) -> CliResult<RankOutcome> {
    let echo: RunConfig = serde_json::from_value(file.config.clone()).unwrap_or_default();
    let (scores, doc_passes, query_passes) = match &file.model {
        Model::Features(m) => {
            let scores = docs
                .iter()
                .enumerate()
                .map(|(i, line)| {
                    let x = parse_feature_line(line).with_context(|| format!("document line {}", i + 1))?;
                    Ok(m.score(&x)?)
                })
                .collect::<CliResult<Vec<f64>>>()?;
            (scores, 0, 0)
        }
        Model::Conv(m) => {
            let path = embeddings.or(echo.embeddings.as_deref());
            let table = load_table(path, echo.seed)?;
            let trunc = trunc_len.unwrap_or(echo.trunc_len);
            let before = m.encoder.forward_passes();
            let v_q = m.encode_eval(&to_sentence_matrix(query, &table, trunc)?)?;
            let after_query = m.encoder.forward_passes();
            let scores = docs
                .iter()
                .map(|d| Ok(m.score_conv(&v_q, &to_sentence_matrix(d, &table, trunc)?)?))
                .collect::<CliResult<Vec<f64>>>()?;
            (scores, m.encoder.forward_passes() - after_query, after_query - before)
        }
    };
    let ranking = crate::ordering::rank_by_score(&scores)
        .into_iter()
        .map(|i| (i, scores[i]))
        .collect();
    Ok(RankOutcome { ranking, doc_passes, query_passes })
}

/// Plain numbers, or LETOR-style `k:v` pairs (a leading label and `qid:` are ignored).
fn parse_feature_line(line: &str) -> CliResult<Vec<f64>> {
    let body = line.split('#').next().unwrap_or_default();
    if body.contains(':') {
        let groups = parse_letor_str(&format!("0 qid:1 {}", body.split_whitespace().filter(|t| t.contains(':') && !t.starts_with("qid:")).collect::<Vec<_>>().join(" ")))?;
        let doc = &groups[0].docs[0];
        return Ok(doc.features().unwrap_or_default().to_vec());
    }
    body.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| anyhow!("bad feature value {t:?}")))
        .collect()
}

pub fn cmd_significance(a: &Path, b: &Path, k: usize, method_a: Option<&str>, method_b: Option<&str>) -> CliResult<WilcoxonResult> {
    let load = |path: &Path, method: Option<&str>| -> CliResult<Vec<QueryRecord>> {
        let recs = read_records(path).with_context(|| format!("reading {}", path.display()))?;
        let recs: Vec<QueryRecord> = match method {
            Some(m) => recs.into_iter().filter(|r| r.method == m).collect(),
            None => recs,
        };
        let mut names: Vec<&str> = recs.iter().map(|r| r.method.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() > 1 {
            bail!("{} holds several methods ({}); pick one with --method-a/--method-b", path.display(), names.join(", "));
        }
        Ok(recs)
    };
    Ok(significance(&load(a, method_a)?, &load(b, method_b)?, k)?)
}

/// Runs the order check for every `n` in `1..=n_max` and `seeds` random
/// injective score vectors, under three sign-preserving comparators.
pub fn cmd_verify(n_max: usize, seeds: u64, inject_tie: bool) -> CliResult<String> {
    let psis: [fn(f64) -> f64; 3] = [|x| x, f64::tanh, |x| x * x * x];
    let mut out = String::from("n\tcases\tagreements\n");
    let mut failures = 0usize;
    for n in 1..=n_max {
        let mut agree = 0usize;
        let mut cases = 0usize;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(n as u64));
            let mut scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if inject_tie && n >= 2 {
                scores[1] = scores[0];
            }
            for psi in &psis {
                cases += 1;
                match verify_theorem1(&scores, psi) {
                    Ok(true) => agree += 1,
                    Ok(false) => failures += 1,
                    Err(e @ Error::Precondition(_)) => return Err(anyhow!(e).context(format!("n = {n}, seed {seed}"))),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let _ = writeln!(out, "{n}\t{cases}\t{agree}");
    }
    if failures > 0 {
        bail!("{failures} disagreements between score order and tournament order\n{out}");
    }
    out.push_str("all cases agree\n");
    Ok(out)
}
