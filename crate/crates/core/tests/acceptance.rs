//! Acceptance suite: one test per headline criterion, each printing a single
//! PASS/FAIL line (written straight to stderr so it shows without --nocapture).

use std::io::Write;
use std::path::PathBuf;

use convrank::cli::{cmd_rank, load_dataset, RunConfig};
use convrank::data::FoldPlan;
use convrank::embeddings::SentenceMatrix;
use convrank::encoder::{EncoderConfig, FilterSpec};
use convrank::eval::{cross_validate, evaluate_fold, ndcg_at_k, text_corpus, wilcoxon_two_tailed, RandomScorer, RankNetMethod, K_MAX};
use convrank::model_file::{Mode, Model, ModelFile};
use convrank::numerics::{grad_check, Matrix};
use convrank::ordering::{build_graph, rank_by_score, topo_sort, verify_theorem1, TopoOutcome};
use convrank::ranker::{
    mean_loss, pairwise_accuracy, ranknet_loss, ranknet_loss_grad, train, ConvRankNet, FeatureCorpus, PairwiseModel,
    RankNetConfig, RankNetModel, TextCorpus, TrainConfig, Triple, B1,
};
use convrank::synthetic::{planted_text, TextSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: &str, pass: bool, detail: &str) {
    let line = format!("{} {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{criterion}: {detail}");
}

const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn check_pair<M: PairwiseModel>(model: &mut M, corpus: &M::Corpus, t: &Triple) -> f64 {
    let r = grad_check(
        model,
        |m| Ok(ranknet_loss(m.margin(corpus, t)?, t.target)),
        |m| {
            let s = m.forward_pair(corpus, t, false, &mut ChaCha8Rng::seed_from_u64(0))?;
            m.backward_pair(corpus, ranknet_loss_grad(s, t.target))
        },
        GRAD_H,
        GRAD_TOL,
    )
    .unwrap();
    r.max_rel_error()
}

#[test]
fn gradient_correctness() {
    let mut worst_feat = 0.0f64;
    let mut worst_conv = 0.0f64;
    let triples = 24;
    for seed in 0..triples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let corpus = FeatureCorpus {
            groups: vec![(0..2).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()],
        };
        let mut model = RankNetModel::new(RankNetConfig { input_dim: dim, hidden: 10 }, seed).unwrap();
        // non-zero biases keep hidden units away from the ReLU kink
        for b in model.params.get_mut(B1).unwrap().value.as_mut_slice() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let t = Triple { query: 0, doc_i: 0, doc_j: 1, target: [0.0, 0.5, 1.0][seed as usize % 3] };
        worst_feat = worst_feat.max(check_pair(&mut model, &corpus, &t));

        let emb = 3;
        let cfg = EncoderConfig {
            embedding_dim: emb,
            filters: vec![FilterSpec { size: 1, copies: 2 }, FilterSpec { size: 2, copies: 2 }, FilterSpec { size: 3, copies: 1 }],
            dropout: 0.0,
        };
        let mut conv = ConvRankNet::init(cfg, 4, seed).unwrap();
        for (_, p) in conv.encoder.params.iter_mut() {
            for x in p.value.as_mut_slice() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        for b in conv.ranknet.params.get_mut(B1).unwrap().value.as_mut_slice() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let mut sentence = |valid: usize| {
            let mut m = Matrix::zeros(5, emb);
            for x in m.as_mut_slice().iter_mut().take(valid * emb) {
                *x = rng.gen_range(-1.0..1.0);
            }
            SentenceMatrix { matrix: m, valid_rows: valid }
        };
        let corpus = TextCorpus { queries: vec![sentence(2)], docs: vec![vec![sentence(4), sentence(3)]] };
        worst_conv = worst_conv.max(check_pair(&mut conv, &corpus, &t));
    }
    report(
        "gradient correctness",
        worst_feat < GRAD_TOL && worst_conv < GRAD_TOL,
        &format!("{triples} triples per model, max relative error RankNet {worst_feat:.2e}, ConvRankNet {worst_conv:.2e} (limit {GRAD_TOL:.0e})"),
    );
}

#[test]
fn loss_identities() {
    let ln2 = std::f64::consts::LN_2;
    let at_zero = [0.0, 0.5, 1.0].map(|t| (ranknet_loss(0.0, t) - ln2).abs());
    let identity_ok = at_zero.iter().all(|&e| e < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    for _ in 0..10_000 {
        let (a, b) = (rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0));
        let lambda: f64 = rng.gen_range(0.0..=1.0);
        let t = rng.gen_range(0.0..=1.0);
        let mid = ranknet_loss(lambda * a + (1.0 - lambda) * b, t);
        let chord = lambda * ranknet_loss(a, t) + (1.0 - lambda) * ranknet_loss(b, t);
        if mid > chord + 1e-9 * (1.0 + chord.abs()) {
            violations += 1;
        }
    }
    report(
        "loss identities",
        identity_ok && violations == 0,
        &format!("|C(0,t) - ln 2| max {:.1e}; {violations} convexity violations in 10000 random triples", at_zero.iter().cloned().fold(0.0, f64::max)),
    );
}

#[test]
fn score_order_equals_tournament_order() {
    let mut cases = 0;
    let mut agree = 0;
    for n in 1..=8usize {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 97 + n as u64);
            // distinct integers shuffled, then jittered: injective by construction
            let mut base: Vec<usize> = (0..n).collect();
            base.shuffle(&mut rng);
            let scores: Vec<f64> = base.iter().map(|&b| b as f64 + rng.gen_range(0.0..0.5)).collect();
            cases += 1;
            if verify_theorem1(&scores, |x| x).unwrap() {
                agree += 1;
            }
        }
    }

    let mut cycles_found = 0;
    let trials = 200;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..=8);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let order = rank_by_score(&scores);
        // a < b < c in the order; reversing the a->c edge closes a 3-cycle a->b->c->a
        let mut pick: Vec<usize> = (0..n).collect();
        pick.shuffle(&mut rng);
        let mut three = [pick[0], pick[1], pick[2]];
        three.sort_unstable();
        let (a, c) = (order[three[0]], order[three[2]]);
        let g = build_graph(
            |i, j| {
                let flip = (i, j) == (a, c) || (i, j) == (c, a);
                let d = scores[i] - scores[j];
                if flip { -d } else { d }
            },
            n,
        )
        .unwrap();
        if matches!(topo_sort(&g), TopoOutcome::Cycle { .. }) {
            cycles_found += 1;
        }
    }
    report(
        "tournament order",
        agree == cases && cycles_found == trials,
        &format!("{agree}/{cases} score vectors agree (n <= 8); {cycles_found}/{trials} planted 3-cycles detected"),
    );
}

#[test]
fn linear_inference() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.txt");
    std::fs::write(&emb, "alpha 0.1 0.2 0.3\nbeta -0.4 0.5 0.1\ngamma 0.9 -0.2 0.0\n").unwrap();
    let cfg = EncoderConfig { embedding_dim: 3, filters: vec![FilterSpec { size: 2, copies: 3 }], dropout: 0.5 };
    let file = ModelFile {
        model: Model::Conv(ConvRankNet::init(cfg, 10, 1).unwrap()),
        config: serde_json::to_value(RunConfig { mode: Mode::Convranknet, trunc_len: 10, ..RunConfig::default() }).unwrap(),
    };
    let words = ["alpha", "beta", "gamma", "delta"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut details = Vec::new();
    let mut ok = true;
    for n in [1usize, 10, 100] {
        let docs: Vec<String> = (0..n)
            .map(|_| (0..rng.gen_range(1..6)).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" "))
            .collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let out = cmd_rank(&file, "alpha beta", &refs, Some(&emb), None).unwrap();
        ok &= out.doc_passes == n as u64 && out.ranking.len() == n;
        details.push(format!("n={n}: {} document passes (+{} query)", out.doc_passes, out.query_passes));
    }
    report("linear inference", ok, &details.join("; "));
}

#[test]
fn ndcg_correctness() {
    let perfect = (1..=5).all(|k| ndcg_at_k(&[2, 2, 1, 0, 0], k).unwrap() == 1.0);
    let hand = ndcg_at_k(&[0, 2], 2).unwrap();
    let oracle = (3.0 / 3f64.log2()) / 3.0;
    let hand_ok = (hand - 0.6309).abs() < 1e-4 && (hand - oracle).abs() < 1e-12;

    let grades = [2u8, 1, 0, 1];
    let group = convrank::data::QueryGroup {
        query_id: 1,
        query_text: None,
        docs: grades
            .iter()
            .enumerate()
            .map(|(i, &g)| convrank::data::Document {
                doc_id: i.to_string(),
                content: convrank::data::DocContent::Features(vec![]),
                grade: convrank::ranker::Grade::new(g).unwrap(),
            })
            .collect(),
    };
    let mut perms = Vec::new();
    permute(&mut grades.to_vec(), 0, &mut perms);
    let mut random_ok = true;
    let mut worst_z = 0.0f64;
    for k in 1..=4 {
        let exact = perms.iter().map(|p| ndcg_at_k(p, k).unwrap()).sum::<f64>() / perms.len() as f64;
        let samples: Vec<f64> = (0..1000u64)
            .map(|seed| evaluate_fold(&RandomScorer { seed }, &[&group], k).unwrap()[0].ndcg[k - 1])
            .collect();
        let mean = samples.iter().sum::<f64>() / 1000.0;
        let se = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 999.0 / 1000.0).sqrt();
        let z = (mean - exact).abs() / se;
        worst_z = worst_z.max(z);
        random_ok &= z < 3.0;
    }
    report(
        "NDCG correctness",
        perfect && hand_ok && random_ok && perms.len() == 24,
        &format!("perfect ranking = 1; [0,2]@2 = {hand:.6}; random scorer within {worst_z:.2} standard errors of the 24-permutation mean"),
    );
}

fn permute(items: &mut Vec<u8>, start: usize, out: &mut Vec<Vec<u8>>) {
    if start == items.len() {
        out.push(items.clone());
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, out);
        items.swap(start, i);
    }
}

/// Share of the 2^n sign patterns at least as extreme as the observed W+.
fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let n = d.len();
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let extreme = (0u32..1 << n)
        .filter(|mask| {
            let t: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            (t - mean).abs() >= (observed - mean).abs() - 1e-9
        })
        .count();
    extreme as f64 / (1u64 << n) as f64
}

#[test]
fn wilcoxon_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in 1..=12 {
        for _ in 0..25 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            if let Ok(r) = wilcoxon_two_tailed(&x, &y) {
                worst = worst.max((r.p_value - brute_force_p(&x, &y)).abs());
                checked += 1;
            }
        }
    }
    let y: Vec<f64> = (0..10).map(|i| (i as f64).sqrt()).collect();
    let x: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
    let shift = wilcoxon_two_tailed(&x, &y).unwrap().p_value;
    report(
        "Wilcoxon exactness",
        worst < 1e-12 && shift == 2.0 / 1024.0,
        &format!("{checked} samples (n <= 12) max |p - brute force| = {worst:.1e}; constant shift n=10 p = {shift}"),
    );
}

#[test]
fn overfit_smoke() {
    let started = std::time::Instant::now();
    // 4 queries x grades (2, 1, 0, 0): 5 preference pairs each
    let data = planted_text(&TextSpec { n_queries: 4, per_grade: [1, 1, 2], words_per_topic: 3, dim: 4, scale: 3.0, seed: 1 });
    let table = data.table(0).unwrap();
    let groups: Vec<_> = data.groups.iter().collect();
    let (corpus, triples) = text_corpus(&groups, &table, 12).unwrap();
    let cfg = EncoderConfig {
        embedding_dim: 4,
        filters: vec![FilterSpec { size: 1, copies: 8 }, FilterSpec { size: 2, copies: 8 }],
        dropout: 0.0,
    };
    let mut model = ConvRankNet::init(cfg, 10, 1).unwrap();
    let tc = TrainConfig { epochs: 500, lr: 1e-3, batch_size: 1, seed: 1 };
    train(&mut model, &corpus, &triples, &tc).unwrap();
    let loss = mean_loss(&model, &corpus, &triples).unwrap();
    let acc = pairwise_accuracy(&model, &corpus, &triples).unwrap();
    report(
        "overfit smoke",
        triples.len() == 20 && loss < 0.01 && acc == 1.0,
        &format!("{} triples, 500 epochs at lr 1e-3: mean loss {loss:.5}, pairwise accuracy {:.0}% in {:.1?}", triples.len(), acc * 100.0, started.elapsed()),
    );
}

/// Needs the LETOR OHSUMED feature data: point `CONVRANK_LETOR_OHSUMED` at
/// the combined feature file or at the directory holding `Fold1`..`Fold5`.
#[test]
fn letor_ohsumed_ranknet_reproduction() {
    const TARGET_AT_10: f64 = 0.4461;
    const TARGET_AT_1: f64 = 0.5737;
    let Some(path) = std::env::var_os("CONVRANK_LETOR_OHSUMED").map(PathBuf::from) else {
        report("LETOR OHSUMED RankNet reproduction", false, "dataset not available (set CONVRANK_LETOR_OHSUMED)");
        return;
    };
    let cfg = RunConfig { letor: Some(path), ..RunConfig::default() };
    let data = load_dataset(&cfg).unwrap();
    let method = RankNetMethod { hidden: cfg.hidden, train: cfg.train_config() };
    let out = cross_validate(&[&method], &data.groups, &FoldPlan::ohsumed(), &cfg.fold_list(), K_MAX).unwrap();
    let at10 = out.table.get("ranknet", 10).unwrap();
    let at1 = out.table.get("ranknet", 1).unwrap();
    report(
        "LETOR OHSUMED RankNet reproduction",
        (at10 - TARGET_AT_10).abs() <= 0.05 && (at1 - TARGET_AT_1).abs() <= 0.06,
        &format!("NDCG@10 {at10:.4} (target {TARGET_AT_10} +/- 0.05), NDCG@1 {at1:.4} (target {TARGET_AT_1} +/- 0.06)"),
    );
}
