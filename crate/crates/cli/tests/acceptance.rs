//! One test per acceptance criterion. Each prints a single
//! `PASS`/`FAIL`/`BLOCKED` line to stdout (uncaptured) before asserting.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use narb_core::corpus::{load_asp, make_splits, AspCorpus, SplitAssignment, SplitRatios};
use narb_core::experiment::{cross_validate, FoldResult};
use narb_core::metrics::{mean_std, random_ranking_map, rank_metrics, RankMetrics, RankingOutcome};
use narb_core::pools::{build_rhetorical_pools, AnchorMode, RankingExample, Task};
use narb_core::probes::{Embeddings, LayerSelector, Scorer, ScorerKind, SpanInput, TrainConfig};
use narb_core::prompt::{
    read_transcript, run_prompted_eval, ConstantProvider, OracleProvider, PromptSpec, ProviderConfig, ReplayProvider,
    POOL_SIZE,
};
use narb_core::seed;
use narb_core::synth::{asp_like_corpus, layer_signal_pools, noise_store, planted_pools};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

fn verdict(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "[acceptance] {tag} {name}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(pass, "{name}: {detail}");
}

fn blocked(name: &str, detail: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "[acceptance] BLOCKED {name}: {detail}").unwrap();
}

fn five_folds(ids: impl Iterator<Item = String>, seed: u64) -> Vec<SplitAssignment> {
    let mut ids: Vec<String> = ids.collect();
    ids.sort();
    ids.dedup();
    make_splits(&ids, 5, SplitRatios::default(), seed).unwrap()
}

fn fold_map(results: &[FoldResult]) -> f64 {
    mean_std(&results.iter().map(|r| r.metrics.ap).collect::<Vec<_>>()).mean
}

/// Real ASP corpus from `NARB_ASP_SERMONS` / `NARB_ASP_ANNOTATIONS`, or `data/asp/`.
fn real_asp() -> Option<AspCorpus> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/asp");
    let sermons = std::env::var_os("NARB_ASP_SERMONS").map(PathBuf::from).unwrap_or(root.join("sermons"));
    let ann = std::env::var_os("NARB_ASP_ANNOTATIONS")
        .map(PathBuf::from)
        .unwrap_or(root.join("annotations.json"));
    (sermons.is_dir() && ann.is_file()).then(|| load_asp(&sermons, &ann).expect("ASP corpus loads").value)
}

fn rhetorical_pools(corpus: &AspCorpus, seed: u64) -> Vec<RankingExample> {
    build_rhetorical_pools(corpus, 18, seed, AnchorMode::AllBranches).unwrap().value
}

// Independent reference: stable descending sort, then plain counting.
fn brute_force(scores: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && scores[idx[j - 1]] < scores[idx[j]] {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let ranked: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
    let first = ranked.iter().position(|&l| l).unwrap();
    let mut hits = 0.0;
    let mut ap = 0.0;
    for (k, &l) in ranked.iter().enumerate() {
        if l {
            hits += 1.0;
            ap += hits / (k + 1) as f64;
        }
    }
    let mut good = 0.0;
    let mut total = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                total += 1.0;
                if scores[i] > scores[j] {
                    good += 1.0;
                }
            }
        }
    }
    (1.0 / (first + 1) as f64, ap / hits, good / total)
}

#[test]
fn metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = seed::rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(3..=40);
        let p = rng.random_range(1..=10.min(n - 1));
        let mut labels: Vec<bool> = (0..n).map(|i| i < p).collect();
        labels.shuffle(&mut rng);
        // coarse integer scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
        let m = rank_metrics(&RankingOutcome::from_scores(&scores, &labels).unwrap());
        let (mrr, ap, pa) = brute_force(&scores, &labels);
        worst = worst.max((m.mrr - mrr).abs()).max((m.ap - ap).abs()).max((m.pairwise_accuracy - pa).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "metric-oracle-equivalence",
        worst <= 1e-9 && secs < 5.0,
        &format!("1000 outcomes, max |diff| {worst:.2e} (tol 1e-9), {secs:.2}s (limit 5s)"),
    );
}

#[test]
fn distance_only_reproduction_on_asp() {
    let Some(corpus) = real_asp() else {
        blocked(
            "distance-reproduction-asp",
            "ASP corpus not present (set NARB_ASP_SERMONS and NARB_ASP_ANNOTATIONS, or place it under data/asp); \
             target MAP 0.9843 ± 0.02 not checked",
        );
        return;
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let map = pool.install(|| {
        let pools = rhetorical_pools(&corpus, seed::derive(0, "pools", 0));
        let folds = five_folds(corpus.sermons.iter().map(|d| d.doc_id.clone()), seed::derive(0, "splits", 0));
        let cfg = TrainConfig { layer_selector: LayerSelector::Single(0), ..TrainConfig::default() };
        fold_map(&cross_validate(&pools, &folds, None, ScorerKind::Distance, &cfg).unwrap())
    });
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "distance-reproduction-asp",
        (map - 0.9843).abs() <= 0.02 && secs < 120.0,
        &format!("MAP {map:.4} (target 0.9843 ± 0.02), {secs:.1}s on one thread (limit 120s)"),
    );
}

#[test]
fn full_vs_distance_parity_on_noise_store() {
    let (corpus, source) = match real_asp() {
        Some(c) => (c, "ASP pools"),
        None => (asp_like_corpus(20, 8, 600, 3), "synthetic sermon pools (ASP corpus absent)"),
    };
    let pools = rhetorical_pools(&corpus, 3);
    let folds = five_folds(corpus.sermons.iter().map(|d| d.doc_id.clone()), 3);
    let cfg = TrainConfig { layer_selector: LayerSelector::Single(0), ..TrainConfig::default() };
    let dist = fold_map(&cross_validate(&pools, &folds, None, ScorerKind::Distance, &cfg).unwrap());
    let spans = pools.iter().flat_map(|e| std::iter::once(&e.anchor).chain(&e.candidates));
    let (meta, recs) = noise_store(spans, 1, 16, 3);
    let emb = Embeddings::from_records(&meta, recs, LayerSelector::Single(0)).unwrap();
    let full = fold_map(&cross_validate(&pools, &folds, Some(&emb), ScorerKind::Full, &cfg).unwrap());
    verdict(
        "full-vs-distance-parity",
        (full - dist).abs() <= 0.02,
        &format!("{source}: MAP full {full:.4} vs distance {dist:.4}, |diff| {:.4} (tol 0.02)", (full - dist).abs()),
    );
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

#[test]
fn gradient_checks_against_central_differences() {
    let (d, l, h) = (5, 3, 6);
    let mut worst = 0.0f64;
    let mut rng = seed::rng(7);
    for kind in [ScorerKind::Mlp, ScorerKind::Full] {
        for point in 0..100 {
            let mut scorer = Scorer::new(kind, d, LayerSelector::AllLayers, l, h, point).unwrap();
            scorer.params.iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
            let spans: Vec<_> = (0..5)
                .map(|i| narb_core::corpus::Span::new("doc", 4 * i, 4 * i + 1 + i % 3).unwrap())
                .collect();
            let embs: Vec<Vec<f64>> = (0..5).map(|_| (0..l * d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let input = |i: usize| SpanInput { span: &spans[i], emb: Some(&embs[i]) };
            let cands: Vec<SpanInput> = (1..5).map(input).collect();
            let labels = [true, false, true, false];
            let loss = |s: &Scorer| s.pool_loss(&input(0), &cands, &labels, None).unwrap().0;
            let mut grad = vec![0.0; scorer.n_params()];
            scorer.pool_loss(&input(0), &cands, &labels, Some(&mut grad)).unwrap();
            let eps = 1e-6;
            let numeric: Vec<f64> = (0..scorer.n_params())
                .map(|k| {
                    let mut s = scorer.clone();
                    s.params[k] += eps;
                    let up = loss(&s);
                    s.params[k] -= 2.0 * eps;
                    (up - loss(&s)) / (2.0 * eps)
                })
                .collect();
            worst = worst.max(rel_err(&grad, &numeric));
        }
    }
    verdict(
        "gradient-checks",
        worst < 1e-4,
        &format!("mlp and full heads with scalar mix, 2x100 random points, max relative error {worst:.2e} (tol 1e-4)"),
    );
}

#[test]
fn planted_structure_sanity() {
    let data = planted_pools(500, 4, 16, 64, 0.1, 11);
    let emb = Embeddings::from_records(&data.meta, data.records.clone(), LayerSelector::Single(0)).unwrap();
    let folds = five_folds(data.examples.iter().map(|e| e.anchor.doc_id.clone()), 11);
    let cfg = TrainConfig { layer_selector: LayerSelector::Single(0), ..TrainConfig::default() };
    let planted = fold_map(&cross_validate(&data.examples, &folds, Some(&emb), ScorerKind::Cosine, &cfg).unwrap());

    let mut rng = seed::rng(12);
    let permuted: Vec<RankingExample> = data
        .examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.labels.shuffle(&mut rng);
            e
        })
        .collect();
    let res = cross_validate(&permuted, &folds, Some(&emb), ScorerKind::Cosine, &cfg).unwrap();
    let shuffled = fold_map(&res);
    let shapes: Vec<(usize, usize)> = res
        .iter()
        .flat_map(|r| &r.test_examples)
        .map(|e| (e.candidates.len(), e.n_positive()))
        .collect();
    let expected = random_ranking_map(&shapes, 10_000, 13).unwrap();
    verdict(
        "planted-structure",
        planted > 0.95 && (shuffled - expected).abs() <= 0.05,
        &format!(
            "cosine MAP {planted:.4} (> 0.95); permuted MAP {shuffled:.4} vs Monte-Carlo {expected:.4} (tol 0.05)"
        ),
    );
}

#[test]
fn scalar_mix_selectivity() {
    let signal = 3;
    let data = layer_signal_pools(60, 4, 16, 6, signal, 16, 0.1, 5);
    let emb = Embeddings::from_records(&data.meta, data.records.clone(), LayerSelector::AllLayers).unwrap();
    let folds = five_folds(data.examples.iter().map(|e| e.anchor.doc_id.clone()), 5);
    let res = cross_validate(&data.examples, &folds, Some(&emb), ScorerKind::Linear, &TrainConfig::default()).unwrap();
    let argmax: Vec<usize> = res
        .iter()
        .map(|r| {
            let w = r.mix_weights().unwrap();
            (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap()
        })
        .collect();
    let hits = argmax.iter().filter(|&&a| a == signal).count();
    verdict(
        "scalar-mix-selectivity",
        hits >= 4,
        &format!("signal in layer {signal} of 6; argmax per fold {argmax:?}; {hits}/5 folds (need 4)"),
    );
}

#[test]
fn determinism_of_cli_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, pools_a) = asp_pools(a.path());
    let (_, pools_b) = asp_pools(b.path());
    let mut same = vec![("pools.jsonl", std::fs::read(&pools_a).unwrap() == std::fs::read(&pools_b).unwrap())];

    let shared = tempfile::tempdir().unwrap();
    let pools = shared.path().join("pools.jsonl");
    std::fs::copy(&pools_a, &pools).unwrap();
    let store = shared.path().join("noise.narb");
    noise_store_for(&pools, 2, 8, &store);
    let train = |out: &std::path::Path, jobs: &str| {
        run_ok(&[
            "train", "--out", s(out), "--pools", s(&pools), "--store", s(&store), "--scorer", "mlp", "--hidden", "8",
            "--epochs", "3", "--jobs", jobs,
        ])
    };
    let (ra, rb) = (train(a.path(), "0"), train(b.path(), "1"));
    for f in ["results.csv", "probes/fold0.bin", "probes/fold1.bin", "probes/fold2.bin", "probes/fold3.bin", "probes/fold4.bin"] {
        same.push((f, std::fs::read(ra.join(f)).unwrap() == std::fs::read(rb.join(f)).unwrap()));
    }
    let ann = fixtures().join("annotations.jsonl");
    let base = |out: &std::path::Path| run_ok(&["baselines", "--out", s(out), "--annotations", s(&ann), "--n-pairs", "30"]);
    let (ba, bb) = (base(a.path()), base(b.path()));
    same.push(("baselines results.csv", std::fs::read(ba.join("results.csv")).unwrap() == std::fs::read(bb.join("results.csv")).unwrap()));
    let differing: Vec<&str> = same.iter().filter(|(_, ok)| !ok).map(|(f, _)| *f).collect();
    verdict(
        "determinism",
        differing.is_empty(),
        &format!("{} artifacts compared across two runs (one single-threaded); differing: {differing:?}", same.len()),
    );
}

#[test]
fn monotone_invariance_under_exp() {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(200));
    let strategy = (3usize..40).prop_flat_map(|n| {
        (prop::collection::vec(-20.0f64..20.0, n), prop::collection::vec(any::<bool>(), n))
    });
    let result = runner.run(&strategy, |(scores, mut labels)| {
        labels[0] = true;
        let last = labels.len() - 1;
        labels[last] = false;
        let a = rank_metrics(&RankingOutcome::from_scores(&scores, &labels).unwrap());
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let b = rank_metrics(&RankingOutcome::from_scores(&exp, &labels).unwrap());
        prop_assert_eq!(a, b);
        Ok(())
    });
    verdict(
        "monotone-invariance",
        result.is_ok(),
        &match result {
            Ok(()) => "200 random examples: MRR, AP and pairwise accuracy unchanged by exp".to_string(),
            Err(e) => format!("{e}"),
        },
    );
}

fn synthetic_prompt_specs(n: usize) -> (Vec<PromptSpec>, Vec<Vec<bool>>) {
    let mut rng = seed::rng(21);
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let cands: Vec<String> = (0..POOL_SIZE).map(|c| format!("candidate text {i}-{c}")).collect();
        let mut l: Vec<bool> = (0..POOL_SIZE).map(|c| c < 1 + i % 4).collect();
        l.shuffle(&mut rng);
        specs.push(PromptSpec::new(format!("ex{i}"), Task::Narrative, format!("anchor story {i}"), cands, None, 3).unwrap());
        labels.push(l);
    }
    (specs, labels)
}

#[test]
fn prompt_harness_offline() {
    let dir = tempfile::tempdir().unwrap();
    let (specs, labels) = synthetic_prompt_specs(25);
    let cfg = ProviderConfig { backoff_ms: 1, ..ProviderConfig::default() };
    let oracle = OracleProvider::new(specs.iter().zip(labels.iter().map(Vec::as_slice)));
    let transcript = dir.path().join("t.jsonl");
    let o = run_prompted_eval(&specs, &labels, &oracle, &cfg, Some(&transcript)).unwrap();
    let c = run_prompted_eval(&specs, &labels, &ConstantProvider(5.0), &cfg, None).unwrap();
    let replay = ReplayProvider::from_transcript(&transcript).unwrap();
    let r = run_prompted_eval(&specs, &labels, &replay, &cfg, None).unwrap();
    let om = o.metrics.unwrap();
    let cm = c.metrics.unwrap();
    let bits = |m: RankMetrics| [m.mrr.to_bits(), m.ap.to_bits(), m.pairwise_accuracy.to_bits()];
    let replay_exact = r.metrics.map(bits) == Some(bits(om))
        && r.examples.iter().zip(&o.examples).all(|(a, b)| a.scores == b.scores);
    let logged = read_transcript(&transcript).unwrap().len();
    verdict(
        "prompt-harness-offline",
        om.ap == 1.0 && cm.pairwise_accuracy == 0.0 && replay_exact,
        &format!(
            "oracle MAP {}, constant pairwise accuracy {}, replay bit-exact {replay_exact} ({logged} transcript entries)",
            om.ap, cm.pairwise_accuracy
        ),
    );
}

/// Needs published activations of the smallest model; see README.
#[test]
#[ignore]
fn probe_reproduction_at_1b_scale() {
    let var = |k: &str| std::env::var_os(k).map(PathBuf::from);
    let (Some(rhet_store), Some(narr_store), Some(narr_pools)) =
        (var("NARB_1B_RHETORICAL_STORE"), var("NARB_1B_NARRATIVE_STORE"), var("NARB_ARN_POOLS"))
    else {
        blocked(
            "probe-reproduction-1b",
            "set NARB_1B_RHETORICAL_STORE, NARB_1B_NARRATIVE_STORE, NARB_ARN_POOLS and the ASP variables",
        );
        panic!("extended criterion needs external stores");
    };
    let corpus = real_asp().expect("ASP corpus");
    let run = |pools: Vec<RankingExample>, store: &std::path::Path| {
        let store = narb_core::store::EmbedStore::open(store).unwrap();
        let spans = pools.iter().flat_map(|e| std::iter::once(&e.anchor).chain(&e.candidates));
        let emb = Embeddings::from_store(&store, spans, LayerSelector::AllLayers).unwrap();
        let folds = five_folds(pools.iter().map(|e| e.anchor.doc_id.clone()), seed::derive(0, "splits", 0));
        fold_map(&cross_validate(&pools, &folds, Some(&emb), ScorerKind::Mlp, &TrainConfig::default()).unwrap())
    };
    let rhet = run(rhetorical_pools(&corpus, seed::derive(0, "pools", 0)), &rhet_store);
    let narr = run(narb_core::pools::read_pools(&narr_pools).unwrap(), &narr_store);
    verdict(
        "probe-reproduction-1b",
        (rhet - 0.9278).abs() <= 0.03 && (narr - 0.3506).abs() <= 0.03,
        &format!("rhetorical MLP MAP {rhet:.4} (0.9278 ± 0.03), narrative {narr:.4} (0.3506 ± 0.03)"),
    );
}
