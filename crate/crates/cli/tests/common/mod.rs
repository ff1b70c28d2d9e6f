#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use narb_core::corpus::Span;
use narb_core::pools::{read_aux, read_pools};
use narb_core::seed;
use narb_core::store::{store_write, Pooling, SpanEmbedding, StoreMeta};
use narb_core::synth::noise_store;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn narb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_narb"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn narb")
}

/// Runs a subcommand that must succeed; returns the run directory it printed.
pub fn run_ok(args: &[&str]) -> PathBuf {
    let out = narb(args);
    assert!(
        out.status.success(),
        "narb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// ASP fixture ingested and pooled under `out`; returns (corpus, pools).
pub fn asp_pools(out: &Path) -> (PathBuf, PathBuf) {
    let f = fixtures();
    let ingest = run_ok(&[
        "ingest",
        "--out",
        s(out),
        "--source",
        "asp",
        "--asp-sermons",
        s(&f.join("asp/sermons")),
        "--asp-annotations",
        s(&f.join("asp/annotations.json")),
    ]);
    let corpus = ingest.join("corpus.jsonl");
    let pools = run_ok(&["pools", "--out", s(out), "--corpus", s(&corpus), "--task", "rhetorical"]).join("pools.jsonl");
    (corpus, pools)
}

/// Pooled noise store covering every span of a pool file.
pub fn noise_store_for(pools: &Path, n_layers: usize, dim: usize, path: &Path) {
    let examples = read_pools(pools).unwrap();
    let spans = examples.iter().flat_map(|e| std::iter::once(&e.anchor).chain(&e.candidates));
    let (meta, records) = noise_store(spans, n_layers, dim, 9);
    store_write(&meta, records, path).unwrap();
}

/// Token-level noise store covering every span of an auxiliary instance file.
pub fn token_store_for(aux: &Path, n_layers: usize, dim: usize, path: &Path) {
    let inst = read_aux(aux).unwrap();
    let mut spans: Vec<Span> = inst
        .iter()
        .flat_map(|i| std::iter::once(i.span_1.clone()).chain(i.span_2.clone()))
        .collect();
    spans.sort();
    spans.dedup();
    let meta = StoreMeta::new("synthetic-tokens", n_layers, dim, Pooling::Tokens);
    let records: Vec<SpanEmbedding> = spans
        .into_iter()
        .map(|span| {
            let mut rng = seed::rng(seed::derive(5, &span.key(), 0));
            let n = n_layers * span.len() * dim;
            SpanEmbedding {
                values: (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                span,
            }
        })
        .collect();
    store_write(&meta, records, path).unwrap();
}

/// Data lines of a CSV artifact (provenance comments dropped).
pub fn body(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn assert_header(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    for key in ["# config_hash=", "# seed=", "# content_version="] {
        let l = lines.next().unwrap_or_default();
        assert!(l.starts_with(key), "{}: expected `{key}`, got `{l}`", path.display());
    }
}
