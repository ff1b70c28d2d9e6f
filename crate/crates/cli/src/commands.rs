use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;

use narb_core::baselines::{read_annotations, sample_pairs, score_pairs, separation_auc, write_scores_csv, Method};
use narb_core::corpus::{
    self, load_arn, load_arn_relations, load_asp, load_litbank, make_splits, read_corpus, write_corpus, ArnRelations,
    CorpusRecord, Document, SplitAssignment, SplitRatios,
};
use narb_core::experiment::{cross_validate, FoldResult};
use narb_core::metrics::{
    mean_std, read_results_csv, write_results_csv, write_results_json, ClassMetrics, RankMetrics, ResultRow, RunHeader,
};
use narb_core::pools::{
    build_aux_instances, build_narrative_pools, build_rhetorical_pools, partition_by_fold, read_aux, read_pools,
    write_aux, write_pools, AnchorMode, AuxInstance, AuxTask, RankingExample, Task,
};
use narb_core::probes::{
    evaluate, evaluate_span_classifier, load_probe, save_probe, train_span_classifier, write_rankings_csv, Embeddings,
    HeadKind, LayerSelector, ScorerKind, SpanClassifierConfig, TokenEmbeddings, TrainConfig,
};
use narb_core::prompt::{
    run_prompted_eval, ConstantProvider, OracleProvider, PromptSpec, Provider, ProviderConfig, ReplayProvider,
    POOL_SIZE,
};
use narb_core::seed;
use narb_core::store::EmbedStore;

use crate::config::{config_err, RunConfig};

/// Either a ranking task or an auxiliary span task.
#[derive(Debug, Clone, Copy)]
enum AnyTask {
    Ranking(Task),
    Aux(AuxTask),
}

fn task_of(cfg: &RunConfig) -> Result<AnyTask> {
    let s = cfg.str("task");
    if let Ok(t) = s.parse::<Task>() {
        return Ok(AnyTask::Ranking(t));
    }
    s.parse::<AuxTask>()
        .map(AnyTask::Aux)
        .map_err(|_| config_err("task", format!("unknown task `{s}`")).into())
}

fn ranking_task(cfg: &RunConfig) -> Result<Task> {
    match task_of(cfg)? {
        AnyTask::Ranking(t) => Ok(t),
        AnyTask::Aux(_) => Err(config_err("task", "this command needs narrative or rhetorical").into()),
    }
}

/// Run directory plus the provenance stamped on its artifacts.
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub header: RunHeader,
}

impl Run {
    pub fn start(cfg: RunConfig, command: &str) -> Result<Self> {
        cfg.validate()?;
        cfg.check_paths()?;
        let seed: u64 = cfg.parse("seed")?;
        let header = RunHeader {
            config_hash: cfg.hash(),
            seed,
            content_version: cfg.content_version().context("hashing inputs")?,
        };
        let dir = PathBuf::from(cfg.str("out")).join(&header.config_hash);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("config.ini"), cfg.to_ini())?;
        let manifest = json!({ "command": command, "header": header });
        std::fs::write(
            dir.join(format!("{command}.manifest.json")),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(Run { cfg, dir, header })
    }

    fn seed(&self) -> u64 {
        self.header.seed
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

pub fn ingest(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let records: Vec<CorpusRecord> = match cfg.str("source") {
        "arn" => {
            let threshold: f64 = cfg.parse("threshold")?;
            let narratives = load_arn(&cfg.require_path("arn_narratives")?, &cfg.require_path("arn_scores")?, threshold)?;
            info!("{} narratives kept at threshold {threshold}", narratives.len());
            narratives.iter().map(CorpusRecord::from_narrative).collect()
        }
        "asp" => {
            let asp = load_asp(&cfg.require_path("asp_sermons")?, &cfg.require_path("asp_annotations")?)?;
            info!(
                "{} sermons, {} branch sets, {:.2} branches per set",
                asp.value.sermons.len(),
                asp.value.branch_sets.len(),
                asp.value.mean_branches()
            );
            CorpusRecord::from_asp(&asp.value)
        }
        "litbank" => {
            let docs = load_litbank(&cfg.require_path("litbank_dir")?)?;
            docs.value.iter().map(CorpusRecord::from_litbank).collect()
        }
        "" => return Err(config_err("source", "required for ingest").into()),
        other => return Err(config_err("source", format!("unknown source `{other}`")).into()),
    };
    write_corpus(&run.path("corpus.jsonl"), &records)?;
    Ok(())
}

fn load_records(cfg: &RunConfig) -> Result<Vec<CorpusRecord>> {
    Ok(read_corpus(&cfg.require_path("corpus")?)?)
}

fn relations(cfg: &RunConfig) -> Result<ArnRelations> {
    Ok(match cfg.path("arn_relations") {
        Some(p) => load_arn_relations(&p)?,
        None => ArnRelations::new(),
    })
}

fn build_ranking(cfg: &RunConfig, task: Task, records: &[CorpusRecord], seed: u64) -> Result<Vec<RankingExample>> {
    let pool_seed = seed::derive(seed, "pools", 0);
    let built = match task {
        Task::Narrative => {
            let narratives = corpus::normalized::narratives(records);
            build_narrative_pools(&narratives, &relations(cfg)?, cfg.parse("x_pos")?, cfg.parse("y_neg")?, pool_seed)?
        }
        Task::Rhetorical => {
            let anchors = match cfg.str("anchors") {
                "all" => AnchorMode::AllBranches,
                "first" => AnchorMode::FirstBranchOnly,
                other => return Err(config_err("anchors", format!("expected all or first, got `{other}`")).into()),
            };
            build_rhetorical_pools(&corpus::normalized::asp(records), cfg.parse("n_neg")?, pool_seed, anchors)?
        }
    };
    if built.value.is_empty() {
        bail!("no {task} pools could be built from the corpus");
    }
    Ok(built.value)
}

fn build_aux(records: &[CorpusRecord], task: AuxTask, seed: u64) -> Result<Vec<AuxInstance>> {
    let docs = corpus::normalized::litbank(records);
    let built = build_aux_instances(task, &docs, seed::derive(seed, "aux", 0))?;
    Ok(built.value)
}

pub fn pools(run: &Run) -> Result<()> {
    let records = load_records(&run.cfg)?;
    match task_of(&run.cfg)? {
        AnyTask::Ranking(task) => {
            let examples = build_ranking(&run.cfg, task, &records, run.seed())?;
            info!("{} {task} pools", examples.len());
            write_pools(&run.path("pools.jsonl"), &examples)?;
        }
        AnyTask::Aux(task) => {
            let inst = build_aux(&records, task, run.seed())?;
            info!("{} instances", inst.len());
            write_aux(&run.path("aux.jsonl"), &inst)?;
        }
    }
    Ok(())
}

/// Pools from `pools=` when given, else built from the corpus.
fn ranking_examples(cfg: &RunConfig, task: Task, seed: u64) -> Result<Vec<RankingExample>> {
    match cfg.path("pools") {
        Some(p) => {
            let all = read_pools(&p)?;
            let n = all.len();
            let ex: Vec<_> = all.into_iter().filter(|e| e.task == task).collect();
            if ex.is_empty() {
                return Err(config_err("pools", format!("{} holds no {task} pools ({n} others)", p.display())).into());
            }
            Ok(ex)
        }
        None => build_ranking(cfg, task, &load_records(cfg)?, seed),
    }
}

fn aux_instances(cfg: &RunConfig, task: AuxTask, seed: u64) -> Result<Vec<AuxInstance>> {
    match cfg.path("pools") {
        Some(p) => Ok(read_aux(&p)?.into_iter().filter(|i| i.task == task).collect()),
        None => build_aux(&load_records(cfg)?, task, seed),
    }
}

fn folds_over(cfg: &RunConfig, docs: impl Iterator<Item = String>, seed: u64) -> Result<Vec<SplitAssignment>> {
    let ids: Vec<String> = docs.collect::<BTreeSet<_>>().into_iter().collect();
    let k: usize = cfg.parse("folds")?;
    if k < 2 {
        return Err(config_err("folds", "need at least 2").into());
    }
    Ok(make_splits(&ids, k, SplitRatios::default(), seed::derive(seed, "splits", 0))?)
}

fn train_config(cfg: &RunConfig, selector: LayerSelector, seed: u64) -> Result<TrainConfig> {
    let tc = TrainConfig {
        learning_rate: cfg.parse("learning_rate")?,
        epochs: cfg.parse("epochs")?,
        batch_size: cfg.parse("batch_size")?,
        patience: cfg.parse("patience")?,
        seed,
        layer_selector: selector,
        hidden: cfg.parse("hidden")?,
        in_batch_negatives: cfg.parse("in_batch_negatives")?,
    };
    if !(tc.learning_rate > 0.0) {
        return Err(config_err("learning_rate", "must be > 0").into());
    }
    if tc.epochs == 0 {
        return Err(config_err("epochs", "must be >= 1").into());
    }
    if tc.batch_size < 2 {
        return Err(config_err("batch_size", "must be >= 2").into());
    }
    if tc.hidden == 0 {
        return Err(config_err("hidden", "must be >= 1").into());
    }
    Ok(tc)
}

fn open_store(cfg: &RunConfig) -> Result<EmbedStore> {
    let p = cfg.require_path("store")?;
    EmbedStore::open(&p).with_context(|| format!("opening store {}", p.display()))
}

fn embeddings_for(store: &EmbedStore, examples: &[RankingExample], selector: LayerSelector) -> Result<Embeddings> {
    if let LayerSelector::Single(l) = selector {
        if l >= store.meta().n_layers {
            return Err(config_err("layer", format!("store has {} layers", store.meta().n_layers)).into());
        }
    }
    let spans = examples.iter().flat_map(|e| std::iter::once(&e.anchor).chain(&e.candidates));
    Ok(Embeddings::from_store(store, spans, selector)?)
}

fn model_name(cfg: &RunConfig, store: Option<&EmbedStore>) -> String {
    match (cfg.str("model"), store) {
        ("", Some(s)) => s.meta().model_id.clone(),
        ("", None) => "none".into(),
        (m, _) => m.to_string(),
    }
}

struct RowKey<'a> {
    task: String,
    model: &'a str,
    variant: &'a str,
    method: &'a str,
    scorer: String,
    layer_selector: String,
}

impl RowKey<'_> {
    fn row(&self, metric: &str, folds: Vec<f64>) -> ResultRow {
        let ms = mean_std(&folds);
        ResultRow {
            task: self.task.clone(),
            model: self.model.to_string(),
            variant: self.variant.to_string(),
            method: self.method.to_string(),
            scorer: self.scorer.clone(),
            layer_selector: self.layer_selector.clone(),
            metric: metric.to_string(),
            mean: ms.mean,
            std: ms.std,
            folds,
        }
    }

    fn rank_rows(&self, per_fold: &[RankMetrics]) -> Vec<ResultRow> {
        vec![
            self.row("map", per_fold.iter().map(|m| m.ap).collect()),
            self.row("mrr", per_fold.iter().map(|m| m.mrr).collect()),
            self.row("pairwise_accuracy", per_fold.iter().map(|m| m.pairwise_accuracy).collect()),
        ]
    }

    fn class_rows(&self, per_fold: &[ClassMetrics]) -> Vec<ResultRow> {
        let mut rows = vec![
            self.row("f1", per_fold.iter().map(|m| m.f1).collect()),
            self.row("accuracy", per_fold.iter().map(|m| m.accuracy).collect()),
        ];
        if per_fold.iter().all(|m| m.auroc.is_some()) {
            rows.push(self.row("auroc", per_fold.iter().filter_map(|m| m.auroc).collect()));
        }
        rows
    }
}

fn write_fold_artifacts(run: &Run, results: &[FoldResult]) -> Result<()> {
    let probes = run.path("probes");
    let rankings = run.path("rankings");
    std::fs::create_dir_all(&probes)?;
    std::fs::create_dir_all(&rankings)?;
    for r in results {
        save_probe(&probes.join(format!("fold{}", r.fold_id)), &r.scorer, &r.config, r.fold_id)?;
        write_rankings_csv(
            &rankings.join(format!("fold{}.csv", r.fold_id)),
            &run.header,
            &r.test_examples,
            &r.test_scores,
        )?;
    }
    Ok(())
}

fn write_rows(run: &Run, name: &str, rows: &[ResultRow]) -> Result<()> {
    write_results_csv(&run.path(&format!("{name}.csv")), &run.header, rows)?;
    write_results_json(&run.path(&format!("{name}.json")), &run.header, rows)?;
    Ok(())
}

pub fn train(run: &Run) -> Result<()> {
    match task_of(&run.cfg)? {
        AnyTask::Ranking(task) => train_ranking(run, task),
        AnyTask::Aux(task) => train_aux(run, task),
    }
}

fn check_scorer(task: Task, kind: ScorerKind) -> Result<()> {
    if task == Task::Narrative && kind.needs_same_document() {
        return Err(config_err("scorer", format!("{kind} compares token positions; narrative pools span documents")).into());
    }
    Ok(())
}

fn train_ranking(run: &Run, task: Task) -> Result<()> {
    let cfg = &run.cfg;
    let kind: ScorerKind = cfg.parse("scorer")?;
    let selector: LayerSelector = cfg.parse("layer")?;
    let examples = ranking_examples(cfg, task, run.seed())?;
    let folds = folds_over(cfg, examples.iter().map(|e| e.anchor.doc_id.clone()), run.seed())?;
    let tc = train_config(cfg, selector, run.seed())?;
    check_scorer(task, kind)?;
    let store = if kind.needs_embeddings() { Some(open_store(cfg)?) } else { None };
    let emb = store.as_ref().map(|s| embeddings_for(s, &examples, selector)).transpose()?;
    let results = cross_validate(&examples, &folds, emb.as_ref(), kind, &tc)?;
    write_fold_artifacts(run, &results)?;
    std::fs::write(run.path("folds.json"), serde_json::to_string_pretty(&folds)? + "\n")?;

    let model = model_name(cfg, store.as_ref());
    let key = RowKey {
        task: task.to_string(),
        model: &model,
        variant: cfg.str("variant"),
        method: "probe",
        scorer: kind.to_string(),
        layer_selector: if kind.needs_embeddings() { selector.to_string() } else { "-".into() },
    };
    let per_fold: Vec<RankMetrics> = results.iter().map(|r| r.metrics).collect();
    let rows = key.rank_rows(&per_fold);
    info!("{kind} {task}: MAP {:.4} ± {:.4}", rows[0].mean, rows[0].std);
    write_rows(run, "results", &rows)
}

fn train_aux(run: &Run, task: AuxTask) -> Result<()> {
    let cfg = &run.cfg;
    let layer = match cfg.parse::<LayerSelector>("layer")? {
        LayerSelector::Single(l) => l,
        LayerSelector::AllLayers => {
            return Err(config_err("layer", "span classifiers read a single layer of a token store").into())
        }
    };
    let head: HeadKind = cfg.parse("head")?;
    let instances = aux_instances(cfg, task, run.seed())?;
    if instances.is_empty() {
        bail!("no {} instances", cfg.str("task"));
    }
    let folds = folds_over(cfg, instances.iter().map(|i| i.doc_id().to_string()), run.seed())?;
    let store = open_store(cfg)?;
    if layer >= store.meta().n_layers {
        return Err(config_err("layer", format!("store has {} layers", store.meta().n_layers)).into());
    }
    let spans = instances.iter().flat_map(|i| std::iter::once(&i.span_1).chain(i.span_2.as_ref()));
    let tokens = TokenEmbeddings::from_store(&store, spans, layer)?;
    let base = SpanClassifierConfig {
        learning_rate: cfg.parse("learning_rate")?,
        epochs: cfg.parse("epochs")?,
        batch_size: cfg.parse("batch_size")?,
        patience: cfg.parse("patience")?,
        seed: run.seed(),
        proj: cfg.parse("proj")?,
        hidden: cfg.parse("hidden")?,
    };
    let per_fold: Vec<(usize, ClassMetrics, Vec<f64>)> = folds
        .par_iter()
        .map(|fold| -> Result<_> {
            let part = |pred: &dyn Fn(&str) -> bool| -> Vec<AuxInstance> {
                instances.iter().filter(|i| pred(i.doc_id())).cloned().collect()
            };
            let train = part(&|d| fold.contains_train(d));
            let val = part(&|d| fold.contains_val(d));
            let test = part(&|d| fold.contains_test(d));
            let c = SpanClassifierConfig {
                seed: seed::derive(run.seed(), "train", fold.fold_id as u64),
                ..base.clone()
            };
            let trained = train_span_classifier(&train, &val, &tokens, head, &c)?;
            let m = evaluate_span_classifier(&trained.model, &test, &tokens)?;
            Ok((fold.fold_id, m, trained.model.params))
        })
        .collect::<Result<_>>()?;

    let probes = run.path("probes");
    std::fs::create_dir_all(&probes)?;
    for (fold, _, params) in &per_fold {
        let blob: Vec<u8> = params.iter().flat_map(|&p| (p as f32).to_le_bytes()).collect();
        std::fs::write(probes.join(format!("fold{fold}.bin")), blob)?;
    }
    let model = model_name(cfg, Some(&store));
    let key = RowKey {
        task: task_name(task).into(),
        model: &model,
        variant: cfg.str("variant"),
        method: "span_classifier",
        scorer: cfg.str("head").to_string(),
        layer_selector: LayerSelector::Single(layer).to_string(),
    };
    let metrics: Vec<ClassMetrics> = per_fold.iter().map(|(_, m, _)| *m).collect();
    write_rows(run, "results", &key.class_rows(&metrics))
}

fn task_name(t: AuxTask) -> &'static str {
    match t {
        AuxTask::Event => "event",
        AuxTask::Entity => "entity",
        AuxTask::Coref => "coref",
        AuxTask::Quote => "quote",
    }
}

/// Re-scores the saved per-fold probes of a train run on their test folds.
pub fn eval(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let task = ranking_task(cfg)?;
    let probe_dir = cfg.require_path("probe_dir")?.join("probes");
    let examples = ranking_examples(cfg, task, run.seed())?;
    let folds = folds_over(cfg, examples.iter().map(|e| e.anchor.doc_id.clone()), run.seed())?;
    let mut store = None;
    let mut per_fold = Vec::new();
    let mut rankings = Vec::new();
    let mut kind_sel = None;
    for fold in &folds {
        let stem = probe_dir.join(format!("fold{}", fold.fold_id));
        let (header, scorer) = load_probe(&stem).with_context(|| format!("loading probe {}", stem.display()))?;
        let (_, _, test) = partition_by_fold(&examples, fold);
        let emb = if header.kind.needs_embeddings() {
            if store.is_none() {
                store = Some(open_store(cfg)?);
            }
            Some(embeddings_for(store.as_ref().unwrap(), &test, header.layer_selector)?)
        } else {
            None
        };
        let (m, scores) = evaluate(&scorer, &test, emb.as_ref())?;
        per_fold.push(m);
        rankings.push((fold.fold_id, test, scores));
        kind_sel = Some((header.kind, header.layer_selector));
    }
    let (kind, selector) = kind_sel.expect("at least two folds");
    let dir = run.path("eval_rankings");
    std::fs::create_dir_all(&dir)?;
    for (fold, test, scores) in &rankings {
        write_rankings_csv(&dir.join(format!("fold{fold}.csv")), &run.header, test, scores)?;
    }
    let model = model_name(cfg, store.as_ref());
    let key = RowKey {
        task: task.to_string(),
        model: &model,
        variant: cfg.str("variant"),
        method: "probe",
        scorer: kind.to_string(),
        layer_selector: if kind.needs_embeddings() { selector.to_string() } else { "-".into() },
    };
    write_rows(run, "eval", &key.rank_rows(&per_fold))
}

/// Single-layer probes for every layer, then `all_layers`; one table row
/// each, with the mixture weights averaged over folds.
pub fn layers(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let task = ranking_task(cfg)?;
    let kind: ScorerKind = cfg.parse("scorer")?;
    if !kind.needs_embeddings() {
        return Err(config_err("scorer", format!("{kind} does not read activations")).into());
    }
    check_scorer(task, kind)?;
    let store = open_store(cfg)?;
    let n_layers = store.meta().n_layers;
    let examples = ranking_examples(cfg, task, run.seed())?;
    let folds = folds_over(cfg, examples.iter().map(|e| e.anchor.doc_id.clone()), run.seed())?;
    let model = model_name(cfg, Some(&store));

    let selectors: Vec<LayerSelector> =
        (0..n_layers).map(LayerSelector::Single).chain([LayerSelector::AllLayers]).collect();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut mix = vec![0.0; n_layers];
    for sel in selectors {
        let emb = embeddings_for(&store, &examples, sel)?;
        let results = cross_validate(&examples, &folds, Some(&emb), kind, &train_config(cfg, sel, run.seed())?)?;
        if sel == LayerSelector::AllLayers {
            for r in &results {
                let w = r.mix_weights().expect("all_layers probe carries mixture weights");
                mix.iter_mut().zip(&w).for_each(|(m, w)| *m += w / results.len() as f64);
            }
        }
        let key = RowKey {
            task: task.to_string(),
            model: &model,
            variant: cfg.str("variant"),
            method: "probe",
            scorer: kind.to_string(),
            layer_selector: sel.to_string(),
        };
        let per_fold: Vec<RankMetrics> = results.iter().map(|r| r.metrics).collect();
        let r = key.rank_rows(&per_fold);
        info!("{sel}: MAP {:.4}", r[0].mean);
        table.push((sel, r[0].mean, r[0].std));
        rows.extend(r);
    }
    write_rows(run, "results", &rows)?;

    let mut text = header_comments(&run.header);
    text.push_str("task,model,scorer,layer_selector,map_mean,map_std,mix_weight\n");
    for (sel, mean, std) in table {
        let w = match sel {
            LayerSelector::Single(l) => mix[l].to_string(),
            LayerSelector::AllLayers => String::new(),
        };
        text.push_str(&format!("{task},{model},{kind},{sel},{mean},{std},{w}\n"));
    }
    std::fs::write(run.path("layers.csv"), text)?;
    Ok(())
}

fn header_comments(h: &RunHeader) -> String {
    format!(
        "# config_hash={}\n# seed={}\n# content_version={}\n",
        h.config_hash, h.seed, h.content_version
    )
}

pub fn prompt(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let task = ranking_task(cfg)?;
    let records = load_records(cfg)?;
    let docs: BTreeMap<&str, &Document> = records.iter().map(|r| (r.document.doc_id.as_str(), &r.document)).collect();
    let examples = ranking_examples(cfg, task, run.seed())?;
    let prompt_seed = seed::derive(run.seed(), "prompt", 0);
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for ex in &examples {
        let first = task == Task::Narrative || !ex.positives().any(|p| p.start < ex.anchor.start);
        if ex.candidates.len() != POOL_SIZE || !first {
            skipped += 1;
            continue;
        }
        specs.push(PromptSpec::from_example(ex, |id| docs.get(id).copied(), prompt_seed)?);
        labels.push(ex.labels.clone());
    }
    if skipped > 0 {
        warn!("{skipped} pools skipped (not {POOL_SIZE} candidates or not a first-branch anchor)");
    }
    if specs.is_empty() {
        bail!("no pools eligible for prompting");
    }
    let pc = ProviderConfig {
        provider: cfg.str("provider").to_string(),
        model: cfg.str("model").to_string(),
        endpoint: cfg.str("endpoint").to_string(),
        api_key_env: cfg.str("api_key_env").to_string(),
        max_retries: cfg.parse("max_retries")?,
        timeout_secs: cfg.parse("timeout")?,
        max_concurrency: cfg.parse("concurrency")?,
        backoff_ms: cfg.parse("backoff_ms")?,
    };
    if pc.max_concurrency == 0 {
        return Err(config_err("concurrency", "must be >= 1").into());
    }
    let provider: Box<dyn Provider> = match cfg.str("provider") {
        "oracle" => Box::new(OracleProvider::new(specs.iter().zip(labels.iter().map(Vec::as_slice)))),
        "constant" => Box::new(ConstantProvider(cfg.parse("constant_score")?)),
        "replay" => Box::new(ReplayProvider::from_transcript(&cfg.require_path("transcript")?)?),
        "http" => http_provider(pc.clone())?,
        other => return Err(config_err("provider", format!("unknown provider `{other}`")).into()),
    };
    let report = run_prompted_eval(&specs, &labels, provider.as_ref(), &pc, Some(&run.path("transcript.jsonl")))?;
    std::fs::write(run.path("examples.json"), serde_json::to_string_pretty(&report.examples)? + "\n")?;
    let model = if pc.model.is_empty() { provider.name().to_string() } else { pc.model.clone() };
    let key = RowKey {
        task: task.to_string(),
        model: &model,
        variant: cfg.str("variant"),
        method: "prompt",
        scorer: cfg.str("provider").to_string(),
        layer_selector: "-".into(),
    };
    let mut rows = match report.metrics {
        Some(m) => key.rank_rows(&[m]),
        None => Vec::new(),
    };
    rows.push(key.row("failure_rate", vec![report.failure_rate]));
    rows.push(key.row("schema_failures", vec![report.schema_failures as f64]));
    info!("failure rate {:.3}", report.failure_rate);
    write_rows(run, "results", &rows)
}

#[cfg(feature = "http")]
fn http_provider(pc: ProviderConfig) -> Result<Box<dyn Provider>> {
    Ok(Box::new(narb_core::prompt::HttpProvider::new(pc)?))
}

#[cfg(not(feature = "http"))]
fn http_provider(_pc: ProviderConfig) -> Result<Box<dyn Provider>> {
    Err(config_err("provider", "built without the `http` feature").into())
}

pub fn baselines(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let items = read_annotations(&cfg.require_path("annotations")?)?;
    let methods: Vec<Method> = match cfg.str("methods") {
        "all" => Method::ALL.to_vec(),
        list => list
            .split(',')
            .map(|m| m.trim().parse::<Method>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| config_err("methods", e.to_string()))?,
    };
    let pairs = sample_pairs(&items, cfg.parse("n_pairs")?, run.seed())?;
    let scores = score_pairs(&items, &pairs.value, &methods)?;
    write_scores_csv(&run.path("scores.csv"), &run.header, &scores.value)?;
    let key = |m: Method| RowKey {
        task: cfg.str("task").to_string(),
        model: "-",
        variant: "-",
        method: m.name(),
        scorer: "baseline".into(),
        layer_selector: "-".into(),
    };
    let rows = methods
        .iter()
        .map(|&m| Ok(key(m).row("separation_auc", vec![separation_auc(&scores.value, m)?])))
        .collect::<Result<Vec<_>>>()?;
    write_rows(run, "results", &rows)
}

/// Joins probe and prompt result CSVs into one comparison table with a
/// column per metric.
pub fn report(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let mut rows = Vec::new();
    for key in ["probe_csv", "prompt_csv"] {
        let p = cfg.require_path(key)?;
        let (_, r) = read_results_csv(&p).with_context(|| format!("reading {}", p.display()))?;
        rows.extend(r);
    }
    let text = join_table(&rows, &run.header);
    std::fs::write(run.path("report.csv"), text)?;
    Ok(())
}

pub fn join_table(rows: &[ResultRow], header: &RunHeader) -> String {
    type Key = (String, String, String, String, String, String);
    let metrics: BTreeSet<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    let mut joined: BTreeMap<Key, BTreeMap<&str, (f64, f64)>> = BTreeMap::new();
    for r in rows {
        let k = (
            r.task.clone(),
            r.model.clone(),
            r.method.clone(),
            r.variant.clone(),
            r.scorer.clone(),
            r.layer_selector.clone(),
        );
        joined.entry(k).or_default().insert(&r.metric, (r.mean, r.std));
    }
    let mut out = header_comments(header);
    out.push_str("task,model,method,variant,scorer,layer_selector");
    for m in &metrics {
        out.push_str(&format!(",{m},{m}_std"));
    }
    out.push('\n');
    for ((task, model, method, variant, scorer, sel), vals) in &joined {
        out.push_str(&[task, model, method, variant, scorer, sel].map(|s| csv_field(s)).join(","));
        for m in &metrics {
            match vals.get(m) {
                Some((mean, std)) => out.push_str(&format!(",{mean},{std}")),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
