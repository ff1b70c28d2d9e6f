use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{build_prompt, parse_response, PromptSpec, Provider, ProviderConfig, ProviderRequest};
use crate::metrics::{mean_rank_metrics, rank_metrics, RankMetrics, RankingOutcome};
use crate::{NarbError, Result};

/// One request/response attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub example_id: String,
    pub attempt: usize,
    pub prompt: String,
    pub raw_response: Option<String>,
    pub error: Option<String>,
    /// Scores in original candidate order when the response parsed.
    pub scores: Option<Vec<f64>>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub example_id: String,
    pub scores: Option<Vec<f64>>,
    pub metrics: Option<RankMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over examples that succeeded; `None` if none did.
    pub metrics: Option<RankMetrics>,
    pub examples: Vec<ExampleResult>,
    pub failure_rate: f64,
    pub schema_failures: usize,
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>> {
    let file = File::open(path).map_err(|e| NarbError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| NarbError::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| NarbError::parse(path, i + 1, e.to_string()))
        })
        .collect()
}

/// Prompts every pool, retrying failed requests and unparseable responses,
/// and ranks candidates by the returned scores. `labels[i]` are the gold
/// labels of `specs[i]` in original candidate order.
pub fn run_prompted_eval(
    specs: &[PromptSpec],
    labels: &[Vec<bool>],
    provider: &dyn Provider,
    config: &ProviderConfig,
    transcript: Option<&Path>,
) -> Result<EvalReport> {
    config.validate()?;
    if specs.len() != labels.len() {
        return Err(NarbError::Shape(format!("{} specs, {} label lists", specs.len(), labels.len())));
    }
    provider.check_auth()?;
    let prompts = specs.iter().map(build_prompt).collect::<Result<Vec<_>>>()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(std::result::Result<Vec<f64>, String>, bool, Vec<TranscriptEntry>)>>> =
        Mutex::new(vec![None; specs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..config.max_concurrency.min(specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= specs.len() {
                    break;
                }
                let request = ProviderRequest {
                    example_id: specs[i].example_id.clone(),
                    prompt: prompts[i].text.clone(),
                    schema: prompts[i].schema.clone(),
                    presented: specs[i].presented(),
                    temperature: 0.0,
                };
                let out = attempt_all(&request, &specs[i], provider, config);
                results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(out);
            });
        }
    });
    let results = results.into_inner().unwrap_or_else(|p| p.into_inner());

    let mut log = Vec::new();
    let mut examples = Vec::with_capacity(specs.len());
    let mut ok_metrics = Vec::new();
    let mut schema_failures = 0;
    for ((spec, gold), r) in specs.iter().zip(labels).zip(results) {
        let (outcome, schema_failed, entries) = r.expect("every example resolved");
        log.extend(entries);
        if schema_failed {
            schema_failures += 1;
        }
        let result = match outcome {
            Ok(scores) => {
                let m = rank_metrics(&RankingOutcome::from_scores(&scores, gold)?);
                ok_metrics.push(m);
                ExampleResult {
                    example_id: spec.example_id.clone(),
                    scores: Some(scores),
                    metrics: Some(m),
                    error: None,
                }
            }
            Err(e) => ExampleResult {
                example_id: spec.example_id.clone(),
                scores: None,
                metrics: None,
                error: Some(e),
            },
        };
        examples.push(result);
    }
    if let Some(path) = transcript {
        let mut f = File::create(path).map_err(|e| NarbError::io(path, e))?;
        for e in &log {
            writeln!(f, "{}", serde_json::to_string(e)?).map_err(|e| NarbError::io(path, e))?;
        }
    }
    let failed = examples.iter().filter(|e| e.error.is_some()).count();
    Ok(EvalReport {
        metrics: if ok_metrics.is_empty() { None } else { Some(mean_rank_metrics(&ok_metrics)?) },
        failure_rate: if specs.is_empty() { 0.0 } else { failed as f64 / specs.len() as f64 },
        examples,
        schema_failures,
    })
}

type Attempts = (std::result::Result<Vec<f64>, String>, bool, Vec<TranscriptEntry>);

fn attempt_all(request: &ProviderRequest, spec: &PromptSpec, provider: &dyn Provider, config: &ProviderConfig) -> Attempts {
    let mut entries = Vec::new();
    let mut schema_failed = false;
    let mut last_err = String::new();
    for attempt in 0..=config.max_retries {
        if attempt > 0 && config.backoff_ms > 0 {
            std::thread::sleep(Duration::from_millis(config.backoff_ms << (attempt - 1).min(16)));
        }
        let t0 = Instant::now();
        let raw = provider.complete(request);
        let mut entry = TranscriptEntry {
            example_id: request.example_id.clone(),
            attempt,
            prompt: request.prompt.clone(),
            raw_response: None,
            error: None,
            scores: None,
            elapsed_ms: 0,
        };
        let parsed = match raw {
            Ok(raw) => {
                let p = parse_response(&raw, spec);
                entry.raw_response = Some(raw);
                p
            }
            Err(e) => Err(e),
        };
        entry.elapsed_ms = t0.elapsed().as_millis() as u64;
        match parsed {
            Ok(resp) => {
                entry.scores = Some(resp.scores.clone());
                entries.push(entry);
                return (Ok(resp.scores), schema_failed, entries);
            }
            Err(e) => {
                if matches!(e, NarbError::Schema(_)) {
                    schema_failed = true;
                }
                log::warn!("{} attempt {attempt}: {e}", request.example_id);
                last_err = e.to_string();
                entry.error = Some(last_err.clone());
                entries.push(entry);
            }
        }
    }
    (Err(last_err), schema_failed, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pools::Task;
    use crate::prompt::{ConstantProvider, OracleProvider, ReplayProvider, POOL_SIZE};

    fn specs() -> (Vec<PromptSpec>, Vec<Vec<bool>>) {
        (0..5)
            .map(|e| {
                let cands = (0..POOL_SIZE).map(|i| format!("text {e}/{i}")).collect();
                let labels = (0..POOL_SIZE).map(|i| i % 7 == e % 3).collect();
                (PromptSpec::new(format!("ex{e}"), Task::Narrative, "anchor", cands, None, 11).unwrap(), labels)
            })
            .unzip()
    }

    fn cfg() -> ProviderConfig {
        ProviderConfig {
            backoff_ms: 0,
            max_concurrency: 3,
            ..ProviderConfig::default()
        }
    }

    #[test]
    fn oracle_constant_and_replay() {
        let (s, l) = specs();
        let oracle = OracleProvider::new(s.iter().zip(l.iter().map(Vec::as_slice)));
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.jsonl");
        let r = run_prompted_eval(&s, &l, &oracle, &cfg(), Some(&t)).unwrap();
        assert_eq!(r.metrics.unwrap().ap, 1.0);
        assert_eq!(r.failure_rate, 0.0);
        let c = run_prompted_eval(&s, &l, &ConstantProvider(5.0), &cfg(), None).unwrap();
        assert_eq!(c.metrics.unwrap().pairwise_accuracy, 0.0);
        let replay = ReplayProvider::from_transcript(&t).unwrap();
        let again = run_prompted_eval(&s, &l, &replay, &cfg(), None).unwrap();
        assert_eq!(again.metrics, r.metrics);
    }

    struct Flaky(AtomicUsize);
    impl Provider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn check_auth(&self) -> Result<()> {
            Ok(())
        }
        fn complete(&self, _r: &ProviderRequest) -> Result<String> {
            if self.0.fetch_add(1, Ordering::SeqCst) % 2 == 0 {
                Ok("{\"scores\": {}}".into())
            } else {
                Err(NarbError::Provider("timeout".into()))
            }
        }
    }

    #[test]
    fn exhausted_retries_mark_failures() {
        let (s, l) = specs();
        let r = run_prompted_eval(&s, &l, &Flaky(AtomicUsize::new(0)), &cfg(), None).unwrap();
        assert_eq!(r.failure_rate, 1.0);
        assert!(r.metrics.is_none());
        assert!(r.schema_failures > 0);
    }

    struct NoAuth;
    impl Provider for NoAuth {
        fn name(&self) -> &str {
            "noauth"
        }
        fn check_auth(&self) -> Result<()> {
            Err(NarbError::Provider("bad key".into()))
        }
        fn complete(&self, _r: &ProviderRequest) -> Result<String> {
            panic!("must not be called")
        }
    }

    #[test]
    fn auth_failure_precedes_requests() {
        let (s, l) = specs();
        assert!(run_prompted_eval(&s, &l, &NoAuth, &cfg(), None).is_err());
    }
}
