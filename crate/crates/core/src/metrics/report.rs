use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{NarbError, Result};

/// Provenance written at the top of every result artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config_hash: String,
    pub seed: u64,
    pub content_version: String,
}

impl RunHeader {
    fn comment_lines(&self) -> String {
        format!(
            "# config_hash={}\n# seed={}\n# content_version={}\n",
            self.config_hash, self.seed, self.content_version
        )
    }

    fn from_comments(lines: &[String]) -> Option<Self> {
        let get = |k: &str| {
            lines
                .iter()
                .find_map(|l| l.trim_start_matches('#').trim().strip_prefix(&format!("{k}=")).map(str::to_string))
        };
        Some(RunHeader {
            config_hash: get("config_hash")?,
            seed: get("seed")?.parse().ok()?,
            content_version: get("content_version")?,
        })
    }
}

/// One aggregated metric of one configuration. `folds` holds the per-fold
/// values; a prompted run has a single "fold".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub model: String,
    pub variant: String,
    pub method: String,
    pub scorer: String,
    pub layer_selector: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub folds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlatRow {
    task: String,
    model: String,
    variant: String,
    method: String,
    scorer: String,
    layer_selector: String,
    metric: String,
    mean: f64,
    std: f64,
    folds: String,
}

pub fn write_results_csv(path: &Path, header: &RunHeader, rows: &[ResultRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| NarbError::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(header.comment_lines().as_bytes()).map_err(|e| NarbError::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(FlatRow {
            task: r.task.clone(),
            model: r.model.clone(),
            variant: r.variant.clone(),
            method: r.method.clone(),
            scorer: r.scorer.clone(),
            layer_selector: r.layer_selector.clone(),
            metric: r.metric.clone(),
            mean: r.mean,
            std: r.std,
            folds: r.folds.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        })?;
    }
    w.flush().map_err(|e| NarbError::io(path, e))?;
    Ok(())
}

/// Reads a results CSV, returning the header comments (if present) and rows.
pub fn read_results_csv(path: &Path) -> Result<(Option<RunHeader>, Vec<ResultRow>)> {
    let file = File::open(path).map_err(|e| NarbError::io(path, e))?;
    let comments: Vec<String> = BufReader::new(file)
        .lines()
        .map_while(|l| l.ok())
        .take_while(|l| l.starts_with('#'))
        .collect();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<FlatRow>().enumerate() {
        let f = rec.map_err(|e| NarbError::parse(path, i + 2, e.to_string()))?;
        let folds = if f.folds.is_empty() {
            Vec::new()
        } else {
            f.folds
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|e| NarbError::parse(path, i + 2, e.to_string())))
                .collect::<Result<_>>()?
        };
        rows.push(ResultRow {
            task: f.task,
            model: f.model,
            variant: f.variant,
            method: f.method,
            scorer: f.scorer,
            layer_selector: f.layer_selector,
            metric: f.metric,
            mean: f.mean,
            std: f.std,
            folds,
        });
    }
    Ok((RunHeader::from_comments(&comments), rows))
}

pub fn write_results_json(path: &Path, header: &RunHeader, rows: &[ResultRow]) -> Result<()> {
    let doc = serde_json::json!({ "header": header, "rows": rows });
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text + "\n").map_err(|e| NarbError::io(path, e))
}
