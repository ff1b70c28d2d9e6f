use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LayerSelector, Scorer, ScorerKind, TrainConfig};
use crate::metrics::{rank_order, RunHeader};
use crate::pools::RankingExample;
use crate::{NarbError, Result};

/// JSON side of a saved probe; the parameters go to a sibling `.bin` file
/// as little-endian f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHeader {
    pub kind: ScorerKind,
    pub dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub layer_selector: LayerSelector,
    pub n_params: usize,
    pub config: TrainConfig,
    pub fold: usize,
    pub seed: u64,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn save_probe(stem: &Path, scorer: &Scorer, config: &TrainConfig, fold: usize) -> Result<()> {
    let (json, bin) = paths(stem);
    let header = ProbeHeader {
        kind: scorer.kind,
        dim: scorer.dim,
        hidden: scorer.hidden,
        n_layers: scorer.n_layers,
        layer_selector: scorer.selector,
        n_params: scorer.n_params(),
        config: config.clone(),
        fold,
        seed: config.seed,
    };
    std::fs::write(&json, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| NarbError::io(&json, e))?;
    let blob: Vec<u8> = scorer.params.iter().flat_map(|&p| (p as f32).to_le_bytes()).collect();
    std::fs::write(&bin, blob).map_err(|e| NarbError::io(&bin, e))
}

pub fn load_probe(stem: &Path) -> Result<(ProbeHeader, Scorer)> {
    let (json, bin) = paths(stem);
    let text = std::fs::read_to_string(&json).map_err(|e| NarbError::io(&json, e))?;
    let header: ProbeHeader = serde_json::from_str(&text)?;
    let blob = std::fs::read(&bin).map_err(|e| NarbError::io(&bin, e))?;
    if blob.len() != header.n_params * 4 {
        return Err(NarbError::InvalidData(format!(
            "{} holds {} bytes, header promises {} parameters",
            bin.display(),
            blob.len(),
            header.n_params
        )));
    }
    let mut scorer = Scorer::new(header.kind, header.dim, header.layer_selector, header.n_layers, header.hidden, 0)?;
    if scorer.n_params() != header.n_params {
        return Err(NarbError::InvalidData(format!(
            "{} scorer has {} parameters, header says {}",
            header.kind,
            scorer.n_params(),
            header.n_params
        )));
    }
    scorer.params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, scorer))
}

#[derive(Serialize)]
struct RankingRow<'a> {
    example_id: &'a str,
    candidate_id: String,
    score: f64,
    rank: usize,
    label: u8,
}

/// One row per candidate: example_id, candidate_id, score, rank, label.
pub fn write_rankings_csv(path: &Path, header: &RunHeader, examples: &[RankingExample], scores: &[Vec<f64>]) -> Result<()> {
    if examples.len() != scores.len() {
        return Err(NarbError::Shape(format!("{} examples, {} score lists", examples.len(), scores.len())));
    }
    let mut text = format!(
        "# config_hash={}\n# seed={}\n# content_version={}\n",
        header.config_hash, header.seed, header.content_version
    )
    .into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut text);
        for (ex, s) in examples.iter().zip(scores) {
            for (rank, i) in rank_order(s).into_iter().enumerate() {
                w.serialize(RankingRow {
                    example_id: &ex.example_id,
                    candidate_id: ex.candidates[i].key(),
                    score: s[i],
                    rank: rank + 1,
                    label: ex.labels[i] as u8,
                })?;
            }
        }
        w.flush().map_err(|e| NarbError::io(path, e))?;
    }
    std::fs::write(path, text).map_err(|e| NarbError::io(path, e))
}
