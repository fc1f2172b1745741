use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use conekp::data::dataset::{load_split, read_manifest, write_atomic, Sample};
use conekp::data::split::Split;
use conekp::metrics::{evaluate, render_report, report_json, EvalItem, MetricReport};
use conekp::model::{load_checkpoint, KeypointModel};
use conekp::Point;
use serde::{Deserialize, Serialize};

use crate::config;

#[derive(Args, Debug, Default, Serialize)]
pub struct EvalFlags {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split to score: train, val or test.
    #[arg(long)]
    pub split: Option<Split>,
    /// Checkpoint to score; repeat for one report row per model.
    #[arg(long = "checkpoint")]
    pub checkpoints: Option<Vec<PathBuf>>,
    /// JSON-lines predictions (`id`, `keypoints`, optional `confidences`)
    /// to score instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Crop size predictions are expressed in.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Directory for the report files.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub data: Option<PathBuf>,
    pub split: Split,
    pub checkpoints: Vec<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub input_size: usize,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            data: None,
            split: Split::Test,
            checkpoints: Vec::new(),
            predictions: None,
            input_size: 80,
            out: None,
        }
    }
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub keypoints: Vec<Point>,
    #[serde(default)]
    pub confidences: Option<Vec<f64>>,
}

pub fn read_predictions(path: &Path) -> Result<HashMap<String, PredictionLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PredictionLine =
            serde_json::from_str(line).with_context(|| format!("{}:{}: bad prediction line", path.display(), i + 1))?;
        out.insert(p.id.clone(), p);
    }
    Ok(out)
}

pub fn predictions_jsonl(lines: &[PredictionLine]) -> String {
    lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("prediction serializes") + "\n")
        .collect()
}

fn score(samples: &[Sample], preds: &HashMap<String, PredictionLine>, width: f64) -> Result<MetricReport> {
    let ones = vec![1.0; conekp::NUM_KEYPOINTS];
    let mut items = Vec::with_capacity(samples.len());
    for s in samples {
        let Some(p) = preds.get(&s.id) else {
            bail!("no prediction for image {}", s.id)
        };
        items.push(EvalItem {
            predicted: &p.keypoints,
            confidences: p.confidences.as_deref().unwrap_or(&ones),
            truth: &s.keypoints,
        });
    }
    Ok(evaluate(&items, width)?)
}

/// Runs `model` over `samples`; keypoints in sample pixels.
pub fn predict_samples(model: &KeypointModel, samples: &[Sample]) -> Result<Vec<PredictionLine>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        for (s, p) in chunk.iter().zip(model.predict_images(&images)?) {
            out.push(PredictionLine {
                id: s.id.clone(),
                keypoints: p.keypoints,
                confidences: Some(p.confidences),
            });
        }
    }
    Ok(out)
}

/// Scores every checkpoint (and/or the predictions file) on the split.
pub fn run(cfg: &EvalConfig) -> Result<Vec<(String, MetricReport)>> {
    let Some(data) = &cfg.data else {
        bail!("eval needs a dataset directory (--data)")
    };
    if cfg.checkpoints.is_empty() && cfg.predictions.is_none() {
        bail!("eval needs --checkpoint or --predictions");
    }
    let manifest = read_manifest(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let mut rows = Vec::new();
    let mut dumps = Vec::new();
    for path in &cfg.checkpoints {
        let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        let model = KeypointModel::from_checkpoint(&ckpt)?;
        let size = model.config.input_size;
        let samples = load_split(data, &manifest, cfg.split, size)?;
        let preds = predict_samples(&model, &samples)?;
        let map = preds.iter().map(|p| (p.id.clone(), p.clone())).collect();
        let mut label = model.config.arch.label().to_string();
        if rows.iter().any(|(l, _): &(String, _)| *l == label) {
            label = format!("{label} ({})", path.display());
        }
        rows.push((label.clone(), score(&samples, &map, size as f64)?));
        dumps.push((label, preds));
    }
    if let Some(p) = &cfg.predictions {
        let samples = load_split(data, &manifest, cfg.split, cfg.input_size)?;
        let preds = read_predictions(p)?;
        rows.push((
            "Predictions".to_string(),
            score(&samples, &preds, cfg.input_size as f64)?,
        ));
    }
    let refs: Vec<(&str, &MetricReport)> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
    print!("{}", render_report(&refs));
    if let Some(out) = &cfg.out {
        config::echo(out, cfg)?;
        write_atomic(&out.join("report.md"), render_report(&refs).as_bytes())?;
        write_atomic(&out.join("report.json"), report_json(&refs).as_bytes())?;
        for (i, (_, preds)) in dumps.iter().enumerate() {
            write_atomic(
                &out.join(format!("predictions_{i}.jsonl")),
                predictions_jsonl(preds).as_bytes(),
            )?;
        }
    }
    Ok(rows)
}
