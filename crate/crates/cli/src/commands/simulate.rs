use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use conekp::data::dataset::write_atomic;
use conekp::model::{load_checkpoint, KeypointModel};
use conekp::pipeline::covariance::covariance_csv;
use conekp::pipeline::{
    run_pipeline, ConfusionMatrix, CovarianceOutcome, EvaluationRun, KeypointSource, Scenario, CHALLENGING_RATE,
    DEFAULT_BIN_EDGES, DEFAULT_GATE,
};
use conekp::synth::SceneSampler;
use conekp::StereoRig;
use serde::{Deserialize, Serialize};

use crate::config;

#[derive(Args, Debug, Default, Serialize)]
pub struct SimulateFlags {
    /// Output directory for the confusion matrix, covariance and records.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Number of stereo frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Cones per frame.
    #[arg(long)]
    pub cones: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keypoint source; oracle keypoints plus noise when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Oracle keypoint noise, px at crop resolution.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Truncate a small fraction of detection boxes.
    #[arg(long)]
    pub challenging: Option<bool>,
    /// Detection box jitter, fraction of box height.
    #[arg(long)]
    pub box_jitter: Option<f64>,
    /// Association gate, m.
    #[arg(long)]
    pub gate: Option<f64>,
    /// Distance bin edges, m.
    #[arg(long, value_delimiter = ',')]
    pub bin_edges: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub frames: usize,
    pub cones: Option<usize>,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub noise: f64,
    pub challenging: bool,
    pub box_jitter: f64,
    pub gate: f64,
    pub bin_edges: Vec<f64>,
    pub sampler: SceneSampler,
    pub rig: StereoRig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            out: None,
            frames: 25,
            cones: None,
            seed: 0,
            checkpoint: None,
            noise: 0.5,
            challenging: false,
            box_jitter: 0.0,
            gate: DEFAULT_GATE,
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            sampler: SceneSampler::default(),
            rig: StereoRig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationOutcome {
    pub run: EvaluationRun,
    pub confusion: ConfusionMatrix,
    pub covariance: CovarianceOutcome,
}

#[derive(Serialize)]
struct Summary {
    cones: usize,
    frames: usize,
    diagonal_fraction: f64,
    color_accuracy: f64,
    false_positives: usize,
    localization_failures: usize,
    warnings: Vec<String>,
}

pub fn scenario(cfg: &SimulateConfig) -> Result<Scenario> {
    let mut sampler = cfg.sampler.clone();
    if let Some(n) = cfg.cones {
        sampler.cones = n;
    }
    let mut s = Scenario::random(cfg.frames, &sampler, cfg.rig, cfg.seed)?;
    s.box_jitter = cfg.box_jitter;
    s.gate = cfg.gate;
    if cfg.challenging {
        s.truncation_rate = CHALLENGING_RATE;
    }
    Ok(s)
}

pub fn run(cfg: &SimulateConfig) -> Result<SimulationOutcome> {
    let Some(out) = &cfg.out else {
        bail!("simulate needs an output directory (--out)")
    };
    if cfg.bin_edges.len() < 2 || cfg.bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        bail!("bin edges must be increasing with at least two entries");
    }
    let scenario = scenario(cfg)?;
    let model = match &cfg.checkpoint {
        Some(p) => Some(KeypointModel::from_checkpoint(
            &load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?,
        )?),
        None => None,
    };
    let source = match &model {
        Some(m) => KeypointSource::Model(m),
        None => KeypointSource::Oracle { noise_px: cfg.noise },
    };
    let run = run_pipeline(&scenario, source)?;
    let confusion = run.confusion();
    let covariance = run.covariance(&cfg.bin_edges);

    config::echo(out, cfg)?;
    write_atomic(&out.join("confusion.md"), confusion.render().as_bytes())?;
    write_atomic(
        &out.join("confusion.json"),
        serde_json::to_string_pretty(&confusion)?.as_bytes(),
    )?;
    write_atomic(&out.join("covariance.csv"), covariance_csv(&covariance.bins).as_bytes())?;
    write_atomic(
        &out.join("covariance.json"),
        serde_json::to_string_pretty(&covariance)?.as_bytes(),
    )?;
    write_atomic(&out.join("records.jsonl"), run.to_jsonl().as_bytes())?;
    let summary = Summary {
        cones: confusion.total(),
        frames: run.frames,
        diagonal_fraction: confusion.diagonal_fraction(),
        color_accuracy: confusion.color_accuracy(),
        false_positives: run.false_positives,
        localization_failures: run.localization_failures,
        warnings: covariance.warnings.clone(),
    };
    write_atomic(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;

    print!("{}", confusion.render());
    println!(
        "diagonal {:.3}, color accuracy {:.3}, localization failures {}",
        summary.diagonal_fraction, summary.color_accuracy, summary.localization_failures
    );
    for b in &covariance.bins {
        println!(
            "[{:>4.1}, {:>4.1}) m  n={:<4} trace {:.5} m^2  axes {:.4} / {:.4} m",
            b.range[0],
            b.range[1],
            b.count,
            b.trace(),
            b.axes[0],
            b.axes[1]
        );
    }
    for w in &covariance.warnings {
        eprintln!("warning: {w}");
    }
    Ok(SimulationOutcome {
        run,
        confusion,
        covariance,
    })
}
