use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use conekp::data::dataset::write_atomic;
use conekp::model::{load_checkpoint, Arch, KeypointModel, ModelConfig};
use conekp::pipeline::{throughput_benchmark, BenchReport};
use serde::{Deserialize, Serialize};

use crate::config;

#[derive(Args, Debug, Default, Serialize)]
pub struct BenchFlags {
    /// Model to time; a freshly initialized desk-scale model when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Arch>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Cone crops per frame.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub checkpoint: Option<PathBuf>,
    pub arch: Arch,
    pub width: usize,
    pub batch: usize,
    pub iterations: usize,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            arch: Arch::UNet,
            width: ModelConfig::desk(Arch::UNet).base_width,
            batch: 10,
            iterations: 20,
            seed: 0,
            out: None,
        }
    }
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    let model = match &cfg.checkpoint {
        Some(p) => {
            KeypointModel::from_checkpoint(&load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?)?
        }
        None => KeypointModel::new(
            ModelConfig {
                base_width: cfg.width,
                ..ModelConfig::desk(cfg.arch)
            },
            cfg.seed,
        )?,
    };
    let report = throughput_benchmark(&model, cfg.batch, cfg.iterations, cfg.seed)?;
    print!("{}", report.render());
    println!("note: wall-clock latency of keypoint inference only; in-vehicle CPU/GPU load traces are not reproduced");
    if let Some(out) = &cfg.out {
        config::echo(out, cfg)?;
        write_atomic(
            &out.join("bench.json"),
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
    }
    Ok(report)
}
