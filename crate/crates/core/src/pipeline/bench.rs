//! Inference latency and memory for a batch of crops.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KeypointModel;
use crate::synth::{generate_crops, CropStyle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub batch: usize,
    pub iterations: usize,
    pub mean_frame_ms: f64,
    pub min_frame_ms: f64,
    pub max_frame_ms: f64,
    pub per_cone_ms: f64,
    /// Growth of the resident-set high-water mark during the run, KiB.
    pub peak_rss_delta_kib: Option<u64>,
    pub threads: usize,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mem = self
            .peak_rss_delta_kib
            .map_or("n/a".to_string(), |k| format!("{k} KiB"));
        format!(
            "batch {} x {} iterations on {} thread(s): mean {:.2} ms/frame (min {:.2}, max {:.2}), {:.3} ms/cone, peak RSS delta {}\n",
            self.batch, self.iterations, self.threads, self.mean_frame_ms, self.min_frame_ms, self.max_frame_ms, self.per_cone_ms, mem
        )
    }
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

/// Times `iterations` forward passes over `batch` synthetic crops after one
/// warm-up pass.
pub fn throughput_benchmark(model: &KeypointModel, batch: usize, iterations: usize, seed: u64) -> Result<BenchReport> {
    if batch == 0 || iterations == 0 {
        return Err(Error::InvalidArgument(format!(
            "batch and iterations must be positive (got {batch}, {iterations})"
        )));
    }
    let s = model.config.input_size;
    let crops: Vec<_> = generate_crops(batch, seed, &CropStyle::default())
        .into_iter()
        .map(|c| c.image.resize(s, s))
        .collect();
    model.predict_images(&crops)?;
    let before = peak_rss_kib();
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        std::hint::black_box(model.predict_images(&crops)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let after = peak_rss_kib();
    let mean = times.iter().sum::<f64>() / iterations as f64;
    Ok(BenchReport {
        batch,
        iterations,
        mean_frame_ms: mean,
        min_frame_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_frame_ms: times.iter().copied().fold(0.0, f64::max),
        per_cone_ms: mean / batch as f64,
        peak_rss_delta_kib: before.zip(after).map(|(b, a)| a.saturating_sub(b)),
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
    })
}
