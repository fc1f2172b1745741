//! Keypoint accuracy metrics and the comparison table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::{distance, Point};

/// A prediction counts as correct within this many pixels (inclusive).
pub const MAP_THRESHOLD_PX: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub rmse: f64,
    pub norm_me: f64,
    pub std_dev: f64,
    pub mape: f64,
    pub avg_confidence: f64,
    pub map_at_3px: f64,
    pub samples: usize,
}

/// One evaluated crop.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem<'a> {
    pub predicted: &'a [Point],
    pub confidences: &'a [f64],
    pub truth: &'a [Point],
}

/// VOC-style all-point average precision. Entries are `(confidence, hit)`;
/// each entry is one ground-truth keypoint with its single prediction, so
/// recall is measured against all entries. Equal confidences form a single
/// operating point, which makes the result depend only on the ranking.
pub fn average_precision(entries: &[(f64, bool)]) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let c = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == c {
            seen += 1;
            tp += sorted[i].1 as usize;
            i += 1;
        }
        points.push((tp as f64 / total, tp as f64 / seen as f64));
    }
    // Interpolate: precision at recall r is the best precision at any
    // recall >= r.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let best = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[k].0 - prev_recall) * best;
        prev_recall = points[k].0;
    }
    ap
}

pub fn evaluate(items: &[EvalItem<'_>], image_width: f64) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Empty("no predictions to evaluate".into()));
    }
    let k = items[0].truth.len();
    for (i, it) in items.iter().enumerate() {
        if it.truth.len() != k || it.predicted.len() != k || it.confidences.len() != k {
            return Err(Error::CountMismatch(format!(
                "item {i}: {} predicted, {} confidences, {} ground-truth keypoints (expected {k})",
                it.predicted.len(),
                it.confidences.len(),
                it.truth.len()
            )));
        }
    }
    if k == 0 {
        return Err(Error::Empty("items carry no keypoints".into()));
    }

    let mut sq = 0.0;
    let mut coords = 0usize;
    let mut ape = 0.0;
    let mut ape_n = 0usize;
    let mut dists = Vec::with_capacity(items.len() * k);
    let mut conf_sum = 0.0;
    let mut per_index: Vec<Vec<(f64, bool)>> = vec![Vec::with_capacity(items.len()); k];
    for it in items {
        for j in 0..k {
            let (p, t) = (it.predicted[j], it.truth[j]);
            for c in 0..2 {
                let e = p[c] - t[c];
                sq += e * e;
                coords += 1;
                if t[c] != 0.0 {
                    ape += (e / t[c]).abs();
                    ape_n += 1;
                }
            }
            let d = distance(p, t);
            dists.push(d);
            conf_sum += it.confidences[j];
            per_index[j].push((it.confidences[j], d <= MAP_THRESHOLD_PX));
        }
    }
    let mse = sq / coords as f64;
    let n = dists.len() as f64;
    let mean_d = dists.iter().sum::<f64>() / n;
    let var_d = dists.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / n;
    let map = per_index.iter().map(|e| average_precision(e)).sum::<f64>() / k as f64;
    Ok(MetricReport {
        mse,
        rmse: mse.sqrt(),
        norm_me: mean_d / image_width,
        std_dev: var_d.sqrt(),
        mape: if ape_n == 0 { 0.0 } else { 100.0 * ape / ape_n as f64 },
        avg_confidence: conf_sum / n,
        map_at_3px: map,
        samples: items.len(),
    })
}

/// Pipe-delimited comparison table:
/// `| Model | MSE | Root MSE | Norm ME | Std Dev | mAP |`.
pub fn render_table(rows: &[(&str, &MetricReport)]) -> String {
    let mut out = String::from("| Model | MSE | Root MSE | Norm ME | Std Dev | mAP |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {:.2} |\n",
            r.mse, r.rmse, r.norm_me, r.std_dev, r.map_at_3px
        ));
    }
    out
}

/// Table plus the extra columns and a note on metric definitions.
pub fn render_report(rows: &[(&str, &MetricReport)]) -> String {
    let mut out = render_table(rows);
    out.push_str("\n| Model | MAPE (%) | Avg Conf | Samples |\n|---|---|---|---|\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "| {name} | {:.4} | {:.4} | {} |\n",
            r.mape, r.avg_confidence, r.samples
        ));
    }
    out.push_str(
        "\nNorm ME = mean keypoint distance / image width. MAPE skips zero ground-truth \
         coordinates. Avg Conf = (peak * H * W - 1) / (H * W - 1) per heatmap; 1.0 for \
         regression-only models. mAP@3px: per-keypoint AP over confidence ranking, hit iff distance <= 3 px.\n",
    );
    out
}

/// Machine-readable key-value form, one JSON object per model.
pub fn report_json(rows: &[(&str, &MetricReport)]) -> String {
    let map: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(n, r)| (n.to_string(), serde_json::to_value(r).expect("report serializes")))
        .collect();
    serde_json::to_string_pretty(&map).expect("json")
}
