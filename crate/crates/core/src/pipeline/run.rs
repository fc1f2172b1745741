//! Detection crops through keypoints, stereo localization and color, scored
//! against the rendered ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::covariance::{covariance_by_distance, CovarianceOutcome};
use super::matching::match_detections;
use crate::camera::StereoRig;
use crate::error::{Error, Result};
use crate::imaging::{from_crop_frame, Image};
use crate::keypoints::{ConeColor, ConeKeypoints, NUM_KEYPOINTS};
use crate::model::KeypointModel;
use crate::stereo::{estimate_color, localize_cone};
use crate::synth::item_seed;
use crate::synth::scene::{random_scene, render_stereo_scene, SceneSampler, SceneSpec};

/// Fraction of the crop side taken up by the detection box height.
pub const CROP_FILL: f64 = 0.65;

/// Default association gate on the ground plane, meters.
pub const DEFAULT_GATE: f64 = 1.0;

pub const CHALLENGING_RATE: f64 = 0.03;

/// Crop resolution the oracle noise is expressed in.
pub const ORACLE_CROP_SIZE: f64 = 80.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rig: StereoRig,
    pub scenes: Vec<SceneSpec>,
    /// Detector box jitter as a fraction of box height, uniform per edge.
    pub box_jitter: f64,
    /// Probability that a detection box is cut short on one side, as when
    /// the detector crops part of the cone away.
    pub truncation_rate: f64,
    /// Fraction of the box removed when truncated.
    pub truncation_frac: f64,
    pub gate: f64,
    pub seed: u64,
}

impl Scenario {
    /// `frames` random scenes from `sampler`.
    pub fn random(frames: usize, sampler: &SceneSampler, rig: StereoRig, seed: u64) -> Result<Self> {
        let scenes = (0..frames)
            .map(|i| random_scene(item_seed(seed, i as u64), sampler, &rig))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rig,
            scenes,
            box_jitter: 0.0,
            truncation_rate: 0.0,
            truncation_frac: 0.3,
            gate: DEFAULT_GATE,
            seed,
        })
    }

    /// Roughly 3% of detections truncated, the challenging-case rate.
    pub fn with_challenging_cases(mut self) -> Self {
        self.truncation_rate = CHALLENGING_RATE;
        self
    }

    pub fn cone_count(&self) -> usize {
        self.scenes.iter().map(|s| s.cones.len()).sum()
    }
}

/// Where keypoints come from.
#[derive(Clone, Copy, Debug)]
pub enum KeypointSource<'a> {
    Model(&'a KeypointModel),
    /// Ground-truth keypoints plus isotropic Gaussian noise, in pixels of an
    /// [`ORACLE_CROP_SIZE`] detection crop. Scene-pixel noise therefore
    /// shrinks with distance, as it does for a model working on crops.
    Oracle {
        noise_px: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeRecord {
    pub scene: usize,
    /// Index into the scene's cone list.
    pub cone: usize,
    pub true_position: [f64; 3],
    pub true_color: ConeColor,
    /// Ground-plane range to the cone, meters.
    pub distance: f64,
    pub estimate: Option<[f64; 3]>,
    pub estimated_color: Option<ConeColor>,
    pub low_quality: bool,
}

impl ConeRecord {
    /// Ground-plane error `estimate - truth`, if matched.
    pub fn error(&self) -> Option<[f64; 2]> {
        self.estimate
            .map(|e| [e[0] - self.true_position[0], e[1] - self.true_position[1]])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub records: Vec<ConeRecord>,
    pub false_positives: usize,
    /// Detections whose disparity or depth was not positive.
    pub localization_failures: usize,
    pub frames: usize,
}

impl EvaluationRun {
    pub fn error_samples(&self) -> Vec<(f64, [f64; 2])> {
        self.records
            .iter()
            .filter_map(|r| r.error().map(|e| (r.distance, e)))
            .collect()
    }

    pub fn covariance(&self, edges: &[f64]) -> CovarianceOutcome {
        covariance_by_distance(&self.error_samples(), edges)
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        confusion_matrix(self)
    }

    /// One JSON object per ground-truth cone.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Square crop window `[left, top, side]` centered on a detection box.
pub fn crop_window(bbox: [f64; 4]) -> [f64; 3] {
    let (w, h) = (bbox[2] - bbox[0], bbox[3] - bbox[1]);
    let side = (w.max(h) / CROP_FILL).max(4.0);
    let cx = 0.5 * (bbox[0] + bbox[2]);
    let cy = 0.5 * (bbox[1] + bbox[3]);
    [cx - 0.5 * side, cy - 0.5 * side, side]
}

/// Resampled crop around `bbox` plus the window it was taken from.
pub fn detection_crop(image: &Image, bbox: [f64; 4], size: usize) -> (Image, [f64; 3]) {
    let win = crop_window(bbox);
    (image.crop_resize(win[0], win[1], win[2], win[2], size, size), win)
}

fn to_image_frame(kps: &[[f64; 2]], win: [f64; 3], size: usize) -> ConeKeypoints {
    let mut out = [[0.0; 2]; NUM_KEYPOINTS];
    for (o, &p) in out.iter_mut().zip(kps) {
        *o = from_crop_frame(p, win[0], win[1], win[2], win[2], size, size);
    }
    out
}

fn jitter_box<R: Rng>(b: [f64; 4], frac: f64, rng: &mut R) -> [f64; 4] {
    if frac <= 0.0 {
        return b;
    }
    let a = frac * (b[3] - b[1]);
    b.map(|v| v + rng.random_range(-a..=a))
}

/// Cuts `frac` of the box height or width from one random side.
fn truncate_box<R: Rng>(b: [f64; 4], frac: f64, rng: &mut R) -> [f64; 4] {
    let (w, h) = (b[2] - b[0], b[3] - b[1]);
    let mut out = b;
    match rng.random_range(0..4) {
        0 => out[0] += frac * w,
        1 => out[2] -= frac * w,
        2 => out[1] += frac * h,
        _ => out[3] -= frac * h,
    }
    out
}

fn noisy<R: Rng>(kps: &ConeKeypoints, bbox: [f64; 4], noise: Option<&Normal<f64>>, rng: &mut R) -> ConeKeypoints {
    match noise {
        None => *kps,
        Some(n) => {
            let scale = crop_window(bbox)[2] / ORACLE_CROP_SIZE;
            kps.map(|p| [p[0] + scale * n.sample(rng), p[1] + scale * n.sample(rng)])
        }
    }
}

struct SceneOutcome {
    records: Vec<ConeRecord>,
    false_positives: usize,
    localization_failures: usize,
}

fn run_scene(
    scenario: &Scenario,
    si: usize,
    spec: &SceneSpec,
    source: KeypointSource<'_>,
    noise: Option<&Normal<f64>>,
) -> Result<SceneOutcome> {
    let frame = render_stereo_scene(spec, &scenario.rig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(scenario.seed ^ 0x5EED, si as u64));

    let pairs: Vec<(ConeKeypoints, ConeKeypoints)> = match source {
        KeypointSource::Oracle { .. } => frame
            .cones
            .iter()
            .map(|c| {
                let l = noisy(&c.left_keypoints, c.left_box, noise, &mut rng);
                let r = noisy(&c.right_keypoints, c.right_box, noise, &mut rng);
                (l, r)
            })
            .collect(),
        KeypointSource::Model(model) => {
            let s = model.config.input_size;
            let mut crops = Vec::with_capacity(2 * frame.cones.len());
            let mut wins = Vec::with_capacity(2 * frame.cones.len());
            for c in &frame.cones {
                let mut lb = jitter_box(c.left_box, scenario.box_jitter, &mut rng);
                let mut rb = jitter_box(c.right_box, scenario.box_jitter, &mut rng);
                if rng.random::<f64>() < scenario.truncation_rate {
                    let mut r2 = rng.clone();
                    lb = truncate_box(lb, scenario.truncation_frac, &mut rng);
                    rb = truncate_box(rb, scenario.truncation_frac, &mut r2);
                }
                for (img, b) in [(&frame.left, lb), (&frame.right, rb)] {
                    let (crop, win) = detection_crop(img, b, s);
                    crops.push(crop);
                    wins.push(win);
                }
            }
            let preds = model.predict_images(&crops)?;
            preds
                .chunks(2)
                .zip(wins.chunks(2))
                .map(|(p, w)| {
                    (
                        to_image_frame(&p[0].keypoints, w[0], s),
                        to_image_frame(&p[1].keypoints, w[1], s),
                    )
                })
                .collect()
        }
    };

    let mut out = SceneOutcome {
        records: Vec::with_capacity(frame.cones.len()),
        false_positives: 0,
        localization_failures: 0,
    };
    let mut estimates = Vec::new();
    for (l, r) in &pairs {
        match localize_cone(l, r, &scenario.rig) {
            Ok(mut cone) => {
                cone.color = estimate_color(&frame.left, l);
                estimates.push(cone);
            }
            Err(Error::NonPositiveDisparity { .. } | Error::NonPositiveDepth { .. }) => out.localization_failures += 1,
            Err(e) => return Err(e),
        }
    }

    let truths: Vec<[f64; 2]> = frame.cones.iter().map(|c| [c.position[0], c.position[1]]).collect();
    let est_xy: Vec<[f64; 2]> = estimates.iter().map(|e| [e.position[0], e.position[1]]).collect();
    let m = match_detections(&truths, &est_xy, scenario.gate);
    out.false_positives = m.unmatched_estimates.len();
    for (ti, c) in frame.cones.iter().enumerate() {
        let est = m.estimate_for(ti).map(|ei| &estimates[ei]);
        out.records.push(ConeRecord {
            scene: si,
            cone: c.index,
            true_position: c.position,
            true_color: c.color,
            distance: c.position[0].hypot(c.position[1]),
            estimate: est.map(|e| e.position),
            estimated_color: est.map(|e| e.color),
            low_quality: est.is_some_and(|e| e.low_quality),
        });
    }
    Ok(out)
}

/// Runs every scene of `scenario` through the pipeline. Scenes are processed
/// in parallel and merged in scene order.
pub fn run_pipeline(scenario: &Scenario, source: KeypointSource<'_>) -> Result<EvaluationRun> {
    scenario.rig.validate()?;
    let noise = match source {
        KeypointSource::Oracle { noise_px } if noise_px < 0.0 || !noise_px.is_finite() => {
            return Err(Error::InvalidArgument(format!(
                "oracle noise must be >= 0, got {noise_px}"
            )))
        }
        KeypointSource::Oracle { noise_px } if noise_px > 0.0 => {
            Some(Normal::new(0.0, noise_px).expect("positive sigma"))
        }
        _ => None,
    };
    if let KeypointSource::Model(m) = source {
        m.config.validate()?;
    }
    let outcomes = scenario
        .scenes
        .par_iter()
        .enumerate()
        .map(|(si, spec)| run_scene(scenario, si, spec, source, noise.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut run = EvaluationRun {
        frames: outcomes.len(),
        ..Default::default()
    };
    for o in outcomes {
        run.records.extend(o.records);
        run.false_positives += o.false_positives;
        run.localization_failures += o.localization_failures;
    }
    Ok(run)
}

/// Rows: true blue, yellow, orange. Columns: estimated blue, yellow,
/// unknown, missed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 4]; 3],
    pub false_positives: usize,
}

impl ConfusionMatrix {
    pub const ROWS: [&'static str; 3] = ["blue", "yellow", "orange"];
    pub const COLUMNS: [&'static str; 4] = ["blue", "yellow", "unknown", "missed"];

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Fraction of ground-truth cones on the diagonal.
    pub fn diagonal_fraction(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / t as f64
    }

    /// Correct colors among matched cones.
    pub fn color_accuracy(&self) -> f64 {
        let matched: usize = self.counts.iter().map(|r| r[0] + r[1] + r[2]).sum();
        if matched == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / matched as f64
    }

    /// No off-diagonal mass and no false positives.
    pub fn is_diagonal(&self) -> bool {
        self.false_positives == 0
            && self
                .counts
                .iter()
                .enumerate()
                .all(|(i, r)| r.iter().enumerate().all(|(j, &v)| i == j || v == 0))
    }

    pub fn render(&self) -> String {
        let mut s = String::from("| true \\ est |");
        for c in Self::COLUMNS {
            s.push_str(&format!(" {c} |"));
        }
        s.push_str("\n|---|---|---|---|---|\n");
        for (name, row) in Self::ROWS.iter().zip(&self.counts) {
            s.push_str(&format!("| {name} |"));
            for v in row {
                s.push_str(&format!(" {v} |"));
            }
            s.push('\n');
        }
        s.push_str(&format!("\nfalse positives: {}\n", self.false_positives));
        s
    }
}

fn row_of(c: ConeColor) -> Option<usize> {
    match c {
        ConeColor::Blue => Some(0),
        ConeColor::Yellow => Some(1),
        ConeColor::Orange => Some(2),
        ConeColor::Unknown => None,
    }
}

pub fn confusion_matrix(run: &EvaluationRun) -> ConfusionMatrix {
    let mut m = ConfusionMatrix {
        false_positives: run.false_positives,
        ..Default::default()
    };
    for r in &run.records {
        let Some(row) = row_of(r.true_color) else { continue };
        let col = match r.estimated_color {
            None => 3,
            Some(ConeColor::Blue) => 0,
            Some(ConeColor::Yellow) => 1,
            Some(_) => 2,
        };
        m.counts[row][col] += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::SceneCone;

    #[test]
    fn crop_window_is_centered_square() {
        let w = crop_window([10.0, 20.0, 16.0, 46.0]);
        assert!((w[2] - 26.0 / CROP_FILL).abs() < 1e-12);
        assert!((w[0] + 0.5 * w[2] - 13.0).abs() < 1e-12);
        assert!((w[1] + 0.5 * w[2] - 33.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_oracle_localizes_exactly() {
        let spec = SceneSpec {
            cones: vec![
                SceneCone::on_ground(6.0, 1.0, ConeColor::Blue),
                SceneCone::on_ground(12.0, -2.0, ConeColor::Yellow),
            ],
            ..Default::default()
        };
        let sc = Scenario {
            rig: StereoRig::default(),
            scenes: vec![spec],
            box_jitter: 0.0,
            truncation_rate: 0.0,
            truncation_frac: 0.3,
            gate: DEFAULT_GATE,
            seed: 1,
        };
        let run = run_pipeline(&sc, KeypointSource::Oracle { noise_px: 0.0 }).unwrap();
        assert_eq!(run.records.len(), 2);
        for r in &run.records {
            let e = r.error().unwrap();
            assert!(e[0].abs() < 1e-9 && e[1].abs() < 1e-9, "{e:?}");
        }
        assert!(run.confusion().is_diagonal());
    }

    #[test]
    fn negative_noise_is_rejected() {
        let sc = Scenario {
            rig: StereoRig::default(),
            scenes: vec![],
            box_jitter: 0.0,
            truncation_rate: 0.0,
            truncation_frac: 0.3,
            gate: 1.0,
            seed: 0,
        };
        assert!(run_pipeline(&sc, KeypointSource::Oracle { noise_px: -1.0 }).is_err());
    }
}
