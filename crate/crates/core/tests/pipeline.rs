use std::collections::BTreeSet;

use conekp::model::{Arch, KeypointModel, ModelConfig};
use conekp::pipeline::covariance::eigen_sym2;
use conekp::pipeline::run::CHALLENGING_RATE;
use conekp::pipeline::{
    covariance_by_distance, match_detections, run_pipeline, throughput_benchmark, EvaluationRun, KeypointSource,
    Scenario,
};
use conekp::stereo::estimate_color;
use conekp::synth::{generate_crops, CropStyle, SceneCone, SceneSampler, SceneSpec};
use conekp::{ConeColor, StereoRig};
use proptest::prelude::*;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Among all maximal gated assignments, the one with the lexicographically
/// smallest ascending distance list.
fn brute_force(truths: &[[f64; 2]], estimates: &[[f64; 2]], gate: f64) -> BTreeSet<(usize, usize)> {
    let (nt, ne) = (truths.len(), estimates.len());
    let mut best: Option<(Vec<f64>, BTreeSet<(usize, usize)>)> = None;
    let mut choice = vec![0usize; nt];
    loop {
        let pairs: Vec<(usize, usize)> = choice
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, &c)| (t, c - 1))
            .collect();
        let es: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
        let valid = es.len() == pairs.len() && pairs.iter().all(|&(t, e)| dist(truths[t], estimates[e]) <= gate);
        let maximal = valid
            && (0..nt)
                .all(|t| choice[t] > 0 || (0..ne).all(|e| es.contains(&e) || dist(truths[t], estimates[e]) > gate));
        if maximal {
            let mut ds: Vec<f64> = pairs.iter().map(|&(t, e)| dist(truths[t], estimates[e])).collect();
            ds.sort_by(f64::total_cmp);
            let better = best.as_ref().is_none_or(|(b, _)| {
                ds.iter()
                    .zip(b)
                    .find(|(x, y)| x != y)
                    .map_or(ds.len() > b.len(), |(x, y)| x < y)
            });
            if better {
                best = Some((ds, pairs.into_iter().collect()));
            }
        }
        let mut i = 0;
        while i < nt {
            choice[i] += 1;
            if choice[i] <= ne {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == nt {
            break;
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..4.0, 0.0f64..4.0).prop_map(|(x, y)| [x, y]), 0..=max)
}

#[test]
fn crossed_pairs_take_the_globally_closest_first() {
    let truths = [[0.0, 0.0], [1.0, 0.0]];
    let estimates = [[0.9, 0.0], [2.5, 0.0]];
    let m = match_detections(&truths, &estimates, 2.0);
    // Truth 1 owns the 0.1 m pair, leaving truth 0 with the 2.5 m estimate
    // outside the gate.
    assert_eq!(m.estimate_for(1), Some(0));
    assert_eq!(m.estimate_for(0), None);
    assert_eq!(m.unmatched_estimates, vec![1]);
}

fn sample_run(frames: usize, noise_px: f64, seed: u64) -> EvaluationRun {
    let scenario = Scenario::random(frames, &SceneSampler::default(), StereoRig::default(), seed).unwrap();
    run_pipeline(&scenario, KeypointSource::Oracle { noise_px }).unwrap()
}

#[test]
fn noiseless_oracle_gives_a_diagonal_matrix() {
    let run = sample_run(25, 0.0, 3);
    let m = run.confusion();
    assert!(m.is_diagonal(), "{}", m.render());
    assert_eq!(m.total(), run.records.len());
    for r in &run.records {
        let e = r.error().unwrap();
        assert!(e[0].abs() < 1e-6 && e[1].abs() < 1e-6);
    }
}

#[test]
fn confusion_entries_sum_to_truth_count() {
    let scenario = Scenario::random(20, &SceneSampler::default(), StereoRig::default(), 4)
        .unwrap()
        .with_challenging_cases();
    assert_eq!(scenario.truncation_rate, CHALLENGING_RATE);
    let run = run_pipeline(&scenario, KeypointSource::Oracle { noise_px: 1.0 }).unwrap();
    let m = run.confusion();
    assert_eq!(m.total(), scenario.cone_count());
    assert_eq!(run.to_jsonl().lines().count(), scenario.cone_count());
}

#[test]
fn fifty_scene_run_is_deterministic() {
    let scenario = Scenario::random(50, &SceneSampler::default(), StereoRig::default(), 11)
        .unwrap()
        .with_challenging_cases();
    let a = run_pipeline(&scenario, KeypointSource::Oracle { noise_px: 0.5 }).unwrap();
    let b = run_pipeline(&scenario, KeypointSource::Oracle { noise_px: 0.5 }).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames, 50);
}

#[test]
fn empty_scenario_yields_an_empty_run() {
    let run = sample_run(0, 0.5, 1);
    assert!(run.records.is_empty());
    assert_eq!(run.confusion().total(), 0);
    assert!(run.covariance(&[2.0, 8.0]).bins.is_empty());
}

#[test]
fn hand_placed_cones_localize_with_the_model_source() {
    let rig = StereoRig::default();
    let scene = SceneSpec {
        cones: vec![
            SceneCone::on_ground(6.0, 1.0, ConeColor::Blue),
            SceneCone::on_ground(9.0, -1.5, ConeColor::Yellow),
        ],
        ..SceneSpec::default()
    };
    let scenario = Scenario {
        scenes: vec![scene],
        ..Scenario::random(0, &SceneSampler::default(), rig, 0).unwrap()
    };
    let model = KeypointModel::new(ModelConfig::desk(Arch::UNet), 1).unwrap();
    let run = run_pipeline(&scenario, KeypointSource::Model(&model)).unwrap();
    assert_eq!(run.records.len(), 2);
    assert_eq!(run.confusion().total(), 2);
}

#[test]
fn color_classifier_on_a_thousand_crops() {
    let crops = generate_crops(1000, 21, &CropStyle::default());
    let mut right = 0;
    let mut total = 0;
    for c in crops
        .iter()
        .filter(|c| matches!(c.color, ConeColor::Blue | ConeColor::Yellow))
    {
        total += 1;
        right += usize::from(estimate_color(&c.image, &c.keypoints) == c.color);
    }
    assert!(total > 500);
    assert!(right as f64 / total as f64 >= 0.95, "{right}/{total}");
}

#[test]
fn benchmark_rejects_empty_work() {
    let model = KeypointModel::new(ModelConfig::desk(Arch::UNet), 1).unwrap();
    assert!(throughput_benchmark(&model, 10, 0, 1).is_err());
    assert!(throughput_benchmark(&model, 0, 3, 1).is_err());
    let r = throughput_benchmark(&model, 2, 2, 1).unwrap();
    assert!(r.min_frame_ms <= r.mean_frame_ms && r.mean_frame_ms <= r.max_frame_ms);
    assert!(r.min_frame_ms > 0.0);
}

/// Sample covariance written out longhand.
fn covariance_oracle(errs: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let n = errs.len() as f64;
    let mx = errs.iter().map(|e| e[0]).sum::<f64>() / n;
    let my = errs.iter().map(|e| e[1]).sum::<f64>() / n;
    let mut c = [[0.0; 2]; 2];
    for e in errs {
        let d = [e[0] - mx, e[1] - my];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j] / (n - 1.0);
            }
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn greedy_matches_brute_force(t in points(5), e in points(5), gate in 0.2f64..3.0) {
        let m = match_detections(&t, &e, gate);
        let got: BTreeSet<(usize, usize)> = m.pairs.iter().map(|p| (p.0, p.1)).collect();
        prop_assert_eq!(got, brute_force(&t, &e, gate));
        prop_assert_eq!(m.pairs.len() + m.unmatched_truths.len(), t.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_estimates.len(), e.len());
    }

    #[test]
    fn matching_ignores_estimate_order(t in points(6), e in points(6), gate in 0.2f64..3.0, rot in 0usize..6) {
        let mut shifted = e.clone();
        if !shifted.is_empty() {
            let k = rot % shifted.len();
            shifted.rotate_left(k);
        }
        let a = match_detections(&t, &e, gate);
        let b = match_detections(&t, &shifted, gate);
        for ti in 0..t.len() {
            prop_assert_eq!(a.estimate_for(ti).map(|i| e[i]), b.estimate_for(ti).map(|i| shifted[i]));
        }
    }

    #[test]
    fn binned_covariance_is_symmetric_psd(
        samples in prop::collection::vec((2.0f64..20.0, -1.0f64..1.0, -1.0f64..1.0), 0..60),
    ) {
        let s: Vec<(f64, [f64; 2])> = samples.iter().map(|&(d, x, y)| (d, [x * d / 10.0, y])).collect();
        let out = covariance_by_distance(&s, &[2.0, 8.0, 14.0, 20.0]);
        for b in &out.bins {
            let errs: Vec<[f64; 2]> = s.iter().filter(|x| x.0 >= b.range[0] && x.0 < b.range[1]).map(|x| x.1).collect();
            prop_assert_eq!(errs.len(), b.count);
            let o = covariance_oracle(&errs);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((b.cov[i][j] - o[i][j]).abs() < 1e-12);
                }
            }
            prop_assert_eq!(b.cov[0][1], b.cov[1][0]);
            prop_assert!(b.eigenvalues[1] >= -1e-12 && b.eigenvalues[0] >= b.eigenvalues[1]);
            let r = b.reconstruct();
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((r[i][j] - b.cov[i][j]).abs() < 1e-9);
                }
            }
            prop_assert!((b.trace() - b.eigenvalues.iter().sum::<f64>()).abs() < 1e-9);
        }
        prop_assert_eq!(out.bins.len() + out.warnings.len(), 3);
    }

    #[test]
    fn eigen_decomposition_reconstructs(g in prop::array::uniform4(-3.0f64..3.0)) {
        // G G^T is symmetric PSD.
        let a = g[0] * g[0] + g[1] * g[1];
        let b = g[0] * g[2] + g[1] * g[3];
        let d = g[2] * g[2] + g[3] * g[3];
        let ([l1, l2], th) = eigen_sym2([[a, b], [b, d]]);
        let (c, s) = (th.cos(), th.sin());
        let m00 = l1 * c * c + l2 * s * s;
        let m01 = (l1 - l2) * c * s;
        let m11 = l1 * s * s + l2 * c * c;
        prop_assert!((m00 - a).abs() < 1e-9 && (m01 - b).abs() < 1e-9 && (m11 - d).abs() < 1e-9);
        prop_assert!(l1 >= l2 && l2 >= 0.0);
    }
}
