//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Runs sequentially without the libtest harness so timing budgets are not
//! shared with other tests. The desk-scale training check trains two models
//! from scratch and dominates the run time.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use conekp::data::annotation::{filter_dataset, ConeAnnotation, ImageBounds};
use conekp::data::augment::{random_boundary_crop, rotate_augment, Rotation};
use conekp::data::dataset::{load_split, read_manifest};
use conekp::data::split::{split_dataset, split_sizes, DatasetItem, Split};
use conekp::imaging::Image;
use conekp::keypoints::{distance, ConeColor, ConeKeypoints};
use conekp::metrics::{evaluate, EvalItem, MetricReport};
use conekp::model::checkpoint::load_checkpoint;
use conekp::model::{Arch, KeypointModel};
use conekp::pipeline::{run_pipeline, throughput_benchmark, KeypointSource, Scenario, DEFAULT_BIN_EDGES};
use conekp::stereo::localize_cone;
use conekp::synth::scene::SceneSampler;
use conekp::synth::{generate_crops, project_point, CropStyle};
use conekp::StereoRig;
use conekp_cli::commands::{eval, synth, train};
use conekp_cli::server::{router, AppState, FsStore, PredictionResponse};
use conekp_tensor::gradcheck::layer_suite;
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SHAPES: usize = 20;
const GRAD_BUDGET_S: f64 = 120.0;
const GEOMETRY_TOL_M: f64 = 1e-6;
const GEOMETRY_BUDGET_S: f64 = 5.0;
const DESK_CROPS: usize = 2000;
const DESK_EPOCHS: u32 = 30;
const DESK_MIN_MAP: f64 = 0.8;
const DESK_MAX_RMSE: f64 = 2.0;
const DESK_BUDGET_S: f64 = 30.0 * 60.0;
const API_MIN_HIT_RATE: f64 = 0.8;
const SIM_MIN_DIAGONAL: f64 = 0.95;
const SIM_MIN_COLOR: f64 = 0.95;
const SIM_NOISE_PX: f64 = 0.5;
const SIM_MC_SAMPLES: usize = 1000;
const SIM_BUDGET_S: f64 = 600.0;
const BENCH_TARGET_MS: f64 = 50.0;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Result<Line> {
    Ok(Line {
        pass,
        detail: detail.into(),
    })
}

fn gradient_suite() -> Result<Line> {
    let start = Instant::now();
    let checks = layer_suite(GRAD_SHAPES, 2024)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let failing: Vec<_> = checks
        .iter()
        .filter(|c| !(c.max_rel_err < GRAD_TOL))
        .map(|c| c.layer)
        .collect();
    let all_shapes = checks.iter().all(|c| c.shapes == GRAD_SHAPES);
    line(
        failing.is_empty() && all_shapes && secs < GRAD_BUDGET_S,
        format!(
            "{} layers x {GRAD_SHAPES} shapes, worst rel err {worst:.2e} (< {GRAD_TOL:e}), {secs:.1}s (< {GRAD_BUDGET_S}s){}",
            checks.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {failing:?}") }
        ),
    )
}

fn geometry_round_trip() -> Result<Line> {
    let start = Instant::now();
    let rig = StereoRig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let offsets = [
        [0.0, 0.15],
        [0.03, 0.05],
        [-0.03, 0.05],
        [0.05, -0.05],
        [-0.05, -0.05],
        [0.0, -0.15],
    ];
    let (mut worst, mut exact_x) = (0.0f64, true);
    for _ in 0..1000 {
        let x = rng.random_range(2.0..=40.0);
        let p = [x, rng.random_range(-0.6..0.6) * x, rng.random_range(-0.3..0.3) * x];
        let mut l = [[0.0; 2]; 6];
        let mut r = [[0.0; 2]; 6];
        for (i, o) in offsets.iter().enumerate() {
            let q = project_point([p[0], p[1] + o[0], p[2] + o[1]], &rig)?;
            l[i] = q.left;
            r[i] = q.right;
        }
        let c = localize_cone(&l, &r, &rig)?;
        exact_x &= c.position[0] == c.depth;
        worst = worst.max((0..3).map(|i| (c.position[i] - p[i]).powi(2)).sum::<f64>().sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        worst < GEOMETRY_TOL_M && exact_x && secs < GEOMETRY_BUDGET_S,
        format!("1000 points in [2, 40] m, worst error {worst:.2e} m, x' == Z: {exact_x}, {secs:.2}s"),
    )
}

fn augmentation_algebra() -> Result<Line> {
    let turn = |img: &Image, k: &ConeKeypoints, rots: &[Rotation]| -> Result<(Image, ConeKeypoints)> {
        let mut cur = (img.clone(), *k);
        for &r in rots {
            cur = rotate_augment(&cur.0, &cur.1, r)?;
        }
        Ok(cur)
    };
    let close = |a: &ConeKeypoints, b: &ConeKeypoints| a.iter().zip(b).all(|(p, q)| distance(*p, *q) < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let (mut identity, mut half) = (true, true);
    for _ in 0..200 {
        let size = rng.random_range(1..32);
        let data = (0..size * size * 3).map(|_| rng.random::<f32>()).collect();
        let img = Image::from_raw(size, size, data)?;
        let hi = (size - 1) as f64;
        let k: ConeKeypoints = [(); 6].map(|_| [rng.random_range(0.0..=hi), rng.random_range(0.0..=hi)]);
        let four = turn(&img, &k, &[Rotation::Rotate90; 4])?;
        identity &= four.0 == img && close(&four.1, &k);
        let a = turn(&img, &k, &[Rotation::Rotate180])?;
        let b = turn(&img, &k, &[Rotation::Rotate90; 2])?;
        half &= a.0 == b.0 && close(&a.1, &b.1);
    }
    let crops = generate_crops(100, 31, &CropStyle::default());
    let mut inside = 0;
    for seed in 0..1000u64 {
        let c = &crops[(seed % 100) as usize];
        let out = random_boundary_crop(&c.image, &c.keypoints, seed);
        let (w, h) = (out.image.width() as f64, out.image.height() as f64);
        if out
            .keypoints
            .iter()
            .all(|p| p[0] >= 0.0 && p[0] <= w - 1.0 && p[1] >= 0.0 && p[1] <= h - 1.0)
        {
            inside += 1;
        }
    }
    line(
        identity && half && inside == 1000,
        format!("R90^4 = id: {identity}, R180 = R90^2: {half} (200 images), crop in bounds {inside}/1000 seeds"),
    )
}

fn dataset_pipeline() -> Result<Line> {
    let b = ImageBounds { width: 80, height: 80 };
    let good = |id: &str| {
        ConeAnnotation::new(
            id,
            [
                [30.0, 20.0],
                [50.0, 20.0],
                [28.0, 40.0],
                [52.0, 40.0],
                [20.0, 70.0],
                [60.0, 70.0],
            ],
            ConeColor::Blue,
        )
    };
    let mut items: Vec<_> = (0..5).map(|i| (good(&format!("ok{i}")), b)).collect();
    let mut rejected = good("rejected");
    rejected.rejected = true;
    items.push((rejected, b));
    let mut short = good("short");
    short.keypoints.pop();
    items.push((short, b));
    let mut outside = good("outside");
    outside.keypoints[4] = [80.0, 70.0];
    items.push((outside, b));
    let (kept, tally) = filter_dataset(items);
    let tallies_ok = kept.len() == 5 && (tally.rejected, tally.count, tally.bounds) == (1, 1, 1);

    let sizes_ok = [
        (100, [70, 20, 10]),
        (2000, [1400, 400, 200]),
        (11, [7, 2, 2]),
        (19, [13, 3, 3]),
    ]
    .iter()
    .all(|(n, s)| split_sizes(*n) == *s);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stable = true;
    for n in [10, 37, 100, 2000] {
        let mut ids: Vec<DatasetItem> = (0..n).map(|i| DatasetItem::original(&format!("img{i:05}"))).collect();
        let a = split_dataset(&ids, 9)?;
        let again = split_dataset(&ids, 9)?;
        ids.shuffle(&mut rng);
        let shuffled = split_dataset(&ids, 9)?;
        let counts = [Split::Train, Split::Val, Split::Test].map(|s| a.count(s));
        for s in [Split::Train, Split::Val, Split::Test] {
            let mut x: Vec<_> = a.ids(s).map(|i| i.id.clone()).collect();
            let mut y: Vec<_> = shuffled.ids(s).map(|i| i.id.clone()).collect();
            x.sort();
            y.sort();
            stable &= x == y;
        }
        stable &= a == again && counts == split_sizes(n);
    }
    line(
        tallies_ok && sizes_ok && stable,
        format!(
            "filter kept {} (rejected {}, count {}, bounds {}), 70/20/10 floor-floor-remainder: {sizes_ok}, deterministic and order independent: {stable}",
            kept.len(),
            tally.rejected,
            tally.count,
            tally.bounds
        ),
    )
}

fn metric_oracles() -> Result<Line> {
    let truth = [[10.0, 10.0]; 6];
    let mut pred = truth;
    pred[0] = [13.0, 14.0];
    let d = distance(pred[0], truth[0]);
    let conf = [1.0; 6];
    let r = evaluate(
        &[EvalItem {
            predicted: &pred,
            confidences: &conf,
            truth: &truth,
        }],
        80.0,
    )?;
    let miss = d == 5.0 && (r.map_at_3px - 5.0 / 6.0).abs() < 1e-12;

    let truth = [[20.0, 20.0]; 6];
    let mut pred = truth;
    for (i, p) in pred.iter_mut().enumerate() {
        p[0] += i as f64;
    }
    let r = evaluate(
        &[EvalItem {
            predicted: &pred,
            confidences: &[0.5; 6],
            truth: &truth,
        }],
        80.0,
    )?;
    let four_sixths = (r.map_at_3px - 4.0 / 6.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(345);
    let mut worst_gap = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..20);
        let data: Vec<([[f64; 2]; 6], [[f64; 2]; 6], [f64; 6])> = (0..n)
            .map(|_| {
                let t = [(); 6].map(|_| [rng.random_range(0.0..80.0), rng.random_range(0.0..80.0)]);
                let p = t.map(|q| [q[0] + rng.random_range(-6.0..6.0), q[1] + rng.random_range(-6.0..6.0)]);
                (t, p, [(); 6].map(|_| rng.random_range(0.0..1.0)))
            })
            .collect();
        let items: Vec<EvalItem> = data
            .iter()
            .map(|(t, p, c)| EvalItem {
                predicted: p,
                confidences: c,
                truth: t,
            })
            .collect();
        let r = evaluate(&items, 80.0)?;
        worst_gap = worst_gap.max((r.rmse * r.rmse - r.mse).abs());
    }
    line(
        miss && four_sixths && worst_gap < 1e-9,
        format!(
            "3-4-5 distance {d} counted as a miss: {miss}, {{0..5}} px mAP = 4/6: {four_sixths}, max |rmse^2 - mse| {worst_gap:.1e} over 200 random sets"
        ),
    )
}

fn row<'a>(rows: &'a [(String, MetricReport)], label: &str) -> Result<&'a MetricReport> {
    rows.iter()
        .find(|(l, _)| l.starts_with(label))
        .map(|(_, r)| r)
        .with_context(|| format!("no {label} row in the report"))
}

struct DeskRun {
    unet: KeypointModel,
    line: Line,
}

fn desk_training(root: &Path) -> Result<DeskRun> {
    let data = root.join("data");
    synth::run(&synth::SynthConfig {
        out: Some(data.clone()),
        count: DESK_CROPS,
        seed: 7,
        ..Default::default()
    })?;
    let train_cfg = |arch: Arch, name: &str| train::TrainRunConfig {
        data: Some(data.clone()),
        out: Some(root.join(name)),
        arch,
        width: 8,
        epochs: DESK_EPOCHS,
        rotations: false,
        ..Default::default()
    };
    let start = Instant::now();
    train::run(&train_cfg(Arch::UNet, "unet"))?;
    let unet_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    train::run(&train_cfg(Arch::ResNet, "resnet"))?;
    let resnet_secs = start.elapsed().as_secs_f64();

    let ckpt = |name: &str| root.join(name).join(train::CHECKPOINT_FILE);
    let rows = eval::run(&eval::EvalConfig {
        data: Some(data.clone()),
        split: Split::Test,
        checkpoints: vec![ckpt("unet"), ckpt("resnet")],
        ..Default::default()
    })?;
    let u = row(&rows, Arch::UNet.label())?;
    let unet = KeypointModel::from_checkpoint(&load_checkpoint(&ckpt("unet"))?)?;
    let resnet = row(&rows, Arch::ResNet.label())?;
    let pass = u.map_at_3px >= DESK_MIN_MAP && u.rmse <= DESK_MAX_RMSE && unet_secs < DESK_BUDGET_S;
    Ok(DeskRun {
        unet,
        line: Line {
            pass,
            detail: format!(
                "UNet w8 on {} test crops: mAP@3px {:.3} (>= {DESK_MIN_MAP}), RMSE {:.3} px (<= {DESK_MAX_RMSE}), trained in {:.0}s (< {DESK_BUDGET_S}s); ResNet mAP {:.3}, RMSE {:.3}, {:.0}s",
                u.samples, u.map_at_3px, u.rmse, unet_secs, resnet.map_at_3px, resnet.rmse, resnet_secs
            ),
        },
    })
}

fn annotation_api_predictions(data: &Path, model: KeypointModel) -> Result<Line> {
    let manifest = read_manifest(data)?;
    let test = load_split(data, &manifest, Split::Test, 80)?;
    let app = router(AppState::new(Arc::new(FsStore::open(data)?), Some(Arc::new(model))));
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let mut hits = 0;
    for s in &test {
        let req = Request::get(format!("/api/predictions/{}", s.id)).body(Body::empty())?;
        let resp = rt.block_on(app.clone().oneshot(req))?;
        ensure!(
            resp.status() == StatusCode::OK,
            "predictions for {} returned {}",
            s.id,
            resp.status()
        );
        let bytes = rt.block_on(resp.into_body().collect())?.to_bytes();
        let p: PredictionResponse = serde_json::from_slice(&bytes)?;
        if p.keypoints.len() == 6
            && p.keypoints
                .iter()
                .zip(&s.keypoints)
                .all(|(a, b)| distance(*a, *b) <= 3.0)
        {
            hits += 1;
        }
    }
    let rate = hits as f64 / test.len() as f64;
    line(
        rate >= API_MIN_HIT_RATE,
        format!(
            "{hits}/{} test images with all 6 served keypoints within 3 px ({rate:.3} >= {API_MIN_HIT_RATE})",
            test.len()
        ),
    )
}

fn pipeline_simulation(model: Option<&KeypointModel>) -> Result<Line> {
    let start = Instant::now();
    let rig = StereoRig::default();
    let sampler = SceneSampler::default();
    let scenario = Scenario::random(25, &sampler, rig, 0)?;
    let run = run_pipeline(&scenario, KeypointSource::Oracle { noise_px: SIM_NOISE_PX })?;
    let m = run.confusion();
    let (diag, color) = (m.diagonal_fraction(), m.color_accuracy());

    let exact = run_pipeline(&scenario, KeypointSource::Oracle { noise_px: 0.0 })?
        .confusion()
        .is_diagonal();

    let frames = SIM_MC_SAMPLES.div_ceil(sampler.cones);
    let mc = Scenario::random(frames, &sampler, rig, 1)?;
    let cov = run_pipeline(&mc, KeypointSource::Oracle { noise_px: SIM_NOISE_PX })?.covariance(&DEFAULT_BIN_EDGES);
    let traces: Vec<f64> = cov.bins.iter().map(|b| b.trace()).collect();
    let monotone = traces.len() == DEFAULT_BIN_EDGES.len() - 1 && traces.windows(2).all(|w| w[0] <= w[1]);

    let model_note = match model {
        Some(m) => {
            let c = run_pipeline(&scenario, KeypointSource::Model(m))?.confusion();
            format!(
                "; with the trained UNet: diagonal {:.3}, color {:.3}",
                c.diagonal_fraction(),
                c.color_accuracy()
            )
        }
        None => String::new(),
    };
    let secs = start.elapsed().as_secs_f64();
    let traces_s: Vec<String> = traces.iter().map(|t| format!("{t:.4}")).collect();
    line(
        diag >= SIM_MIN_DIAGONAL && color >= SIM_MIN_COLOR && exact && monotone && secs < SIM_BUDGET_S,
        format!(
            "{} cones at {SIM_NOISE_PX} px: diagonal {diag:.3} (>= {SIM_MIN_DIAGONAL}), color {color:.3} (>= {SIM_MIN_COLOR}); zero noise exactly diagonal: {exact}; {} samples, bin traces [{}] m^2 non-decreasing: {monotone}; {secs:.1}s{model_note}",
            scenario.cone_count(),
            mc.cone_count(),
            traces_s.join(", ")
        ),
    )
}

fn throughput(model: &KeypointModel) -> Result<Line> {
    let r = throughput_benchmark(model, 10, 20, 3)?;
    // Informational: reported but never gating.
    line(
        true,
        format!(
            "10-cone batch at width 8: {:.1} ms/frame (target < {BENCH_TARGET_MS} ms, {}), {} thread(s)",
            r.mean_frame_ms,
            if r.mean_frame_ms < BENCH_TARGET_MS {
                "met"
            } else {
                "not met, informational"
            },
            r.threads
        ),
    )
}

fn report(name: &str, f: impl FnOnce() -> Result<Line>) -> bool {
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(l)) => l,
        Ok(Err(e)) => Line {
            pass: false,
            detail: format!("error: {e:#}"),
        },
        Err(_) => Line {
            pass: false,
            detail: "panicked".into(),
        },
    };
    println!(
        "{} {name}: {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail
    );
    outcome.pass
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters are harness options; accept and ignore them.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut ok = true;
    ok &= report("gradient suite", gradient_suite);
    ok &= report("geometry round trip", geometry_round_trip);
    ok &= report("augmentation algebra", augmentation_algebra);
    ok &= report("dataset pipeline", dataset_pipeline);
    ok &= report("metric oracles", metric_oracles);

    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            println!("FAIL desk-scale training: no temp dir: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut desk = None;
    ok &= report("desk-scale training", || {
        let run = desk_training(dir.path())?;
        let l = run.line;
        desk = Some(run.unet);
        Ok(l)
    });
    ok &= report("annotation api predictions", || match &desk {
        Some(m) => annotation_api_predictions(&dir.path().join("data"), m.clone()),
        None => line(false, "no trained model"),
    });
    ok &= report("pipeline simulation", || pipeline_simulation(desk.as_ref()));
    ok &= report("throughput", || match &desk {
        Some(m) => throughput(m),
        None => throughput(&KeypointModel::new(conekp::model::ModelConfig::desk(Arch::UNet), 0)?),
    });

    println!(
        "acceptance: {}",
        if ok {
            "all criteria passed"
        } else {
            "some criteria failed"
        }
    );
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
