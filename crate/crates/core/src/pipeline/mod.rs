//! Simulated end-to-end evaluation.

pub mod bench;
pub mod covariance;
pub mod matching;
pub mod run;

pub use bench::{throughput_benchmark, BenchReport};
pub use covariance::{covariance_by_distance, BinCovariance, CovarianceOutcome, DEFAULT_BIN_EDGES};
pub use matching::{match_detections, Matching};
pub use run::{
    confusion_matrix, detection_crop, run_pipeline, ConeRecord, ConfusionMatrix, EvaluationRun, KeypointSource,
    Scenario, CHALLENGING_RATE, CROP_FILL, DEFAULT_GATE, ORACLE_CROP_SIZE,
};
