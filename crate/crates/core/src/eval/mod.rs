//! Interval adherence metrics and the benchmark harness.

mod bench;
mod metrics;

pub use bench::{
    run_benchmark, score_case, Aggregate, BenchCase, BenchConfig, BenchManifest, EvalReport, EvalRow, Generator,
    ModelGenerator, NoiseGenerator, OracleGenerator, BENCH_FORMAT_VERSION,
};
pub use metrics::{correlation_track, detect_presence, pattern_similarity, t_iou, t_l2, IntervalPair, Template};
