//! Training, evaluation, the scene-count scaling benchmark and attention
//! export.

mod batch;
mod bench;
mod eval;
mod export;
mod train;

pub use batch::PreparedSet;
pub use bench::{bench_scaling, bench_to_csv, BenchOptions, BenchRow};
pub use eval::{evaluate, predict, summarize, EvalOptions, EvalReport, SamplePrediction, SceneReport};
pub use export::{encoder_heatmap, export_attention, normalize_heatmap, AttentionSummary};
pub use train::{train, StepRecord, TrainConfig, TrainSink, TrainSummary, LOG_HEADER};
