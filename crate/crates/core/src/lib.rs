//! Bayesian-Hebbian hypercolumn network engine.
//!
//! A three-layer network (input, hidden, output) whose weights are pointwise
//! mutual information estimates between unit activations. The input-to-hidden
//! projection is sparse and rewires itself; the hidden-to-output projection is
//! dense. Inference can run in single precision, emulated binary16, or Q3.12
//! fixed-point storage with binary16 accumulation, sequentially or through a
//! staged streaming pipeline.

#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod config;
pub mod encoding;
pub mod error;
mod fastmath;
pub mod inference;
pub mod learning;
pub mod model_io;
pub mod network;
pub mod pipeline;
pub mod precision;

pub use config::{validate_config, ConfigViolation, NetworkConfig};
pub use encoding::{complementary_encode, load_idx, load_raw_gray, Dataset, Split};
pub use error::{Error, Result};
pub use inference::{
    compute_support, evaluate, predict, soft_wta, Evaluation, InferenceKernel, InferenceResult,
    LatencyStats,
};
pub use learning::{
    connection_score, derive_weights, rewire, train_full, train_supervised, train_unsupervised,
    update_traces, EpochMetrics, Phase, TrainingParams,
};
pub use network::{build_network, init_traces, NetworkState, Projection, SparseConnectivity, TraceSet};
pub use precision::{
    cast_model, reduced_dot, Fixed16, Half, Precision, PrecisionMode, QuantizationStats, Strictness,
};
pub use model_io::{export_params, import_params, read_header, ParamHeader};
pub use pipeline::{
    build_pipeline, counters_report, CountersReport, Pipeline, PipelineKind, PipelineSpec, StageCounters, StageKind,
    StreamOutput,
};
pub use bench::{bench_latency, run_sweep, BenchReport, BenchRow, EvalSettings, SweepAxis, SweepSpec};
