//! End-to-end driver, file formats, synthetic data and benchmarking.

pub mod bench;
pub mod config;
pub mod format;
pub mod stream;
pub mod synth;

pub use bench::benchmark;
pub use config::PipelineConfig;
pub use stream::{
    run_stream, run_stream_with, run_videos, BatchOutput, DirSource, MaskSource, MemorySource, StageTimes,
    StreamOutput, SynthSource, ThroughputReport,
};
pub use synth::{
    crossing_scenario, mixed_duration_scenario, random_scenario, synth_generate, ActorSpec, RandomScenarioParams,
    SynthSummary, SyntheticScenario, TimelineSegment,
};
