//! Throughput measurement on pre-rendered synthetic clips.

use crate::classify::ScoreSource;
use crate::error::{Error, Result};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::stream::{run_videos, MaskSource, MemorySource, ThroughputReport};
use crate::pipeline::synth::SyntheticScenario;

/// Smallest total length accepted, so that fps reflects steady state.
pub const MIN_BENCH_FRAMES: u64 = 2000;

/// Clips and the oracle score table are produced before the clock starts;
/// the timed part is extract, score lookup, merge and split.
pub fn benchmark(cfg: &PipelineConfig, scenarios: &[SyntheticScenario]) -> Result<ThroughputReport> {
    let frames: u64 = scenarios.iter().map(|s| s.duration as u64).sum();
    if frames < MIN_BENCH_FRAMES {
        return Err(Error::Config(format!(
            "benchmark needs at least {MIN_BENCH_FRAMES} frames, scenarios have {frames}"
        )));
    }
    let mut table = std::collections::BTreeMap::new();
    let mut sources = Vec::with_capacity(scenarios.len());
    for scn in scenarios {
        scn.validate()?;
        table.extend(scn.oracle_scores(cfg)?);
        sources.push(MemorySource {
            video_id: scn.video_id.clone(),
            clips: (0..scn.num_clips(cfg)).map(|i| scn.render_clip(cfg, i)).collect(),
        });
    }
    let refs: Vec<&dyn MaskSource> = sources.iter().map(|s| s as &dyn MaskSource).collect();
    Ok(run_videos(cfg, &refs, &ScoreSource::FileBacked(table))?.report)
}
