//! Clip-by-clip driver: extract, score, merge, split.
//!
//! Each video is processed strictly in clip order. Tubelets are held in a
//! small reorder buffer until no later clip can produce one that starts
//! earlier (only relevant when clips overlap), then fed to the merge state.
//! Tubes the merge state finalizes are split and emitted immediately.
//! Videos are independent and run in parallel on a bounded pool.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{score_tubelet, ScoreSource};
use crate::error::{Error, Result};
use crate::extract::{extract, ClipRef};
use crate::model::{ActionInstance, ActionTube, Track, Tubelet};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::format;
use crate::pipeline::synth::SyntheticScenario;
use crate::tmas::{action_split, MergeState};
use crate::volume::ClipMask;

/// Ordered clip masks of one video.
pub trait MaskSource: Sync {
    fn video_id(&self) -> &str;
    fn num_clips(&self) -> usize;
    fn load(&self, index: usize) -> Result<ClipMask>;
}

/// `.gbm` files under `<root>/<video_id>/`.
#[derive(Debug, Clone)]
pub struct DirSource {
    root: PathBuf,
    video_id: String,
    num_clips: usize,
}

impl DirSource {
    /// Clip count is one past the highest index on disk; gaps surface as
    /// errors when the missing clip is reached.
    pub fn open(root: &Path, video_id: &str) -> Result<Self> {
        let clips = format::list_clips(root, video_id)?;
        Ok(DirSource {
            root: root.to_path_buf(),
            video_id: video_id.to_string(),
            num_clips: clips.last().map_or(0, |&i| i + 1),
        })
    }

    /// One source per video directory under `root`.
    pub fn open_all(root: &Path) -> Result<Vec<DirSource>> {
        format::list_videos(root)?
            .iter()
            .map(|v| DirSource::open(root, v))
            .collect()
    }
}

impl MaskSource for DirSource {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn num_clips(&self) -> usize {
        self.num_clips
    }

    fn load(&self, index: usize) -> Result<ClipMask> {
        let path = format::clip_path(&self.root, &self.video_id, index);
        if !path.is_file() {
            return Err(Error::MissingClip {
                video: self.video_id.clone(),
                index,
            });
        }
        format::read_gbm(&path)
    }
}

/// Clips held in memory.
#[derive(Debug, Clone)]
pub struct MemorySource {
    pub video_id: String,
    pub clips: Vec<ClipMask>,
}

impl MaskSource for MemorySource {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn num_clips(&self) -> usize {
        self.clips.len()
    }

    fn load(&self, index: usize) -> Result<ClipMask> {
        self.clips.get(index).cloned().ok_or_else(|| Error::MissingClip {
            video: self.video_id.clone(),
            index,
        })
    }
}

/// Renders a synthetic scenario on demand.
#[derive(Debug, Clone)]
pub struct SynthSource {
    pub scenario: SyntheticScenario,
    pub config: PipelineConfig,
}

impl MaskSource for SynthSource {
    fn video_id(&self) -> &str {
        &self.scenario.video_id
    }

    fn num_clips(&self) -> usize {
        self.scenario.num_clips(&self.config)
    }

    fn load(&self, index: usize) -> Result<ClipMask> {
        Ok(self.scenario.render_clip(&self.config, index))
    }
}

/// Seconds spent in each stage. With several workers these are summed
/// over workers, so they can exceed the wall time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub extract: f64,
    pub classify: f64,
    pub merge: f64,
    pub split: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.extract + self.classify + self.merge + self.split
    }

    fn add(&mut self, o: &StageTimes) {
        self.extract += o.extract;
        self.classify += o.classify;
        self.merge += o.merge;
        self.split += o.split;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub videos: usize,
    pub clips: usize,
    pub frames: u64,
    pub workers: usize,
    pub wall_seconds: f64,
    /// `frames / wall_seconds`
    pub fps: f64,
    pub stages: StageTimes,
}

impl ThroughputReport {
    fn finish(&mut self, wall_seconds: f64) {
        self.wall_seconds = wall_seconds;
        self.fps = if wall_seconds > 0.0 {
            self.frames as f64 / wall_seconds
        } else {
            0.0
        };
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamOutput {
    /// In emission order.
    pub instances: Vec<ActionInstance>,
    /// Index of the clip being processed when each instance was emitted;
    /// `num_clips` for instances emitted when the stream ended.
    pub emitted_at: Vec<usize>,
    pub report: ThroughputReport,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = f();
    *slot += t0.elapsed().as_secs_f64();
    out
}

/// Run one video through the pipeline.
pub fn run_stream(cfg: &PipelineConfig, source: &dyn MaskSource, scores: &ScoreSource) -> Result<StreamOutput> {
    run_stream_with(cfg, source, scores, |_, _| {})
}

/// As [`run_stream`], calling `emit(instance, clip_index)` as each
/// instance is decided.
pub fn run_stream_with(
    cfg: &PipelineConfig,
    source: &dyn MaskSource,
    scores: &ScoreSource,
    mut emit: impl FnMut(&ActionInstance, usize),
) -> Result<StreamOutput> {
    cfg.validate()?;
    let wall = Instant::now();
    let video = source.video_id();
    let n = source.num_clips();
    let num_classes = cfg.classes.num_classes();
    let mut state = MergeState::new(cfg.link)?;
    let mut out = StreamOutput::default();
    let mut st = StageTimes::default();
    let mut pending: Vec<Tubelet> = Vec::new();

    let mut deliver = |tubes: Vec<ActionTube>, at: usize, st: &mut StageTimes, out: &mut StreamOutput| {
        if tubes.is_empty() {
            return;
        }
        let found = timed(&mut st.split, || action_split(&tubes, &cfg.classes, &cfg.split));
        for inst in found {
            emit(&inst, at);
            out.instances.push(inst);
            out.emitted_at.push(at);
        }
    };

    for index in 0..n {
        let mask = source.load(index)?;
        let start = index as u32 * cfg.clip_stride;
        out.report.frames = out.report.frames.max(start as u64 + mask.dims().t as u64);
        let clip = ClipRef::new(video, index as u32, start);
        let tubelets = timed(&mut st.extract, || extract(&mask, &clip, &cfg.extraction, num_classes))?;
        let scored = timed(&mut st.classify, || {
            tubelets
                .iter()
                .map(|t| score_tubelet(t, scores, &cfg.classes))
                .collect::<Result<Vec<_>>>()
        })?;
        pending.extend(scored);

        // every later clip starts at or after the watermark
        let watermark = start + cfg.clip_stride;
        let finalized = timed(&mut st.merge, || -> Result<Vec<ActionTube>> {
            pending.sort_by_key(|t| (t.start_frame(), t.id.clip, t.id.component));
            let cut = pending.partition_point(|t| t.start_frame() < watermark);
            let mut finalized = Vec::new();
            for t in pending.drain(..cut) {
                finalized.extend(state.merge_step(&t)?);
            }
            finalized.extend(state.advance_to(watermark));
            Ok(finalized)
        })?;
        deliver(finalized, index, &mut st, &mut out);
    }

    let rest = timed(&mut st.merge, || -> Result<Vec<ActionTube>> {
        let mut finalized = Vec::new();
        for t in pending.drain(..) {
            finalized.extend(state.merge_step(&t)?);
        }
        finalized.extend(state.merge_finalize());
        Ok(finalized)
    })?;
    deliver(rest, n, &mut st, &mut out);

    out.report.videos = 1;
    out.report.clips = n;
    out.report.workers = 1;
    out.report.stages = st;
    out.report.finish(wall.elapsed().as_secs_f64());
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutput {
    /// Grouped by video id in sorted order; emission order within a video.
    pub instances: Vec<ActionInstance>,
    pub report: ThroughputReport,
    pub per_video: Vec<(String, ThroughputReport)>,
}

/// Run every video on a pool of `cfg.workers` threads. Output does not
/// depend on the worker count.
pub fn run_videos(cfg: &PipelineConfig, sources: &[&dyn MaskSource], scores: &ScoreSource) -> Result<BatchOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let wall = Instant::now();
    let mut results = pool.install(|| {
        sources
            .par_iter()
            .map(|s| run_stream(cfg, *s, scores).map(|o| (s.video_id().to_string(), o)))
            .collect::<Result<Vec<_>>>()
    })?;
    let elapsed = wall.elapsed().as_secs_f64();
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut batch = BatchOutput::default();
    for (video, o) in results {
        batch.report.videos += 1;
        batch.report.clips += o.report.clips;
        batch.report.frames += o.report.frames;
        batch.report.stages.add(&o.report.stages);
        batch.instances.extend(o.instances);
        batch.per_video.push((video, o.report));
    }
    batch.report.workers = cfg.workers;
    batch.report.finish(elapsed);
    Ok(batch)
}
