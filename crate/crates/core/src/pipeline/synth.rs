//! Synthetic videos with known ground truth.
//!
//! Actors are axis-aligned rectangles moving at constant velocity, each
//! following a timeline of activity segments. Masks put actor pixels at
//! 0.9 and background at 0.1, optionally perturbed by Gaussian noise, then
//! quantized exactly as the `.gbm` format stores them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::{score_tubelet, ScoreSource};
use crate::error::{Error, Result};
use crate::extract::{extract, ClipRef};
use crate::model::{FrameBox, ScoreVector};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::format::{self, quantize};
use crate::scorer::GroundTruthInstance;
use crate::volume::{ClipMask, Dims};

pub const ACTOR_PROBABILITY: f32 = 0.9;
pub const BACKGROUND_PROBABILITY: f32 = 0.1;

/// `frames` consecutive frames of one activity; class 0 means idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineSegment {
    pub class_id: usize,
    pub frames: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub spawn_frame: u32,
    /// Top-left corner at the spawn frame.
    pub x: f64,
    pub y: f64,
    /// Pixels per frame.
    pub vx: f64,
    pub vy: f64,
    pub width: u32,
    pub height: u32,
    pub timeline: Vec<TimelineSegment>,
}

impl ActorSpec {
    pub fn lifetime(&self) -> u32 {
        self.timeline.iter().map(|s| s.frames).sum()
    }

    pub fn last_frame(&self) -> u32 {
        self.spawn_frame + self.lifetime().max(1) - 1
    }

    fn corner(&self, frame: u32) -> (f64, f64) {
        let k = (frame - self.spawn_frame) as f64;
        ((self.x + self.vx * k).round(), (self.y + self.vy * k).round())
    }

    pub fn box_at(&self, frame: u32) -> Option<FrameBox> {
        if frame < self.spawn_frame || frame > self.last_frame() || self.lifetime() == 0 {
            return None;
        }
        let (x, y) = self.corner(frame);
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let (x, y) = (x as u32, y as u32);
        FrameBox::new(frame, x, y, x + self.width, y + self.height).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub video_id: String,
    pub seed: u64,
    pub duration: u32,
    pub height: u32,
    pub width: u32,
    pub num_classes: usize,
    /// Standard deviation of the additive Gaussian mask noise.
    pub noise: f64,
    pub actors: Vec<ActorSpec>,
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Scenario(format!("{}: {msg}", self.video_id)));
        if self.duration == 0 || self.height == 0 || self.width == 0 {
            return bad("duration and resolution must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        for (k, a) in self.actors.iter().enumerate() {
            if a.timeline.is_empty() || a.timeline.iter().any(|s| s.frames == 0) {
                return bad(format!("actor {k} has an empty timeline segment"));
            }
            if let Some(s) = a.timeline.iter().find(|s| s.class_id > self.num_classes) {
                return bad(format!("actor {k} uses class {} of {}", s.class_id, self.num_classes));
            }
            if a.width == 0 || a.height == 0 {
                return bad(format!("actor {k} has zero size"));
            }
            if a.last_frame() >= self.duration {
                return bad(format!("actor {k} outlives the video"));
            }
            // motion is linear, so checking both ends covers the lifetime
            for f in [a.spawn_frame, a.last_frame()] {
                let inside = a.box_at(f).is_some_and(|b| b.fits_within(self.height, self.width));
                if !inside {
                    return bad(format!("actor {k} leaves the frame at frame {f}"));
                }
            }
        }
        Ok(())
    }

    /// One instance per maximal run of a non-idle class in each actor's
    /// timeline, with per-frame boxes.
    pub fn ground_truth(&self) -> Vec<GroundTruthInstance> {
        let mut out = Vec::new();
        for a in &self.actors {
            let mut frame = a.spawn_frame;
            let mut runs: Vec<(usize, u32, u32)> = Vec::new();
            for s in &a.timeline {
                let end = frame + s.frames - 1;
                match runs.last_mut() {
                    Some(last) if last.0 == s.class_id => last.2 = end,
                    _ => runs.push((s.class_id, frame, end)),
                }
                frame = end + 1;
            }
            for (class_id, start, end) in runs.into_iter().filter(|r| r.0 != 0) {
                out.push(GroundTruthInstance {
                    video_id: self.video_id.clone(),
                    class_id,
                    start_frame: start,
                    end_frame: end,
                    boxes: Some((start..=end).filter_map(|f| a.box_at(f)).collect()),
                });
            }
        }
        out.sort_by_key(|g| (g.start_frame, g.class_id, g.end_frame));
        out
    }

    /// Mask of clip `index`, already quantized to the stored precision.
    pub fn render_clip(&self, cfg: &PipelineConfig, index: usize) -> ClipMask {
        let (start, len) = cfg.clip_span(index, self.duration);
        let d = Dims::new(len as usize, self.height as usize, self.width as usize);
        let mut data = vec![BACKGROUND_PROBABILITY; d.len()];
        for a in &self.actors {
            for t in 0..d.t {
                let Some(b) = a.box_at(start + t as u32) else { continue };
                for y in b.y1..b.y2 {
                    let row = d.index(t, y as usize, 0);
                    data[row + b.x1 as usize..row + b.x2 as usize].fill(ACTOR_PROBABILITY);
                }
            }
        }
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(index as u64);
            let normal = Normal::new(0.0, self.noise as f32).expect("finite noise");
            for p in &mut data {
                *p += normal.sample(&mut rng);
            }
        }
        for p in &mut data {
            *p = quantize(*p) as f32 / 255.0;
        }
        ClipMask::from_vec(d, data).expect("sized above")
    }

    pub fn num_clips(&self, cfg: &PipelineConfig) -> usize {
        cfg.num_clips(self.duration)
    }

    /// Clip-level oracle table: every tubelet extracted from the rendered
    /// masks gets, per class, the mean over its frames of the oracle's
    /// per-frame score.
    pub fn oracle_scores(&self, cfg: &PipelineConfig) -> Result<BTreeMap<String, ScoreVector>> {
        let oracle = ScoreSource::oracle(self.ground_truth());
        let width = cfg.classes.num_classes() + 1;
        let mut table = BTreeMap::new();
        for index in 0..self.num_clips(cfg) {
            let (start, _) = cfg.clip_span(index, self.duration);
            let clip = ClipRef::new(self.video_id.clone(), index as u32, start);
            let mask = self.render_clip(cfg, index);
            for t in extract(&mask, &clip, &cfg.extraction, cfg.classes.num_classes())? {
                let scored = score_tubelet(&t, &oracle, &cfg.classes)?;
                let n = scored.frame_scores().len() as f64;
                let mean = (0..width)
                    .map(|c| scored.frame_scores().iter().map(|s| s.get(c)).sum::<f64>() / n)
                    .collect();
                table.insert(t.id.to_string(), ScoreVector::new(mean)?);
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomScenarioParams {
    pub video_id: String,
    pub seed: u64,
    pub duration: u32,
    pub actors: usize,
    pub num_classes: usize,
    pub height: u32,
    pub width: u32,
    pub noise: f64,
    pub min_segment: u32,
    pub max_segment: u32,
}

impl Default for RandomScenarioParams {
    fn default() -> Self {
        RandomScenarioParams {
            video_id: "synth_000".into(),
            seed: 0,
            duration: 2000,
            actors: 3,
            num_classes: 3,
            height: 128,
            width: 160,
            noise: 0.0,
            min_segment: 64,
            max_segment: 400,
        }
    }
}

fn lane(index: usize, lanes: usize, height: u32) -> (u32, u32) {
    let lane_h = height / lanes.max(1) as u32;
    (index as u32 * lane_h, lane_h)
}

/// Split `total` frames into segments of `min..=max` frames (the last
/// may be longer than `max`) with consecutive classes differing.
fn random_timeline(rng: &mut ChaCha8Rng, total: u32, min: u32, max: u32, num_classes: usize) -> Vec<TimelineSegment> {
    let mut out: Vec<TimelineSegment> = Vec::new();
    let mut remaining = total;
    while remaining > 0 {
        let frames = if remaining >= 2 * min {
            rng.random_range(min..=max.max(min).min(remaining - min))
        } else {
            remaining
        };
        let previous = out.last().map(|s| s.class_id);
        let class_id = loop {
            let c = rng.random_range(1..=num_classes);
            if num_classes == 1 || Some(c) != previous {
                break c;
            }
        };
        out.push(TimelineSegment { class_id, frames });
        remaining -= frames;
    }
    out
}

/// Actors in separate horizontal lanes, so masks never touch, moving
/// sideways with activity segments of at least `min_segment` frames.
pub fn random_scenario(p: &RandomScenarioParams) -> Result<SyntheticScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut actors = Vec::with_capacity(p.actors);
    for k in 0..p.actors {
        let (top, lane_h) = lane(k, p.actors, p.height);
        if lane_h < 6 {
            return Err(Error::Scenario(format!(
                "{} lanes do not fit in {} rows",
                p.actors, p.height
            )));
        }
        let height = (lane_h - 4).min(48);
        let width = rng.random_range(12..=32u32).min(p.width.saturating_sub(4)).max(1);
        let spawn_frame = rng.random_range(0..=p.duration / 4);
        let max_life = p.duration - spawn_frame;
        let lifetime = rng.random_range((max_life / 2).max(1)..=max_life);
        let travel = (p.width - width - 2) as f64;
        let vmax = (travel / lifetime as f64).min(1.5);
        let vx = rng.random_range(-vmax..=vmax);
        let span = vx.abs() * (lifetime - 1) as f64;
        let lo = if vx < 0.0 { 1.0 + span } else { 1.0 };
        let hi = if vx < 0.0 { travel + 1.0 } else { travel + 1.0 - span };
        let x = rng.random_range(lo..=hi.max(lo)).floor();
        let y = (top + 2 + rng.random_range(0..=lane_h - height - 4)) as f64;
        actors.push(ActorSpec {
            spawn_frame,
            x,
            y,
            vx,
            vy: 0.0,
            width,
            height,
            timeline: random_timeline(&mut rng, lifetime, p.min_segment, p.max_segment, p.num_classes),
        });
    }
    let scn = SyntheticScenario {
        video_id: p.video_id.clone(),
        seed: p.seed,
        duration: p.duration,
        height: p.height,
        width: p.width,
        num_classes: p.num_classes,
        noise: p.noise,
        actors,
    };
    scn.validate()?;
    Ok(scn)
}

/// Two actors in neighbouring lanes passing each other horizontally.
pub fn crossing_scenario(seed: u64, duration: u32) -> SyntheticScenario {
    let (h, w) = (64, 160);
    let life = duration - 1;
    let speed = (w - 24) as f64 / life as f64;
    let actor = |x: f64, y: f64, vx: f64, class_id: usize| ActorSpec {
        spawn_frame: 0,
        x,
        y,
        vx,
        vy: 0.0,
        width: 20,
        height: 24,
        timeline: vec![TimelineSegment { class_id, frames: life }],
    };
    SyntheticScenario {
        video_id: "crossing".into(),
        seed,
        duration,
        height: h,
        width: w,
        num_classes: 2,
        noise: 0.0,
        actors: vec![actor(2.0, 4.0, speed, 1), actor((w - 22) as f64, 34.0, -speed, 2)],
    }
}

/// Long activities (class 1 and 2, 300+ frames) on some actors, short
/// bursts (class 3 and 4, 16 to 32 frames, separated by idle time) on
/// others.
pub fn mixed_duration_scenario(video_id: &str, seed: u64, duration: u32) -> Result<SyntheticScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (height, width) = (128u32, 160u32);
    let lanes = 4;
    let mut actors = Vec::new();
    for k in 0..lanes {
        let (top, lane_h) = lane(k, lanes, height);
        let long = k % 2 == 0;
        let mut timeline = Vec::new();
        let mut used = 0;
        let life = duration - 1;
        while used < life {
            let left = life - used;
            let seg = if long {
                let frames = if left < 600 {
                    left
                } else {
                    rng.random_range(300..=(left - 300).min(500))
                };
                TimelineSegment {
                    class_id: if timeline.len() % 2 == 0 { 1 } else { 2 },
                    frames,
                }
            } else if timeline.len() % 2 == 0 || left < 60 {
                TimelineSegment {
                    class_id: 0,
                    frames: if left < 160 { left } else { rng.random_range(60..=120) },
                }
            } else {
                TimelineSegment {
                    class_id: rng.random_range(3..=4),
                    frames: rng.random_range(16..=32),
                }
            };
            used += seg.frames;
            timeline.push(seg);
        }
        actors.push(ActorSpec {
            spawn_frame: 0,
            x: 4.0 + 20.0 * k as f64,
            y: (top + 2) as f64,
            vx: 0.02,
            vy: 0.0,
            width: 20,
            height: lane_h - 4,
            timeline,
        });
    }
    let scn = SyntheticScenario {
        video_id: video_id.into(),
        seed,
        duration,
        height,
        width,
        num_classes: 4,
        noise: 0.0,
        actors,
    };
    scn.validate()?;
    Ok(scn)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub videos: usize,
    pub clips: usize,
    pub ground_truth: usize,
    pub tubelets: usize,
}

/// Writes `masks/<video>/clip_<i>.gbm`, `gt.json`, `scores.csv` and
/// `videos.json` under `out`.
pub fn synth_generate(scenarios: &[SyntheticScenario], cfg: &PipelineConfig, out: &Path) -> Result<SynthSummary> {
    let mut summary = SynthSummary::default();
    let mut gt = Vec::new();
    let mut table = BTreeMap::new();
    let mut lengths = BTreeMap::new();
    for scn in scenarios {
        scn.validate()?;
        if scn.num_classes > cfg.classes.num_classes() {
            return Err(Error::Scenario(format!(
                "{} uses {} classes, catalog has {}",
                scn.video_id,
                scn.num_classes,
                cfg.classes.num_classes()
            )));
        }
        for index in 0..scn.num_clips(cfg) {
            let path = format::clip_path(&out.join("masks"), &scn.video_id, index);
            format::write_gbm(&path, &scn.render_clip(cfg, index))?;
            summary.clips += 1;
        }
        let scores = scn.oracle_scores(cfg)?;
        summary.tubelets += scores.len();
        table.extend(scores);
        gt.extend(scn.ground_truth());
        lengths.insert(scn.video_id.clone(), scn.duration);
        summary.videos += 1;
    }
    summary.ground_truth = gt.len();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    format::write_json(&out.join("gt.json"), &gt)?;
    format::write_json(&out.join("videos.json"), &lengths)?;
    let scores_path = out.join("scores.csv");
    let f = std::fs::File::create(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
    crate::classify::write_score_table(&table, f)?;
    Ok(summary)
}
