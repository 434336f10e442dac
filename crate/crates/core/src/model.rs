//! Boxes, tubelets, tubes and action instances, plus the overlap measures
//! used to link tubelets over time.
//!
//! Frame indices are absolute positions on the video timeline. Boxes use
//! half-open integer pixel intervals, so `[x1, x2) x [y1, y2)` covers
//! `(x2 - x1) * (y2 - y1)` pixels exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame: u32,
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl FrameBox {
    pub fn new(frame: u32, x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { frame, x1, y1, x2, y2 });
        }
        Ok(FrameBox { frame, x1, y1, x2, y2 })
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Pixel count shared with `other`, ignoring frame indices.
    pub fn intersection_area(&self, other: &FrameBox) -> u64 {
        let w = self.x2.min(other.x2).saturating_sub(self.x1.max(other.x1));
        let h = self.y2.min(other.y2).saturating_sub(self.y1.max(other.y1));
        w as u64 * h as u64
    }

    pub fn fits_within(&self, height: u32, width: u32) -> bool {
        self.x2 <= width && self.y2 <= height
    }

    /// Same rectangle moved to another frame.
    pub fn at_frame(&self, frame: u32) -> FrameBox {
        FrameBox { frame, ..*self }
    }

    /// Linear interpolation between two boxes, rounded to whole pixels.
    /// `t = 0` gives `a`, `t = 1` gives `b`.
    pub fn lerp(a: &FrameBox, b: &FrameBox, frame: u32, t: f64) -> FrameBox {
        let mix = |u: u32, v: u32| (u as f64 + (v as f64 - u as f64) * t + 0.5).floor() as u32;
        let (x1, x2) = (mix(a.x1, b.x1), mix(a.x2, b.x2));
        let (y1, y2) = (mix(a.y1, b.y1), mix(a.y2, b.y2));
        // Rounding a convex combination of two valid intervals keeps at
        // least one pixel; the max() only guards float edge cases.
        FrameBox {
            frame,
            x1,
            y1,
            x2: x2.max(x1 + 1),
            y2: y2.max(y1 + 1),
        }
    }
}

/// Intersection over union of two boxes; the frame index is ignored.
pub fn box_iou(a: &FrameBox, b: &FrameBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Multi-label class scores: index 0 is background, `1..=C` are activity
/// classes. Entries are independent sigmoid outputs and need not sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::ScoreLength { expected: 2, got: 0 });
        }
        for (index, &value) in scores.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ScoreOutOfRange { index, value });
            }
        }
        Ok(ScoreVector(scores))
    }

    pub fn zeros(len: usize) -> Self {
        ScoreVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of activity classes `C` (excluding background).
    pub fn num_classes(&self) -> usize {
        self.0.len() - 1
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Elementwise maximum; lengths must agree.
    pub fn max_with(&self, other: &ScoreVector) -> ScoreVector {
        debug_assert_eq!(self.len(), other.len());
        ScoreVector(self.0.iter().zip(&other.0).map(|(a, b)| a.max(*b)).collect())
    }

    /// Elementwise `a + (b - a) * t`.
    pub fn lerp(a: &ScoreVector, b: &ScoreVector, t: f64) -> ScoreVector {
        ScoreVector(
            a.0.iter()
                .zip(&b.0)
                .map(|(u, v)| (u + (v - u) * t).clamp(0.0, 1.0))
                .collect(),
        )
    }

    pub(crate) fn from_unchecked(scores: Vec<f64>) -> Self {
        ScoreVector(scores)
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ScoreVector::new(v)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(v: ScoreVector) -> Self {
        v.0
    }
}

/// `<video_id>/<clip_index>/<component_index>`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TubeletId {
    pub video: String,
    pub clip: u32,
    pub component: u32,
}

impl TubeletId {
    pub fn new(video: impl Into<String>, clip: u32, component: u32) -> Self {
        TubeletId {
            video: video.into(),
            clip,
            component,
        }
    }
}

impl fmt::Display for TubeletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.video, self.clip, self.component)
    }
}

impl FromStr for TubeletId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("malformed tubelet id {s:?}"));
        let mut parts = s.rsplitn(3, '/');
        let component = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let clip = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let video = parts.next().filter(|v| !v.is_empty()).ok_or_else(bad)?;
        Ok(TubeletId::new(video, clip, component))
    }
}

impl Serialize for TubeletId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TubeletId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Anything with one box per frame over a contiguous span.
pub trait Track {
    fn start_frame(&self) -> u32;
    fn boxes(&self) -> &[FrameBox];

    fn end_frame(&self) -> u32 {
        self.start_frame() + self.boxes().len() as u32 - 1
    }

    fn len(&self) -> usize {
        self.boxes().len()
    }

    fn is_empty(&self) -> bool {
        self.boxes().is_empty()
    }

    fn box_at(&self, frame: u32) -> Option<&FrameBox> {
        frame
            .checked_sub(self.start_frame())
            .and_then(|k| self.boxes().get(k as usize))
    }
}

fn check_track(start: u32, boxes: &[FrameBox], scores: &[ScoreVector]) -> Result<()> {
    if boxes.is_empty() {
        return Err(Error::InvalidTrack("no frames".into()));
    }
    if boxes.len() != scores.len() {
        return Err(Error::InvalidTrack(format!(
            "{} boxes but {} score vectors",
            boxes.len(),
            scores.len()
        )));
    }
    for (k, b) in boxes.iter().enumerate() {
        if b.frame != start + k as u32 {
            return Err(Error::InvalidTrack(format!(
                "box {k} is at frame {}, expected {}",
                b.frame,
                start + k as u32
            )));
        }
    }
    let width = scores[0].len();
    if let Some(s) = scores.iter().find(|s| s.len() != width) {
        return Err(Error::ScoreLength {
            expected: width,
            got: s.len(),
        });
    }
    Ok(())
}

/// Short spatio-temporal track from one clip: `(f1, f2, boxes, scores)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tubelet {
    pub id: TubeletId,
    start_frame: u32,
    boxes: Vec<FrameBox>,
    frame_scores: Vec<ScoreVector>,
}

impl Tubelet {
    pub fn new(id: TubeletId, start_frame: u32, boxes: Vec<FrameBox>, frame_scores: Vec<ScoreVector>) -> Result<Self> {
        check_track(start_frame, &boxes, &frame_scores)?;
        Ok(Tubelet {
            id,
            start_frame,
            boxes,
            frame_scores,
        })
    }

    /// Tubelet with every frame scored by the same vector.
    pub fn with_constant_scores(id: TubeletId, boxes: Vec<FrameBox>, scores: ScoreVector) -> Result<Self> {
        let start = boxes.first().map(|b| b.frame).unwrap_or(0);
        let frame_scores = vec![scores; boxes.len()];
        Tubelet::new(id, start, boxes, frame_scores)
    }

    pub fn frame_scores(&self) -> &[ScoreVector] {
        &self.frame_scores
    }

    /// Replace per-frame scores; the span and boxes never change.
    pub fn with_scores(&self, frame_scores: Vec<ScoreVector>) -> Result<Tubelet> {
        Tubelet::new(self.id.clone(), self.start_frame, self.boxes.clone(), frame_scores)
    }
}

impl Track for Tubelet {
    fn start_frame(&self) -> u32 {
        self.start_frame
    }

    fn boxes(&self) -> &[FrameBox] {
        &self.boxes
    }
}

/// Action-agnostic tube built by merging tubelets.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTube {
    pub video_id: String,
    start_frame: u32,
    boxes: Vec<FrameBox>,
    frame_scores: Vec<ScoreVector>,
    members: Vec<TubeletId>,
}

impl ActionTube {
    pub fn new(
        video_id: impl Into<String>,
        start_frame: u32,
        boxes: Vec<FrameBox>,
        frame_scores: Vec<ScoreVector>,
    ) -> Result<Self> {
        check_track(start_frame, &boxes, &frame_scores)?;
        Ok(ActionTube {
            video_id: video_id.into(),
            start_frame,
            boxes,
            frame_scores,
            members: Vec::new(),
        })
    }

    pub fn from_tubelet(t: &Tubelet) -> Self {
        ActionTube {
            video_id: t.id.video.clone(),
            start_frame: t.start_frame,
            boxes: t.boxes.clone(),
            frame_scores: t.frame_scores.clone(),
            members: vec![t.id.clone()],
        }
    }

    pub fn frame_scores(&self) -> &[ScoreVector] {
        &self.frame_scores
    }

    /// Tubelets absorbed into this tube, in merge order.
    pub fn members(&self) -> &[TubeletId] {
        &self.members
    }

    /// Clip index of the most recently absorbed tubelet.
    pub fn last_clip(&self) -> Option<u32> {
        self.members.last().map(|m| m.clip)
    }

    pub(crate) fn replace_scores(&mut self, frame_scores: Vec<ScoreVector>) {
        debug_assert_eq!(frame_scores.len(), self.boxes.len());
        self.frame_scores = frame_scores;
    }

    /// Append `other` to this tube.
    ///
    /// Disjoint spans are concatenated; a gap between them is filled by
    /// linear interpolation of boxes and scores. Frames covered by both
    /// keep the larger box and the elementwise maximum of the scores.
    pub fn absorb(&mut self, other: ActionTube) {
        let start = self.start_frame.min(other.start_frame);
        let end = self.end_frame().max(other.end_frame());
        let n = (end - start + 1) as usize;
        let mut boxes: Vec<Option<FrameBox>> = vec![None; n];
        let mut scores: Vec<Option<ScoreVector>> = vec![None; n];
        for part in [&*self, &other] {
            for (b, s) in part.boxes.iter().zip(&part.frame_scores) {
                let k = (b.frame - start) as usize;
                match (&boxes[k], &scores[k]) {
                    (Some(old_b), Some(old_s)) => {
                        if b.area() > old_b.area() {
                            boxes[k] = Some(*b);
                        }
                        scores[k] = Some(old_s.max_with(s));
                    }
                    _ => {
                        boxes[k] = Some(*b);
                        scores[k] = Some(s.clone());
                    }
                }
            }
        }
        fill_gaps(start, &mut boxes, &mut scores);
        self.start_frame = start;
        self.boxes = boxes.into_iter().map(Option::unwrap).collect();
        self.frame_scores = scores.into_iter().map(Option::unwrap).collect();
        self.members.extend(other.members);
    }
}

fn fill_gaps(start: u32, boxes: &mut [Option<FrameBox>], scores: &mut [Option<ScoreVector>]) {
    let mut k = 0;
    while k < boxes.len() {
        if boxes[k].is_some() {
            k += 1;
            continue;
        }
        let lo = k - 1;
        let hi = (k..boxes.len()).find(|&j| boxes[j].is_some()).unwrap();
        let (bl, bh) = (boxes[lo].unwrap(), boxes[hi].unwrap());
        let (sl, sh) = (scores[lo].clone().unwrap(), scores[hi].clone().unwrap());
        for j in k..hi {
            let t = (j - lo) as f64 / (hi - lo) as f64;
            boxes[j] = Some(FrameBox::lerp(&bl, &bh, start + j as u32, t));
            scores[j] = Some(ScoreVector::lerp(&sl, &sh, t));
        }
        k = hi;
    }
}

impl Track for ActionTube {
    fn start_frame(&self) -> u32 {
        self.start_frame
    }

    fn boxes(&self) -> &[FrameBox] {
        &self.boxes
    }
}

/// A class-specific detection: the system's final output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub video_id: String,
    pub class_id: usize,
    pub start_frame: u32,
    pub end_frame: u32,
    pub boxes: Vec<FrameBox>,
    pub confidence: f64,
}

impl ActionInstance {
    pub fn len(&self) -> u32 {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Number of frames shared by two tracks.
pub fn temporal_intersection(a: &impl Track, b: &impl Track) -> u32 {
    let lo = a.start_frame().max(b.start_frame());
    let hi = a.end_frame().min(b.end_frame());
    if hi >= lo {
        hi - lo + 1
    } else {
        0
    }
}

/// How overlapping frames are aggregated into one link score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Mean of per-frame box IoU.
    #[default]
    MeanFrameIou,
    /// Summed intersection over summed union across shared frames.
    Volumetric,
}

/// Link score between an existing track `p` and a newer track `c`.
///
/// Overlapping tracks score by their shared frames. Tracks that do not
/// overlap but where `c` begins at most `gap_tolerance` frames after `p`
/// ends score by the IoU of `p`'s last box and `c`'s first box.
pub fn tube_link_score(p: &impl Track, c: &impl Track, gap_tolerance: u32) -> f64 {
    tube_link_score_with(p, c, gap_tolerance, LinkMode::MeanFrameIou)
}

pub fn tube_link_score_with(p: &impl Track, c: &impl Track, gap_tolerance: u32, mode: LinkMode) -> f64 {
    let shared = temporal_intersection(p, c);
    if shared > 0 {
        let lo = p.start_frame().max(c.start_frame());
        let pairs = (lo..lo + shared).map(|f| (p.box_at(f).unwrap(), c.box_at(f).unwrap()));
        return match mode {
            LinkMode::MeanFrameIou => pairs.map(|(a, b)| box_iou(a, b)).sum::<f64>() / shared as f64,
            LinkMode::Volumetric => {
                let (inter, union) = pairs.fold((0u64, 0u64), |(i, u), (a, b)| {
                    let x = a.intersection_area(b);
                    (i + x, u + a.area() + b.area() - x)
                });
                inter as f64 / union as f64
            }
        };
    }
    let gap = c.start_frame() as i64 - p.end_frame() as i64;
    if gap > 0 && gap <= gap_tolerance as i64 {
        let last = p.boxes().last().unwrap();
        let first = c.boxes().first().unwrap();
        box_iou(last, first)
    } else {
        0.0
    }
}
