//! Detection scoring against ground truth in the style of the ActEV
//! activity-detection evaluation.
//!
//! Detections and references are aligned one-to-one per `(video, class)`
//! by a greedy pass in descending confidence. Sweeping a confidence
//! threshold yields a DET curve of miss probability against false-alarm
//! rate, either count-based (false alarms per video minute) or time-based
//! (fraction of non-reference time covered by detections). The normalized
//! partial area under that curve, n-AUDC, is the headline number; lower is
//! better.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::ClassCatalog;
use crate::error::{Error, Result};
use crate::model::{box_iou, ActionInstance, FrameBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub video_id: String,
    pub class_id: usize,
    pub start_frame: u32,
    pub end_frame: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<FrameBox>>,
}

impl GroundTruthInstance {
    pub fn box_at(&self, frame: u32) -> Option<&FrameBox> {
        let boxes = self.boxes.as_ref()?;
        let k = frame.checked_sub(self.start_frame)? as usize;
        match boxes.get(k) {
            Some(b) if b.frame == frame => Some(b),
            _ => boxes.iter().find(|b| b.frame == frame),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaAxis {
    /// False alarms per minute of video.
    RateBased,
    /// Detected non-reference time over total non-reference time.
    TimeBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub t_iou_min: f64,
    pub fps: f64,
    /// Also require mean box IoU >= `spatial_iou_min` where references
    /// carry boxes.
    pub spatial: bool,
    pub spatial_iou_min: f64,
    pub fa_limit_rate: f64,
    pub fa_limit_time: f64,
    pub operating_points: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_iou_min: 0.2,
            fps: 30.0,
            spatial: false,
            spatial_iou_min: 0.1,
            fa_limit_rate: 0.2,
            fa_limit_time: 0.2,
            operating_points: vec![0.15, 0.04],
        }
    }
}

pub fn temporal_iou(a: (u32, u32), b: (u32, u32)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if hi < lo {
        return 0.0;
    }
    let inter = (hi - lo + 1) as f64;
    let union = (a.1 - a.0 + 1) as f64 + (b.1 - b.0 + 1) as f64 - inter;
    inter / union
}

fn mean_box_iou(det: &ActionInstance, gt: &GroundTruthInstance) -> Option<f64> {
    gt.boxes.as_ref()?;
    let (mut sum, mut n) = (0.0, 0usize);
    for b in &det.boxes {
        if let Some(g) = gt.box_at(b.frame) {
            sum += box_iou(b, g);
            n += 1;
        }
    }
    Some(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(detection index, ground-truth index)`
    pub pairs: Vec<(usize, usize)>,
    pub missed: Vec<usize>,
    pub false_alarms: Vec<usize>,
}

/// Detection indices by descending confidence, ties in input order.
fn confidence_order(dets: &[ActionInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matcher; visiting detections in `order`, returns for each
/// visited detection the ground truth it matched, if any.
fn greedy(
    dets: &[ActionInstance],
    gts: &[GroundTruthInstance],
    order: &[usize],
    cfg: &EvalConfig,
) -> Vec<Option<usize>> {
    let mut by_key: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_key.entry((g.video_id.as_str(), g.class_id)).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&d| {
            let det = &dets[d];
            let pool = by_key.get(&(det.video_id.as_str(), det.class_id))?;
            let mut best: Option<(usize, f64)> = None;
            for &g in pool {
                if taken[g] {
                    continue;
                }
                let gt = &gts[g];
                let iou = temporal_iou((det.start_frame, det.end_frame), (gt.start_frame, gt.end_frame));
                if iou < cfg.t_iou_min || iou == 0.0 {
                    continue;
                }
                if cfg.spatial && mean_box_iou(det, gt).is_some_and(|s| s < cfg.spatial_iou_min) {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            let (g, _) = best?;
            taken[g] = true;
            Some(g)
        })
        .collect()
}

/// One-to-one alignment of detections to same-video, same-class
/// references.
pub fn align(dets: &[ActionInstance], gts: &[GroundTruthInstance], cfg: &EvalConfig) -> Matching {
    let order = confidence_order(dets);
    let matched = greedy(dets, gts, &order, cfg);
    let mut m = Matching::default();
    let mut gt_hit = vec![false; gts.len()];
    for (&d, g) in order.iter().zip(&matched) {
        match g {
            Some(g) => {
                m.pairs.push((d, *g));
                gt_hit[*g] = true;
            }
            None => m.false_alarms.push(d),
        }
    }
    m.missed = (0..gts.len()).filter(|&g| !gt_hit[g]).collect();
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    /// Detections with confidence >= this value are kept.
    pub threshold: f64,
    pub fa: f64,
    pub pmiss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub axis: FaAxis,
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    /// Curve from `(fa, pmiss)` pairs; `fa` must be nondecreasing.
    pub fn from_points(axis: FaAxis, points: &[(f64, f64)]) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Config("false-alarm values must be nondecreasing".into()));
        }
        if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) {
            return Err(Error::Config("miss probabilities must lie in [0, 1]".into()));
        }
        Ok(DetCurve {
            axis,
            points: points
                .iter()
                .map(|&(fa, pmiss)| DetPoint {
                    threshold: f64::NAN,
                    fa,
                    pmiss,
                })
                .collect(),
        })
    }
}

/// Half-open frame intervals, sorted and disjoint after `normalize`.
#[derive(Debug, Clone, Default)]
struct Intervals(Vec<(u64, u64)>);

impl Intervals {
    fn push(&mut self, start: u32, end_inclusive: u32) {
        self.0.push((start as u64, end_inclusive as u64 + 1));
    }

    fn normalize(&mut self) {
        self.0.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(self.0.len());
        for &(s, e) in &self.0 {
            match out.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => out.push((s, e)),
            }
        }
        self.0 = out;
    }

    fn total(&self) -> u64 {
        self.0.iter().map(|(s, e)| e - s).sum()
    }

    /// Overlap with another normalized set.
    fn overlap(&self, other: &Intervals) -> u64 {
        let (mut i, mut j, mut acc) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a, b) = (self.0[i], other.0[j]);
            let lo = a.0.max(b.0);
            let hi = a.1.min(b.1);
            if hi > lo {
                acc += hi - lo;
            }
            if a.1 < b.1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        acc
    }
}

fn video_frames(
    durations: &BTreeMap<String, u32>,
    dets: &[ActionInstance],
    gts: &[GroundTruthInstance],
) -> BTreeMap<String, u64> {
    let mut frames: BTreeMap<String, u64> = durations.iter().map(|(k, &v)| (k.clone(), v as u64)).collect();
    let ends = dets
        .iter()
        .map(|d| (&d.video_id, d.end_frame))
        .chain(gts.iter().map(|g| (&g.video_id, g.end_frame)));
    for (v, end) in ends {
        let e = frames.entry(v.clone()).or_insert(0);
        *e = (*e).max(end as u64 + 1);
    }
    frames
}

/// DET curve from a confidence sweep. `durations` gives each video's
/// length in frames; videos missing from it are sized by their last
/// annotated frame.
pub fn det_curve(
    dets: &[ActionInstance],
    gts: &[GroundTruthInstance],
    axis: FaAxis,
    cfg: &EvalConfig,
    durations: &BTreeMap<String, u32>,
) -> Result<DetCurve> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let frames = video_frames(durations, dets, gts);
    let order = confidence_order(dets);
    let matched = greedy(dets, gts, &order, cfg);
    let n_gt = gts.len() as f64;

    let minutes = frames.values().sum::<u64>() as f64 / cfg.fps / 60.0;
    // Per (video, class): reference intervals, for time-based false alarms.
    let mut refs: BTreeMap<(&str, usize), Intervals> = BTreeMap::new();
    for g in gts {
        refs.entry((g.video_id.as_str(), g.class_id))
            .or_default()
            .push(g.start_frame, g.end_frame);
    }
    let classes: BTreeSet<usize> = gts
        .iter()
        .map(|g| g.class_id)
        .chain(dets.iter().map(|d| d.class_id))
        .collect();
    let mut non_ref_frames = 0u64;
    for (video, &len) in &frames {
        for &c in &classes {
            let covered = refs.get_mut(&(video.as_str(), c)).map_or(0, |r| {
                r.normalize();
                r.total()
            });
            non_ref_frames += len.saturating_sub(covered);
        }
    }
    let mut detected: BTreeMap<(&str, usize), Intervals> = BTreeMap::new();

    let mut points = vec![DetPoint {
        threshold: f64::INFINITY,
        fa: 0.0,
        pmiss: 1.0,
    }];
    let (mut hits, mut false_alarms) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = dets[order[k]].confidence;
        while k < order.len() && dets[order[k]].confidence == threshold {
            let d = &dets[order[k]];
            match matched[k] {
                Some(_) => hits += 1,
                None => false_alarms += 1,
            }
            detected
                .entry((d.video_id.as_str(), d.class_id))
                .or_default()
                .push(d.start_frame, d.end_frame);
            k += 1;
        }
        let fa = match axis {
            FaAxis::RateBased => {
                if minutes > 0.0 {
                    false_alarms as f64 / minutes
                } else {
                    0.0
                }
            }
            FaAxis::TimeBased => {
                let mut outside = 0u64;
                for (key, iv) in detected.iter_mut() {
                    iv.normalize();
                    let inside = refs.get(key).map_or(0, |r| iv.overlap(r));
                    outside += iv.total() - inside;
                }
                if non_ref_frames > 0 {
                    outside as f64 / non_ref_frames as f64
                } else {
                    0.0
                }
            }
        };
        points.push(DetPoint {
            threshold,
            fa,
            pmiss: (n_gt - hits as f64) / n_gt,
        });
    }
    Ok(DetCurve { axis, points })
}

/// Miss probability at the largest false-alarm value not above
/// `fa_target`; 1.0 when no point qualifies.
pub fn pmiss_at_fa(curve: &DetCurve, fa_target: f64) -> f64 {
    curve
        .points
        .iter()
        .take_while(|p| p.fa <= fa_target)
        .last()
        .map_or(1.0, |p| p.pmiss)
}

/// Area under the step curve of miss probability over `[0, fa_limit]`,
/// divided by `fa_limit`.
pub fn audc(curve: &DetCurve, fa_limit: f64) -> f64 {
    debug_assert!(fa_limit > 0.0);
    let (mut area, mut current, mut x) = (0.0, 1.0, 0.0);
    for p in curve.points.iter().take_while(|p| p.fa <= fa_limit) {
        area += current * (p.fa - x);
        current = p.pmiss;
        x = p.fa;
    }
    area += current * (fa_limit - x);
    (area / fa_limit).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: usize,
    pub name: String,
    pub references: usize,
    pub detections: usize,
    /// Time-based n-AUDC.
    pub n_audc: f64,
    pub n_audc_rate: f64,
    /// `(fa, pmiss)` on the time-based curve at each operating point.
    pub pmiss_at_tfa: Vec<(f64, f64)>,
    /// `(fa, pmiss)` on the rate-based curve at each operating point.
    pub pmiss_at_rfa: Vec<(f64, f64)>,
    pub curve_time: DetCurve,
    pub curve_rate: DetCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub classes: Vec<ClassScore>,
    pub mean_n_audc: f64,
    pub mean_n_audc_rate: f64,
    pub mean_pmiss_at_tfa: Vec<(f64, f64)>,
    pub mean_pmiss_at_rfa: Vec<(f64, f64)>,
}

/// Per-class metrics for every catalog class with at least one reference,
/// plus their macro averages.
pub fn per_class_report(
    dets: &[ActionInstance],
    gts: &[GroundTruthInstance],
    catalog: &ClassCatalog,
    cfg: &EvalConfig,
    durations: &BTreeMap<String, u32>,
) -> Result<Report> {
    // every class is scored against the same set of videos
    let frames = video_frames(durations, dets, gts);
    let durations: BTreeMap<String, u32> = frames.into_iter().map(|(k, v)| (k, v as u32)).collect();
    let classes: Vec<usize> = catalog
        .class_ids()
        .filter(|c| gts.iter().any(|g| g.class_id == *c))
        .collect();
    let rows = classes
        .par_iter()
        .map(|&c| {
            let d: Vec<ActionInstance> = dets.iter().filter(|x| x.class_id == c).cloned().collect();
            let g: Vec<GroundTruthInstance> = gts.iter().filter(|x| x.class_id == c).cloned().collect();
            let curve_time = det_curve(&d, &g, FaAxis::TimeBased, cfg, &durations)?;
            let curve_rate = det_curve(&d, &g, FaAxis::RateBased, cfg, &durations)?;
            let at = |curve: &DetCurve| {
                cfg.operating_points
                    .iter()
                    .map(|&fa| (fa, pmiss_at_fa(curve, fa)))
                    .collect()
            };
            Ok(ClassScore {
                class_id: c,
                name: catalog.name(c).unwrap_or_default().to_string(),
                references: g.len(),
                detections: d.len(),
                n_audc: audc(&curve_time, cfg.fa_limit_time),
                n_audc_rate: audc(&curve_rate, cfg.fa_limit_rate),
                pmiss_at_tfa: at(&curve_time),
                pmiss_at_rfa: at(&curve_rate),
                curve_time,
                curve_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ClassScore) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean_at = |pick: &dyn Fn(&ClassScore) -> &Vec<(f64, f64)>| {
        cfg.operating_points
            .iter()
            .enumerate()
            .map(|(i, &fa)| (fa, rows.iter().map(|r| pick(r)[i].1).sum::<f64>() / n))
            .collect()
    };
    Ok(Report {
        mean_n_audc: if rows.is_empty() { 1.0 } else { mean(&|r| r.n_audc) },
        mean_n_audc_rate: if rows.is_empty() { 1.0 } else { mean(&|r| r.n_audc_rate) },
        mean_pmiss_at_tfa: mean_at(&|r| &r.pmiss_at_tfa),
        mean_pmiss_at_rfa: mean_at(&|r| &r.pmiss_at_rfa),
        classes: rows,
    })
}

/// DET points of every class as CSV: `class_id,class,axis,threshold,fa,pmiss`.
pub fn write_det_csv(report: &Report, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class_id", "class", "axis", "threshold", "fa", "pmiss"])?;
    for row in &report.classes {
        for (axis, curve) in [("time", &row.curve_time), ("rate", &row.curve_rate)] {
            for p in &curve.points {
                w.write_record([
                    row.class_id.to_string(),
                    row.name.clone(),
                    axis.to_string(),
                    p.threshold.to_string(),
                    p.fa.to_string(),
                    p.pmiss.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<det csv>", e))?;
    Ok(())
}
