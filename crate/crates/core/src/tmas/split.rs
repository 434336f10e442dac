//! Action splitting: smooth per-frame class scores along a tube, then cut
//! each class into instances of consecutive high-score frames.

use serde::{Deserialize, Serialize};

use crate::classify::ClassCatalog;
use crate::error::{Error, Result};
use crate::model::{ActionInstance, ActionTube, ScoreVector, Track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Smoothing half-window in frames.
    pub kappa: usize,
    /// Frames scoring strictly above this continue an instance.
    pub alpha: f64,
    /// An instance closes after more than this many low frames in a row.
    pub beta: usize,
    /// Instances with fewer high frames are dropped.
    pub gamma: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            kappa: 8,
            alpha: 0.5,
            beta: 16,
            gamma: 16,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.gamma == 0 {
            return Err(Error::Config("gamma must be at least 1".into()));
        }
        Ok(())
    }
}

/// Moving average of every class score with window `2 * kappa + 1`,
/// truncated at the tube ends.
pub fn smooth(tube: &ActionTube, kappa: usize) -> ActionTube {
    if kappa == 0 {
        return tube.clone();
    }
    let scores = tube.frame_scores();
    let n = scores.len();
    let width = scores[0].len();
    let smoothed = (0..n)
        .map(|f| {
            let lo = f.saturating_sub(kappa);
            let hi = (f + kappa).min(n - 1);
            let count = (hi - lo + 1) as f64;
            let v = (0..width)
                .map(|c| {
                    let sum: f64 = scores[lo..=hi].iter().map(|s| s.get(c)).sum();
                    (sum / count).clamp(0.0, 1.0)
                })
                .collect();
            ScoreVector::from_unchecked(v)
        })
        .collect();
    let mut out = tube.clone();
    out.replace_scores(smoothed);
    out
}

/// Instances of `class` in an already smoothed tube.
pub fn extract_actions(tube: &ActionTube, class: usize, cfg: &SplitConfig) -> Vec<ActionInstance> {
    let scores: Vec<f64> = tube.frame_scores().iter().map(|s| s.get(class)).collect();
    // (first high frame, last high frame, high-frame count), as offsets
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    let mut open: Option<(usize, usize, usize)> = None;
    let mut low = 0usize;
    for (k, &s) in scores.iter().enumerate() {
        if s > cfg.alpha {
            open = Some(match open {
                Some((first, _, n)) => (first, k, n + 1),
                None => (k, k, 1),
            });
            low = 0;
        } else {
            low += 1;
        }
        if low > cfg.beta {
            runs.extend(open.take());
            low = 0;
        }
    }
    runs.extend(open);

    runs.into_iter()
        .filter(|&(_, _, n)| n >= cfg.gamma)
        .map(|(first, last, _)| {
            let span = &scores[first..=last];
            ActionInstance {
                video_id: tube.video_id.clone(),
                class_id: class,
                start_frame: tube.start_frame() + first as u32,
                end_frame: tube.start_frame() + last as u32,
                boxes: tube.boxes()[first..=last].to_vec(),
                confidence: span.iter().sum::<f64>() / span.len() as f64,
            }
        })
        .collect()
}

/// Smooth each tube once, then extract every activity class.
pub fn action_split(tubes: &[ActionTube], catalog: &ClassCatalog, cfg: &SplitConfig) -> Vec<ActionInstance> {
    let mut out = Vec::new();
    for tube in tubes {
        let smoothed = smooth(tube, cfg.kappa);
        for class in catalog.class_ids() {
            out.extend(extract_actions(&smoothed, class, cfg));
        }
    }
    out
}
