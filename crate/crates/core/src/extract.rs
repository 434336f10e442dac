//! Tubelet extraction: threshold a clip's foreground probabilities, label
//! 3D connected components and turn each component into a tubelet with one
//! tight bounding box per frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameBox, ScoreVector, Tubelet, TubeletId};
use crate::volume::{BinaryVolume, ClipMask, Dims, LabelVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours along x, y and t.
    #[serde(rename = "6")]
    Six,
    /// The full 3x3x3 neighbourhood.
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::Config(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    /// Neighbour offsets `(dt, dy, dx)` that precede a voxel in raster order.
    fn backward_offsets(self) -> &'static [(isize, isize, isize)] {
        const SIX: [(isize, isize, isize); 3] = [(-1, 0, 0), (0, -1, 0), (0, 0, -1)];
        const TWENTY_SIX: [(isize, isize, isize); 13] = [
            (-1, -1, -1),
            (-1, -1, 0),
            (-1, -1, 1),
            (-1, 0, -1),
            (-1, 0, 0),
            (-1, 0, 1),
            (-1, 1, -1),
            (-1, 1, 0),
            (-1, 1, 1),
            (0, -1, -1),
            (0, -1, 0),
            (0, -1, 1),
            (0, 0, -1),
        ];
        match self {
            Connectivity::Six => &SIX,
            Connectivity::TwentySix => &TWENTY_SIX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub min_voxels: usize,
    pub min_frame_area: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            threshold: 0.5,
            connectivity: Connectivity::TwentySix,
            min_voxels: 50,
            min_frame_area: 4,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Where a clip sits in its video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRef {
    pub video_id: String,
    pub clip_index: u32,
    pub start_frame: u32,
}

impl ClipRef {
    pub fn new(video_id: impl Into<String>, clip_index: u32, start_frame: u32) -> Self {
        ClipRef {
            video_id: video_id.into(),
            clip_index,
            start_frame,
        }
    }
}

/// Foreground iff probability >= threshold.
pub fn binarize(mask: &ClipMask, threshold: f64) -> BinaryVolume {
    let th = threshold as f32;
    let bits = mask.as_slice().iter().map(|&p| p >= th).collect();
    Volume::from_vec(mask.dims(), bits).expect("same length")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    /// 0 for background, `1..=count` for components in order of first
    /// appearance in raster order.
    pub labels: LabelVolume,
    pub count: usize,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 is background
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labelling of 3D connected components.
pub fn label_components(v: &BinaryVolume, connectivity: Connectivity) -> Labeling {
    let d = v.dims();
    let bits = v.as_slice();
    let mut labels = vec![0u32; d.len()];
    let mut sets = DisjointSet::new();
    let offsets: Vec<(isize, isize, isize, isize)> = connectivity
        .backward_offsets()
        .iter()
        .map(|&(dt, dy, dx)| (dt, dy, dx, (dt * d.h as isize + dy) * d.w as isize + dx))
        .collect();

    let mut i = 0usize;
    for t in 0..d.t {
        for y in 0..d.h {
            for x in 0..d.w {
                if bits[i] {
                    let mut current = 0u32;
                    for &(dt, dy, dx, delta) in &offsets {
                        let (nt, ny, nx) = (t as isize + dt, y as isize + dy, x as isize + dx);
                        if nt < 0 || ny < 0 || nx < 0 || ny >= d.h as isize || nx >= d.w as isize {
                            continue;
                        }
                        let n = labels[(i as isize + delta) as usize];
                        if n == 0 {
                            continue;
                        }
                        current = if current == 0 { n } else { sets.union(current, n) };
                    }
                    labels[i] = if current == 0 { sets.make() } else { current };
                }
                i += 1;
            }
        }
    }

    let mut remap = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = sets.find(*l) as usize;
        if remap[root] == 0 {
            count += 1;
            remap[root] = count;
        }
        *l = remap[root];
    }
    Labeling {
        labels: Volume::from_vec(d, labels).expect("same length"),
        count: count as usize,
    }
}

#[derive(Clone, Copy)]
struct Extent {
    x1: u32,
    y1: u32,
    x2: u32,
    y2: u32,
}

/// One tubelet per component that passes the size filters. Frames inside
/// a component's span with no voxels get a box interpolated from the
/// nearest populated frames. Scores start at zero.
pub fn components_to_tubelets(
    labeling: &Labeling,
    clip: &ClipRef,
    cfg: &ExtractionConfig,
    num_classes: usize,
) -> Vec<Tubelet> {
    let d: Dims = labeling.labels.dims();
    let n = labeling.count;
    let mut voxels = vec![0usize; n];
    let mut extents: Vec<Option<Extent>> = vec![None; n * d.t];
    for (i, &l) in labeling.labels.as_slice().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = (l - 1) as usize;
        let (t, y, x) = d.coords(i);
        let (x, y) = (x as u32, y as u32);
        voxels[c] += 1;
        let e = &mut extents[c * d.t + t];
        match e {
            Some(e) => {
                e.x1 = e.x1.min(x);
                e.y1 = e.y1.min(y);
                e.x2 = e.x2.max(x + 1);
                e.y2 = e.y2.max(y + 1);
            }
            None => {
                *e = Some(Extent {
                    x1: x,
                    y1: y,
                    x2: x + 1,
                    y2: y + 1,
                })
            }
        }
    }

    let mut tubelets = Vec::new();
    for c in 0..n {
        if voxels[c] < cfg.min_voxels {
            continue;
        }
        let frames = &extents[c * d.t..(c + 1) * d.t];
        let populated: Vec<(usize, FrameBox)> = frames
            .iter()
            .enumerate()
            .filter_map(|(t, e)| {
                e.map(|e| {
                    (
                        t,
                        FrameBox {
                            frame: clip.start_frame + t as u32,
                            x1: e.x1,
                            y1: e.y1,
                            x2: e.x2,
                            y2: e.y2,
                        },
                    )
                })
            })
            .collect();
        if populated.iter().all(|(_, b)| b.area() < cfg.min_frame_area) {
            continue;
        }
        let boxes = fill_span(&populated);
        let id = TubeletId::new(clip.video_id.clone(), clip.clip_index, c as u32);
        let scores = ScoreVector::zeros(num_classes + 1);
        tubelets.push(Tubelet::with_constant_scores(id, boxes, scores).expect("contiguous boxes"));
    }
    tubelets.sort_by_key(|t| (crate::model::Track::start_frame(t), t.id.component));
    tubelets
}

/// Contiguous boxes from the first to the last populated frame.
fn fill_span(populated: &[(usize, FrameBox)]) -> Vec<FrameBox> {
    let mut boxes = Vec::new();
    for pair in populated.windows(2) {
        let ((ta, a), (tb, b)) = (pair[0], pair[1]);
        boxes.push(a);
        for t in ta + 1..tb {
            let frac = (t - ta) as f64 / (tb - ta) as f64;
            boxes.push(FrameBox::lerp(&a, &b, a.frame + (t - ta) as u32, frac));
        }
    }
    boxes.push(populated.last().expect("nonempty component").1);
    boxes
}

/// Binarize, label and convert one clip.
pub fn extract(mask: &ClipMask, clip: &ClipRef, cfg: &ExtractionConfig, num_classes: usize) -> Result<Vec<Tubelet>> {
    cfg.validate()?;
    let labeling = label_components(&binarize(mask, cfg.threshold), cfg.connectivity);
    Ok(components_to_tubelets(&labeling, clip, cfg, num_classes))
}
