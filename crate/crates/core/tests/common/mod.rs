//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubelink::extract::{Connectivity, Labeling};
use tubelink::model::{tube_link_score, ActionTube, FrameBox, ScoreVector, Track, Tubelet, TubeletId};
use tubelink::volume::{BinaryVolume, Dims, Volume};

pub fn random_binary(rng: &mut impl Rng, d: Dims, density: f64) -> BinaryVolume {
    Volume::from_fn(d, |_, _, _| rng.random_bool(density))
}

/// Flood fill from every unvisited foreground voxel in raster order.
pub fn bfs_labels(v: &BinaryVolume, connectivity: Connectivity) -> Vec<u32> {
    let d = v.dims();
    let data = v.as_slice();
    let mut labels = vec![0u32; d.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for seed in 0..d.len() {
        if !data[seed] || labels[seed] != 0 {
            continue;
        }
        next += 1;
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            let (t, y, x) = d.coords(i);
            for dt in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let manhattan = dt.abs() + dy.abs() + dx.abs();
                        if manhattan == 0 || (connectivity == Connectivity::Six && manhattan > 1) {
                            continue;
                        }
                        let (nt, ny, nx) = (t as i64 + dt, y as i64 + dy, x as i64 + dx);
                        if nt < 0 || ny < 0 || nx < 0 || nt >= d.t as i64 || ny >= d.h as i64 || nx >= d.w as i64 {
                            continue;
                        }
                        let j = d.index(nt as usize, ny as usize, nx as usize);
                        if data[j] && labels[j] == 0 {
                            labels[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    labels
}

/// True iff both labelings induce the same partition of the foreground.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let mut ab: BTreeMap<u32, u32> = BTreeMap::new();
    let mut ba: BTreeMap<u32, u32> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if x == 0 {
            continue;
        }
        if *ab.entry(x).or_insert(y) != y || *ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

pub fn labeling_matches_bfs(l: &Labeling, v: &BinaryVolume, connectivity: Connectivity) -> bool {
    let oracle = bfs_labels(v, connectivity);
    let max = oracle.iter().copied().max().unwrap_or(0) as usize;
    l.count == max && same_partition(l.labels.as_slice(), &oracle)
}

pub fn tubelet(video: &str, clip: u32, comp: u32, boxes: Vec<FrameBox>, num_classes: usize) -> Tubelet {
    Tubelet::with_constant_scores(
        TubeletId::new(video, clip, comp),
        boxes,
        ScoreVector::zeros(num_classes + 1),
    )
    .expect("valid tubelet")
}

/// A stream of tubelets in which link chains never branch: `lanes`
/// spatially separated actors, each present in most clips, with
/// occasional jumps that break its chain.
pub fn chain_stream(seed: u64, clips: u32, lanes: u32) -> Vec<Tubelet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut x: Vec<u32> = (0..lanes).map(|_| rng.random_range(0..40)).collect();
    for clip in 0..clips {
        let mut comp = 0;
        for (lane, x) in x.iter_mut().enumerate() {
            if rng.random_bool(0.15) {
                continue;
            }
            if rng.random_bool(0.15) {
                *x = (*x + 20 + rng.random_range(0..20)) % 60;
            }
            let y1 = lane as u32 * 40;
            let len = 16 - rng.random_range(0..4);
            let start = clip * 16 + rng.random_range(0..=16 - len);
            let boxes = (start..start + len)
                .map(|f| {
                    let dx = (f - start) / 4;
                    FrameBox::new(f, *x + dx, y1, *x + dx + 12, y1 + 20).unwrap()
                })
                .collect();
            out.push(tubelet("s", clip, comp, boxes, 2));
            comp += 1;
        }
    }
    out.sort_by_key(|t| (t.start_frame(), t.id.clip, t.id.component));
    out
}

pub type TubeKey = (u32, u32, Vec<FrameBox>, Vec<String>);

/// Span, sorted boxes and sorted member ids per tube: the comparison key
/// for merge output.
pub fn tube_key(tubes: &[ActionTube]) -> Vec<TubeKey> {
    let mut keys: Vec<TubeKey> = tubes
        .iter()
        .map(|t| {
            let mut b = t.boxes().to_vec();
            b.sort_by_key(|b| (b.frame, b.x1, b.y1, b.x2, b.y2));
            let mut m: Vec<String> = t.members().iter().map(|id| id.to_string()).collect();
            m.sort();
            (t.start_frame(), t.end_frame(), b, m)
        })
        .collect();
    keys.sort();
    keys
}

/// Boxes on every frame of a group whose members cover disjoint frames;
/// uncovered frames get the box linearly interpolated between the nearest
/// covered frames on each side, rounded half up.
fn gap_filled(mut observed: Vec<FrameBox>) -> Vec<FrameBox> {
    observed.sort_by_key(|b| b.frame);
    let mut out = vec![observed[0]];
    for b in &observed[1..] {
        let a = *out.last().unwrap();
        assert!(b.frame > a.frame, "members overlap in time");
        let span = (b.frame - a.frame) as f64;
        for f in a.frame + 1..b.frame {
            let t = (f - a.frame) as f64 / span;
            let r = |u: u32, v: u32| (u as f64 + (v as f64 - u as f64) * t + 0.5).floor() as u32;
            let (x1, y1) = (r(a.x1, b.x1), r(a.y1, b.y1));
            out.push(FrameBox::new(f, x1, y1, r(a.x2, b.x2).max(x1 + 1), r(a.y2, b.y2).max(y1 + 1)).unwrap());
        }
        out.push(*b);
    }
    out
}

/// Offline grouping: link every ordered pair of tubelets from different
/// clips whose link score passes, then take connected components. Panics
/// if the link graph is not a union of chains.
pub fn offline_groups(tubelets: &[Tubelet], threshold: f64, gap: u32) -> Vec<TubeKey> {
    let n = tubelets.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let (mut out_deg, mut in_deg) = (vec![0; n], vec![0; n]);
    for a in 0..n {
        for b in a + 1..n {
            let (p, c) = (&tubelets[a], &tubelets[b]);
            if p.id.clip == c.id.clip {
                continue;
            }
            let s = tube_link_score(p, c, gap);
            if s > 0.0 && s >= threshold {
                out_deg[a] += 1;
                in_deg[b] += 1;
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    assert!(
        out_deg.iter().chain(&in_deg).all(|&d| d <= 1),
        "stream is not chain-structured"
    );
    let mut groups: BTreeMap<usize, (Vec<FrameBox>, Vec<String>)> = BTreeMap::new();
    for (i, t) in tubelets.iter().enumerate() {
        let r = find(&mut parent, i);
        let g = groups.entry(r).or_default();
        g.0.extend_from_slice(t.boxes());
        g.1.push(t.id.to_string());
    }
    let mut keys: Vec<TubeKey> = groups
        .into_values()
        .map(|(b, mut m)| {
            let mut b = gap_filled(b);
            b.sort_by_key(|b| (b.frame, b.x1, b.y1, b.x2, b.y2));
            m.sort();
            (b[0].frame, b[b.len() - 1].frame, b, m)
        })
        .collect();
    keys.sort();
    keys
}
