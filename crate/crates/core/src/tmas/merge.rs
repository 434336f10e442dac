//! Online tubelet merging.
//!
//! Tubelets arrive in start-frame order. Each one is scored against every
//! live candidate tube and the links above threshold are recorded. A
//! candidate that can no longer link to anything (the stream has moved more
//! than the gap tolerance past its end) is resolved by [`MergeState`]'s
//! end check:
//!
//! * no outgoing link: the candidate is final;
//! * one link, and the target has no other inbound link: merge;
//! * one link, but the target is claimed by several candidates: final
//!   (the target starts its own tube);
//! * several links: merge with the best-scoring target, the others stay
//!   separate candidates.
//!
//! Final tubes are returned as soon as they are decided and never change.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tube_link_score_with, ActionTube, LinkMode, Track, Tubelet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// A link exists iff the link score is at least this value.
    pub link_threshold: f64,
    /// Largest start-to-end frame gap that can still link.
    pub gap_tolerance: u32,
    pub link_mode: LinkMode,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            link_threshold: 0.2,
            gap_tolerance: 16,
            link_mode: LinkMode::MeanFrameIou,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.link_threshold > 0.0 && self.link_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "link threshold must lie in (0, 1], got {}",
                self.link_threshold
            )));
        }
        Ok(())
    }
}

type CandidateId = u64;

#[derive(Debug, Clone)]
struct Candidate {
    id: CandidateId,
    tube: ActionTube,
}

#[derive(Debug, Clone)]
pub struct MergeState {
    cfg: MergeConfig,
    /// Live candidates in creation order.
    candidates: Vec<Candidate>,
    /// Link scores from an older candidate to a newer one.
    links: BTreeMap<CandidateId, BTreeMap<CandidateId, f64>>,
    inbound: BTreeMap<CandidateId, BTreeSet<CandidateId>>,
    next_id: CandidateId,
    current_time: Option<u32>,
    last_start: Option<u32>,
}

impl MergeState {
    pub fn new(cfg: MergeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MergeState {
            cfg,
            candidates: Vec::new(),
            links: BTreeMap::new(),
            inbound: BTreeMap::new(),
            next_id: 0,
            current_time: None,
            last_start: None,
        })
    }

    pub fn config(&self) -> &MergeConfig {
        &self.cfg
    }

    pub fn current_time(&self) -> Option<u32> {
        self.current_time
    }

    pub fn candidates(&self) -> impl Iterator<Item = &ActionTube> {
        self.candidates.iter().map(|c| &c.tube)
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// Number of recorded links.
    pub fn num_links(&self) -> usize {
        self.links.values().map(BTreeMap::len).sum()
    }

    /// Feed one tubelet. Returns the tubes finalized by this step.
    pub fn merge_step(&mut self, tubelet: &Tubelet) -> Result<Vec<ActionTube>> {
        let start = tubelet.start_frame();
        if let Some(previous) = self.last_start {
            if start < previous {
                return Err(Error::OutOfOrder { previous, got: start });
            }
        }
        self.last_start = Some(start);
        let finalized = self.advance_to(start);

        let id = self.next_id;
        self.next_id += 1;
        for cand in &self.candidates {
            if cand.tube.members().iter().any(|m| m.clip == tubelet.id.clip) {
                continue;
            }
            let score = tube_link_score_with(&cand.tube, tubelet, self.cfg.gap_tolerance, self.cfg.link_mode);
            if score > 0.0 && score >= self.cfg.link_threshold {
                self.links.entry(cand.id).or_default().insert(id, score);
                self.inbound.entry(id).or_default().insert(cand.id);
            }
        }
        self.candidates.push(Candidate {
            id,
            tube: ActionTube::from_tubelet(tubelet),
        });
        Ok(finalized)
    }

    /// Move the clock to `frame` and resolve every candidate that can no
    /// longer link. Called with each clip start so that tubes end even when
    /// no new tubelets arrive.
    pub fn advance_to(&mut self, frame: u32) -> Vec<ActionTube> {
        let now = self.current_time.map_or(frame, |t| t.max(frame));
        self.current_time = Some(now);
        let horizon = self.cfg.gap_tolerance as u64;
        let mut finalized = Vec::new();
        while let Some(id) = self
            .candidates
            .iter()
            .find(|c| now as u64 > c.tube.end_frame() as u64 + horizon)
            .map(|c| c.id)
        {
            finalized.extend(self.check_end(id));
        }
        finalized
    }

    /// Resolve every remaining candidate once the stream has ended.
    pub fn merge_finalize(&mut self) -> Vec<ActionTube> {
        let mut finalized = Vec::new();
        while let Some(first) = self.candidates.first().map(|c| c.id) {
            finalized.extend(self.check_end(first));
        }
        finalized
    }

    /// Returns the candidate's tube if it became final, `None` if it
    /// absorbed a newer candidate and stays live.
    fn check_end(&mut self, p: CandidateId) -> Option<ActionTube> {
        let row: Vec<(CandidateId, f64)> = self
            .links
            .get(&p)
            .map(|r| r.iter().map(|(&k, &v)| (k, v)).collect())
            .unwrap_or_default();
        match row.len() {
            0 => Some(self.finish(p)),
            1 => {
                let target = row[0].0;
                if self.inbound.get(&target).map_or(0, BTreeSet::len) == 1 {
                    self.merge(p, target);
                    None
                } else {
                    Some(self.finish(p))
                }
            }
            _ => {
                // ids ascend, so strict > keeps the earliest-created on ties
                let mut best = row[0];
                for &(id, score) in &row[1..] {
                    if score > best.1 {
                        best = (id, score);
                    }
                }
                self.merge(p, best.0);
                None
            }
        }
    }

    fn take_candidate(&mut self, id: CandidateId) -> ActionTube {
        let pos = self
            .candidates
            .iter()
            .position(|c| c.id == id)
            .expect("candidate is live");
        self.candidates.remove(pos).tube
    }

    fn drop_outgoing(&mut self, id: CandidateId) -> BTreeMap<CandidateId, f64> {
        let row = self.links.remove(&id).unwrap_or_default();
        for target in row.keys() {
            if let Some(set) = self.inbound.get_mut(target) {
                set.remove(&id);
            }
        }
        row
    }

    fn drop_incoming(&mut self, id: CandidateId) {
        for source in self.inbound.remove(&id).unwrap_or_default() {
            if let Some(row) = self.links.get_mut(&source) {
                row.remove(&id);
                if row.is_empty() {
                    self.links.remove(&source);
                }
            }
        }
    }

    /// A finished candidate's claims still count toward its targets'
    /// inbound totals: a tubelet wanted by two candidates stays a separate
    /// tube even after the first of them is finalized.
    fn finish(&mut self, id: CandidateId) -> ActionTube {
        self.links.remove(&id);
        self.drop_incoming(id);
        self.take_candidate(id)
    }

    /// `target`'s tube is appended to `survivor` and `target`'s outgoing
    /// links are re-keyed to `survivor`.
    fn merge(&mut self, survivor: CandidateId, target: CandidateId) {
        self.drop_outgoing(survivor);
        self.drop_incoming(target);
        let moved = self.drop_outgoing(target);
        for (&j, &score) in &moved {
            self.links.entry(survivor).or_default().insert(j, score);
            self.inbound.entry(j).or_default().insert(survivor);
        }
        let absorbed = self.take_candidate(target);
        let pos = self
            .candidates
            .iter()
            .position(|c| c.id == survivor)
            .expect("survivor is live");
        self.candidates[pos].tube.absorb(absorbed);
    }
}

/// Run a whole stream through a fresh state and collect every tube.
pub fn merge_all<'a>(tubelets: impl IntoIterator<Item = &'a Tubelet>, cfg: MergeConfig) -> Result<Vec<ActionTube>> {
    let mut state = MergeState::new(cfg)?;
    let mut out = Vec::new();
    for t in tubelets {
        out.extend(state.merge_step(t)?);
    }
    out.extend(state.merge_finalize());
    Ok(out)
}
