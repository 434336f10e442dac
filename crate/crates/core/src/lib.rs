//! Post-processing for actor-mask activity detection in untrimmed video.
//!
//! Per-clip actor masks are cut into tubelets by 3D connected components,
//! tubelets are linked online into action tubes, and each tube is split
//! into scored activity instances. Alongside the streaming path the crate
//! carries the multi-scale patch-dice training loss and an n-AUDC scorer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod error;
pub mod extract;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod scorer;
pub mod tmas;
pub mod volume;

pub use classify::{score_tubelet, ClassCatalog, ScoreSource};
pub use error::{Error, Result};
pub use extract::{extract, ClipRef, Connectivity, ExtractionConfig};
pub use model::{
    box_iou, temporal_intersection, tube_link_score, ActionInstance, ActionTube, FrameBox, LinkMode, ScoreVector,
    Track, Tubelet, TubeletId,
};
pub use scorer::{align, audc, det_curve, per_class_report, pmiss_at_fa, EvalConfig, FaAxis, GroundTruthInstance};
pub use tmas::{action_split, merge_all, MergeConfig, MergeState, SplitConfig};
pub use volume::{ClipMask, Dims, MaskVolume, Volume};
