//! Tube merging and action splitting.

pub mod merge;
pub mod split;

pub use merge::{merge_all, MergeConfig, MergeState};
pub use split::{action_split, extract_actions, smooth, SplitConfig};
