//! Smart memory eviction, appearance-verified mask fusion with teacher
//! forcing, and VOTS/DAVIS metrics for video object segmentation, over
//! pluggable synthetic or file-replay backends.

pub mod backends;
pub mod cli;
pub mod embedding;
pub mod formats;
pub mod fusion;
pub mod mask;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod synth;
