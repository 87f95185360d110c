//! Cooperative timed roadmaps for multi-agent path planning in the unit square.
//!
//! A conditional VAE learns how agents move in demonstration solutions; the
//! learned sampler then builds small per-agent timed roadmaps on which
//! prioritized planning runs.

pub mod geometry;
pub mod gridmap;
pub mod instance;
pub mod par;
pub mod rng;
pub mod roadmap;
pub mod features;
pub mod neural;
pub mod ctrm;
pub mod planner;
pub mod pipeline;
