//! Timed roadmaps (per-agent space-time DAGs) and the static baseline
//! roadmaps (random, grid, square) they are compared against.

mod dump;
mod static_map;
mod timed;

pub use dump::{RoadmapDump, RoadmapSetFile, DumpError};
pub use static_map::{
    build_grid, build_random, build_square, square_sample_count, Density, RoadmapScope, StaticRoadmap, Terminal,
};
pub use timed::{TimedRoadmap, TimedVertex, VertexId};
