//! Discretized occupancy, cost-to-go fields, and field-of-view windows.

use std::collections::VecDeque;

use thiserror::Error;

use crate::geometry::{in_free_space, AgentSpec, Point2, World};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("goal cell ({0}, {1}) is occupied")]
    GoalBlocked(usize, usize),
}

/// `L x L` occupancy for one agent radius. Cell `(ix, iy)` covers
/// `[ix / L, (ix + 1) / L) x [iy / L, (iy + 1) / L)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    resolution: usize,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn from_cells(resolution: usize, cells: Vec<bool>) -> Self {
        assert!(resolution >= 2, "grid resolution must be at least 2");
        assert_eq!(cells.len(), resolution * resolution);
        Self { resolution, cells }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.resolution + ix]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        let l = self.resolution as f64;
        Point2::new((ix as f64 + 0.5) / l, (iy as f64 + 0.5) / l)
    }

    /// Cell containing `p`; points on the far walls map to the last cell.
    pub fn cell_of(&self, p: Point2) -> (usize, usize) {
        let l = self.resolution;
        let idx = |v: f64| ((v * l as f64).floor().max(0.0) as usize).min(l - 1);
        (idx(p.x), idx(p.y))
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Occupancy tested at cell centers with the agent's free-space predicate.
pub fn build_occupancy(world: &World, agent: &AgentSpec, resolution: usize) -> OccupancyGrid {
    assert!(resolution >= 2, "grid resolution must be at least 2");
    let l = resolution as f64;
    let cells = (0..resolution * resolution)
        .map(|k| {
            let (ix, iy) = (k % resolution, k / resolution);
            let c = Point2::new((ix as f64 + 0.5) / l, (iy as f64 + 0.5) / l);
            !in_free_space(c, agent, world)
        })
        .collect();
    OccupancyGrid { resolution, cells }
}

/// Hop distances to the goal cell under 4-connectivity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostToGoField {
    resolution: usize,
    dist: Vec<u32>,
}

impl CostToGoField {
    pub const UNREACHABLE: u32 = u32::MAX;

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn get(&self, ix: usize, iy: usize) -> u32 {
        self.dist[iy * self.resolution + ix]
    }

    pub fn is_reachable(&self, ix: usize, iy: usize) -> bool {
        self.get(ix, iy) != Self::UNREACHABLE
    }
}

pub fn cost_to_go(grid: &OccupancyGrid, goal: Point2) -> Result<CostToGoField, GridError> {
    let (gx, gy) = grid.cell_of(goal);
    if grid.is_occupied(gx, gy) {
        return Err(GridError::GoalBlocked(gx, gy));
    }
    Ok(bfs_from(grid, gx, gy))
}

/// Like [`cost_to_go`], but an occupied goal cell still seeds the search.
///
/// Continuous free space and the cell-center discretization disagree near
/// obstacle boundaries; feature extraction must still produce a field there.
pub fn cost_to_go_lenient(grid: &OccupancyGrid, goal: Point2) -> CostToGoField {
    let (gx, gy) = grid.cell_of(goal);
    bfs_from(grid, gx, gy)
}

fn bfs_from(grid: &OccupancyGrid, gx: usize, gy: usize) -> CostToGoField {
    let l = grid.resolution;
    let mut dist = vec![CostToGoField::UNREACHABLE; l * l];
    let mut queue = VecDeque::new();
    dist[gy * l + gx] = 0;
    queue.push_back((gx, gy));
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * l + x];
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx >= l || ny >= l || grid.is_occupied(nx, ny) {
                continue;
            }
            let k = ny * l + nx;
            if dist[k] == CostToGoField::UNREACHABLE {
                dist[k] = d + 1;
                queue.push_back((nx, ny));
            }
        }
    }
    CostToGoField { resolution: l, dist }
}

/// Two `l x l` binary windows around an agent. Row-major, rows ascending in
/// y, columns ascending in x; the center entry is the agent's own cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FovMaps {
    pub size: usize,
    pub occupancy: Vec<bool>,
    pub closer_to_goal: Vec<bool>,
}

impl FovMaps {
    pub fn at(&self, row: usize, col: usize) -> (bool, bool) {
        let k = row * self.size + col;
        (self.occupancy[k], self.closer_to_goal[k])
    }

    /// Occupancy followed by closer-to-goal, as 0/1 values.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend(self.occupancy.iter().map(|&b| b as u8 as f64));
        out.extend(self.closer_to_goal.iter().map(|&b| b as u8 as f64));
    }
}

pub fn extract_fov(grid: &OccupancyGrid, field: &CostToGoField, center: Point2, size: usize) -> FovMaps {
    assert!(size % 2 == 1 && size >= 1, "field of view must be odd");
    let l = grid.resolution as isize;
    let half = (size / 2) as isize;
    let (cx, cy) = grid.cell_of(center);
    let here = field.get(cx, cy);
    let mut occupancy = Vec::with_capacity(size * size);
    let mut closer = Vec::with_capacity(size * size);
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if x < 0 || y < 0 || x >= l || y >= l {
                occupancy.push(true);
                closer.push(false);
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            occupancy.push(grid.is_occupied(x, y));
            let d = field.get(x, y);
            closer.push(d != CostToGoField::UNREACHABLE && d < here);
        }
    }
    FovMaps { size, occupancy, closer_to_goal: closer }
}
