//! World model, the linear local planner, and collision predicates.
//!
//! The world is the closed unit square. Agents and obstacles are discs.
//! Every predicate treats tangency as collision-free: two discs collide only
//! when the distance between their centers is strictly smaller than the sum
//! of their radii.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Relative slack applied to the kinematic bound `|q - p| <= k`.
///
/// Lattice spacings such as `(i + 1.5) / 32 - (i + 0.5) / 32` do not land
/// exactly on `1 / 32` in floating point.
pub const EDGE_LENGTH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn lerp(self, other: Point2, eps: f64) -> Point2 {
        Point2::new(
            (1.0 - eps) * self.x + eps * other.x,
            (1.0 - eps) * self.y + eps * other.y,
        )
    }

    /// Clamp into the closed unit square.
    pub fn clamp_unit(self) -> Point2 {
        Point2::new(self.x.clamp(0.0, 1.0), self.y.clamp(0.0, 1.0))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(a: [f64; 2]) -> Self {
        Point2::new(a[0], a[1])
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Body radius and per-timestep speed limit of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub radius: f64,
    #[serde(rename = "speed")]
    pub max_speed: f64,
}

impl AgentSpec {
    pub fn new(radius: f64, max_speed: f64) -> Self {
        debug_assert!(radius > 0.0 && max_speed > 0.0);
        Self { radius, max_speed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point2,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(center: Point2, radius: f64) -> Self {
        Self { center, radius }
    }
}

/// Obstacles inside the fixed unit square.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub obstacles: Vec<Obstacle>,
}

impl World {
    pub fn new(obstacles: Vec<Obstacle>) -> Self {
        Self { obstacles }
    }

    pub fn empty() -> Self {
        Self::default()
    }
}

/// Whether the agent's disc centered at `p` fits inside the square and
/// clears every obstacle.
pub fn in_free_space(p: Point2, agent: &AgentSpec, world: &World) -> bool {
    inside_square(p, agent.radius)
        && world
            .obstacles
            .iter()
            .all(|o| p.distance(o.center) >= o.radius + agent.radius)
}

fn inside_square(p: Point2, r: f64) -> bool {
    p.x >= r && p.x <= 1.0 - r && p.y >= r && p.y <= 1.0 - r
}

/// Closest point of segment `p..q` to `c`, as an interpolation parameter.
fn closest_param(p: Point2, q: Point2, c: Point2) -> f64 {
    let d = q - p;
    let len_sq = d.norm_sq();
    if len_sq == 0.0 {
        0.0
    } else {
        ((c - p).dot(d) / len_sq).clamp(0.0, 1.0)
    }
}

/// Whether the disc swept along the segment `p..q` stays in free space.
pub fn swept_disc_clear(p: Point2, q: Point2, agent: &AgentSpec, world: &World) -> bool {
    // The square is convex, so both endpoints inside implies the segment is.
    if !inside_square(p, agent.radius) || !inside_square(q, agent.radius) {
        return false;
    }
    world.obstacles.iter().all(|o| {
        let tau = closest_param(p, q, o.center);
        p.lerp(q, tau).distance(o.center) >= o.radius + agent.radius
    })
}

/// `valid_edge`: the agent can move from `p` to `q` within one timestep.
pub fn valid_edge(p: Point2, q: Point2, agent: &AgentSpec, world: &World) -> bool {
    within_speed(p, q, agent.max_speed) && swept_disc_clear(p, q, agent, world)
}

pub fn within_speed(p: Point2, q: Point2, max_speed: f64) -> bool {
    p.distance(q) <= max_speed * (1.0 + EDGE_LENGTH_TOLERANCE)
}

/// Linear local planner: `(1 - eps) p + eps q`, or `None` when the edge
/// violates the speed limit or leaves free space.
pub fn local_plan(p: Point2, q: Point2, eps: f64, agent: &AgentSpec, world: &World) -> Option<Point2> {
    if !valid_edge(p, q, agent, world) {
        return None;
    }
    Some(match eps {
        e if e <= 0.0 => p,
        e if e >= 1.0 => q,
        e => p.lerp(q, e),
    })
}

/// Whether two discs moving at constant velocity over the same unit
/// timestep come strictly closer than `r1 + r2`.
pub fn moving_discs_collide(p1: Point2, q1: Point2, r1: f64, p2: Point2, q2: Point2, r2: f64) -> bool {
    min_distance_of_motions(p1, q1, p2, q2) < r1 + r2
}

/// Minimum center distance over `tau in [0, 1]` of two linear motions,
/// from the closed-form minimizer of the relative-motion quadratic.
pub fn min_distance_of_motions(p1: Point2, q1: Point2, p2: Point2, q2: Point2) -> f64 {
    let d0 = p1 - p2;
    let dv = (q1 - p1) - (q2 - p2);
    let a = dv.norm_sq();
    let tau = if a == 0.0 {
        0.0
    } else {
        (-d0.dot(dv) / a).clamp(0.0, 1.0)
    };
    (d0 + dv * tau).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: f64 = 1.0 / 32.0;
    const R: f64 = 1.0 / 64.0;

    fn agent() -> AgentSpec {
        AgentSpec::new(R, K)
    }

    #[test]
    fn local_plan_identity_segment() {
        let p = Point2::new(0.2, 0.2);
        assert_eq!(local_plan(p, p, 0.5, &agent(), &World::empty()), Some(p));
    }

    #[test]
    fn local_plan_midpoint_of_max_speed_step() {
        // A disc at the origin pokes out of the square, so the max-speed step
        // is exercised away from the walls.
        let got = local_plan(Point2::new(0.5, 0.5), Point2::new(0.53125, 0.5), 0.5, &agent(), &World::empty());
        assert_eq!(got, Some(Point2::new(0.515625, 0.5)));
    }

    #[test]
    fn local_plan_rejects_overlong_step() {
        let got = local_plan(Point2::new(0.5, 0.5), Point2::new(0.55, 0.5), 0.5, &agent(), &World::empty());
        assert_eq!(got, None);
        let origin = local_plan(Point2::new(0.0, 0.0), Point2::new(0.05, 0.0), 0.5, &agent(), &World::empty());
        assert_eq!(origin, None);
    }

    #[test]
    fn local_plan_endpoints() {
        let p = Point2::new(0.3, 0.3);
        let q = Point2::new(0.31, 0.32);
        let w = World::empty();
        assert_eq!(local_plan(p, q, 0.0, &agent(), &w), Some(p));
        assert_eq!(local_plan(p, q, 1.0, &agent(), &w), Some(q));
    }

    #[test]
    fn free_space_examples() {
        let p = Point2::new(0.5, 0.5);
        assert!(in_free_space(p, &agent(), &World::empty()));
        let w = World::new(vec![Obstacle::new(Point2::new(0.5, 0.52), 0.02)]);
        assert!(!in_free_space(p, &agent(), &w));
        assert!(!in_free_space(Point2::new(0.001, 0.5), &agent(), &World::empty()));
    }

    #[test]
    fn touching_obstacle_or_wall_is_free() {
        let w = World::new(vec![Obstacle::new(Point2::new(0.5, 0.5), 0.125)]);
        let a = AgentSpec::new(0.125, K);
        assert!(in_free_space(Point2::new(0.75, 0.5), &a, &w));
        assert!(!in_free_space(Point2::new(0.74, 0.5), &a, &w));
        assert!(in_free_space(Point2::new(0.125, 0.875), &a, &World::empty()));
    }

    #[test]
    fn swept_disc_examples() {
        let p = Point2::new(0.1, 0.5);
        let q = Point2::new(0.2, 0.5);
        let hit = World::new(vec![Obstacle::new(Point2::new(0.15, 0.5), 0.01)]);
        assert!(!swept_disc_clear(p, q, &agent(), &hit));
        let miss = World::new(vec![Obstacle::new(Point2::new(0.15, 0.6), 0.01)]);
        assert!(swept_disc_clear(p, q, &agent(), &miss));
        assert_eq!(swept_disc_clear(p, p, &agent(), &hit), in_free_space(p, &agent(), &hit));
    }

    #[test]
    fn stationary_tangent_discs_do_not_collide() {
        let p1 = Point2::new(0.0, 0.0);
        let p2 = Point2::new(0.04, 0.0);
        assert!(!moving_discs_collide(p1, p1, 0.02, p2, p2, 0.02));
    }

    #[test]
    fn head_on_swap_collides() {
        let a = Point2::new(0.0, 0.5);
        let b = Point2::new(0.1, 0.5);
        assert!(moving_discs_collide(a, b, 0.02, b, a, 0.02));
    }

    #[test]
    fn parallel_motion_stays_apart() {
        // Dense sampling at 1e-4 resolution gives the same minimum distance.
        let (p1, q1) = (Point2::new(0.0, 0.0), Point2::new(0.03, 0.0));
        let (p2, q2) = (Point2::new(0.0, 0.1), Point2::new(0.03, 0.1));
        let sampled = (0..=10_000)
            .map(|k| {
                let tau = k as f64 * 1e-4;
                p1.lerp(q1, tau).distance(p2.lerp(q2, tau))
            })
            .fold(f64::INFINITY, f64::min);
        assert!((sampled - 0.1).abs() < 1e-12);
        assert!(sampled >= 0.04);
        assert!(!moving_discs_collide(p1, q1, 0.02, p2, q2, 0.02));
    }
}
