//! Prioritized planning with space-time A* on timed or static roadmaps.

mod solution;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geometry::{moving_discs_collide, AgentSpec, Point2};
use crate::gridmap::{build_occupancy, cost_to_go_lenient};
use crate::instance::ProblemInstance;
use crate::roadmap::{StaticRoadmap, TimedRoadmap};

pub use solution::{
    arrival_time, sum_of_costs, validate_solution, Solution, SolutionFile, SolutionMetrics, ValidationReport,
    Violation, ViolationKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanLimits {
    /// Total expansions across all agents of one run.
    pub max_expansions: Option<u64>,
    pub time_limit_ms: Option<u64>,
    /// Static-roadmap time horizon as a multiple of the grid estimate.
    pub horizon_factor: usize,
    pub horizon_resolution: usize,
}

impl Default for PlanLimits {
    fn default() -> Self {
        Self { max_expansions: Some(2_000_000), time_limit_ms: Some(60_000), horizon_factor: 4, horizon_resolution: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Exhausted,
    Timeout,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureReason::Exhausted => "exhausted",
            FailureReason::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFailure {
    pub reason: FailureReason,
    pub agent: usize,
}

impl std::fmt::Display for PlanFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "planning failed for agent {}: {}", self.agent, self.reason)
    }
}

impl std::error::Error for PlanFailure {}

/// What one agent searches over.
#[derive(Debug, Clone, Copy)]
pub enum GraphView<'a> {
    /// Edges already advance time; there is no implicit waiting.
    Timed(&'a TimedRoadmap),
    /// A static roadmap expanded over `0..=horizon` with a wait action.
    Static { map: &'a StaticRoadmap, start: usize, goal: usize, horizon: usize },
}

impl<'a> GraphView<'a> {
    /// View of a static roadmap for the agent it holds terminals for.
    pub fn for_static(map: &'a StaticRoadmap, agent: usize, horizon: usize) -> Option<Self> {
        let term = map.terminal(agent)?;
        Some(GraphView::Static { map, start: term.start, goal: term.goal, horizon })
    }

    pub fn start(&self) -> usize {
        match self {
            GraphView::Timed(d) => d.start(),
            GraphView::Static { start, .. } => *start,
        }
    }

    pub fn pos(&self, v: usize) -> Point2 {
        match self {
            GraphView::Timed(d) => d.vertex(v).pos,
            GraphView::Static { map, .. } => map.vertices[v],
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            GraphView::Timed(d) => d.num_layers() - 1,
            GraphView::Static { horizon, .. } => *horizon,
        }
    }

    /// Vertices reachable from `v` at time `t` in one step.
    pub fn successors(&self, v: usize, out: &mut Vec<usize>) {
        out.clear();
        match self {
            GraphView::Timed(d) => out.extend_from_slice(d.vertex(v).children()),
            GraphView::Static { map, .. } => {
                out.push(v);
                out.extend(map.neighbors(v).iter().map(|&u| u as usize));
            }
        }
    }

    /// Size of the time-expanded graph.
    pub fn expanded_size(&self) -> usize {
        match self {
            GraphView::Timed(d) => d.num_vertices(),
            GraphView::Static { map, horizon, .. } => map.num_vertices() * (horizon + 1),
        }
    }
}

/// Trajectories of higher-priority agents; each waits at its last point
/// forever.
#[derive(Debug, Clone, Default)]
pub struct Reservations {
    paths: Vec<(Vec<Point2>, f64)>,
    makespan: usize,
}

impl Reservations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: Vec<Point2>, radius: f64) {
        assert!(!path.is_empty());
        self.makespan = self.makespan.max(path.len() - 1);
        self.paths.push((path, radius));
    }

    /// Largest timestep at which a reserved agent still moves.
    pub fn makespan(&self) -> usize {
        self.makespan
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Whether moving `p -> q` during `t -> t + 1` avoids every reservation.
    pub fn motion_clear(&self, p: Point2, q: Point2, t: usize, radius: f64) -> bool {
        self.paths.iter().all(|(path, r)| !moving_discs_collide(p, q, radius, at(path, t), at(path, t + 1), *r))
    }

    /// Whether the agent can stay at `g` from `t` onwards.
    pub fn rest_clear(&self, g: Point2, t: usize, radius: f64) -> bool {
        (t..=self.makespan.max(t)).all(|tau| self.motion_clear(g, g, tau, radius))
    }
}

fn at(path: &[Point2], t: usize) -> Point2 {
    path[t.min(path.len() - 1)]
}

/// Admissible step count `ceil(|p - g| / k)`.
pub fn heuristic(p: Point2, goal: Point2, max_speed: f64) -> usize {
    (p.distance(goal) / max_speed - 1e-6).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub path: Result<Vec<Point2>, FailureReason>,
    pub expanded: u64,
}

/// Budget shared by the searches of one planning run.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub expansions_left: Option<u64>,
    pub deadline: Option<Instant>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self { expansions_left: None, deadline: None }
    }

    pub fn from_limits(limits: &PlanLimits, start: Instant) -> Self {
        Self {
            expansions_left: limits.max_expansions,
            deadline: limits.time_limit_ms.map(|ms| start + std::time::Duration::from_millis(ms)),
        }
    }
}

/// Earliest-arrival path to `goal` that can then wait there through the
/// reservations' makespan.
pub fn space_time_astar(
    agent: &AgentSpec,
    goal: Point2,
    view: &GraphView<'_>,
    reservations: &Reservations,
    budget: &mut Budget,
) -> SearchOutcome {
    let horizon = view.horizon();
    let h = |v: usize| heuristic(view.pos(v), goal, agent.max_speed);
    let start = view.start();
    let mut parent: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    let mut open = BinaryHeap::new();
    // Min-heap on f, then larger g, then lower vertex id.
    open.push(Reverse((h(start), Reverse(0usize), start)));
    parent.insert((start, 0), (usize::MAX, 0));
    let mut expanded = 0u64;
    let mut succ = Vec::new();
    while let Some(Reverse((_, Reverse(t), v))) = open.pop() {
        if let Some(left) = budget.expansions_left.as_mut() {
            if *left == 0 {
                return SearchOutcome { path: Err(FailureReason::Timeout), expanded };
            }
            *left -= 1;
        }
        if expanded.is_multiple_of(1024) && budget.deadline.is_some_and(|d| Instant::now() >= d) {
            return SearchOutcome { path: Err(FailureReason::Timeout), expanded };
        }
        expanded += 1;
        let p = view.pos(v);
        if p == goal && reservations.rest_clear(p, t, agent.radius) {
            let mut path = vec![p];
            let mut cur = (v, t);
            while let Some(&prev) = parent.get(&cur) {
                if prev.0 == usize::MAX {
                    break;
                }
                path.push(view.pos(prev.0));
                cur = prev;
            }
            path.reverse();
            return SearchOutcome { path: Ok(path), expanded };
        }
        if t >= horizon {
            continue;
        }
        view.successors(v, &mut succ);
        for &u in &succ {
            let key = (u, t + 1);
            if parent.contains_key(&key) {
                continue;
            }
            let q = view.pos(u);
            if !reservations.motion_clear(p, q, t, agent.radius) {
                continue;
            }
            parent.insert(key, (v, t));
            open.push(Reverse((t + 1 + h(u), Reverse(t + 1), u)));
        }
    }
    SearchOutcome { path: Err(FailureReason::Exhausted), expanded }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub result: Result<Solution, PlanFailure>,
    /// Expansions summed over every agent searched, including a failing one.
    pub expanded: u64,
    pub expanded_per_agent: Vec<u64>,
}

/// Plan agents one at a time in index order; `views[i]` is agent `i`'s graph.
pub fn prioritized_planning(inst: &ProblemInstance, views: &[GraphView<'_>], limits: &PlanLimits) -> PlanOutcome {
    assert_eq!(views.len(), inst.num_agents());
    let mut budget = Budget::from_limits(limits, Instant::now());
    let mut reservations = Reservations::new();
    let mut paths = Vec::with_capacity(views.len());
    let mut per_agent = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let out = space_time_astar(&inst.agents[i], inst.goals[i], view, &reservations, &mut budget);
        per_agent.push(out.expanded);
        match out.path {
            Ok(path) => {
                reservations.add(path.clone(), inst.agents[i].radius);
                paths.push(path);
            }
            Err(reason) => {
                return PlanOutcome {
                    result: Err(PlanFailure { reason, agent: i }),
                    expanded: per_agent.iter().sum(),
                    expanded_per_agent: per_agent,
                }
            }
        }
    }
    PlanOutcome { result: Ok(Solution { paths }), expanded: per_agent.iter().sum(), expanded_per_agent: per_agent }
}

/// Time horizon for static-roadmap searches: `factor` times the largest
/// per-agent grid shortest-path estimate, in timesteps.
pub fn static_horizon(inst: &ProblemInstance, resolution: usize, factor: usize) -> usize {
    let mut lb = 1usize;
    for i in 0..inst.num_agents() {
        let a = &inst.agents[i];
        let grid = build_occupancy(&inst.world, a, resolution);
        let field = cost_to_go_lenient(&grid, inst.goals[i]);
        let (x, y) = grid.cell_of(inst.starts[i]);
        let cells = if field.is_reachable(x, y) { field.get(x, y) as f64 } else { 2.0 * resolution as f64 };
        let straight = inst.starts[i].distance(inst.goals[i]);
        let length = (cells / resolution as f64).max(straight);
        lb = lb.max((length / a.max_speed).ceil() as usize);
    }
    factor * lb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Obstacle, World};
    use crate::instance::{generate_seeded, Profile, Scenario, ScenarioConfig};
    use crate::par::Execution;
    use crate::rng::seeded;
    use crate::roadmap::{build_grid, build_random, RoadmapScope, Terminal};
    use rand::Rng as _;

    fn agent() -> AgentSpec {
        AgentSpec::new(1.0 / 64.0, 1.0 / 32.0)
    }

    fn chain(points: &[Point2], world: World, pairs: &[(usize, usize)], agents: usize) -> (ProblemInstance, StaticRoadmap) {
        let terms: Vec<Terminal> = (0..agents).map(|a| Terminal { agent: a, start: 2 * a, goal: 2 * a + 1 }).collect();
        let inst = ProblemInstance {
            scenario: None,
            seed: None,
            world,
            agents: vec![agent(); agents],
            starts: terms.iter().map(|t| points[t.start]).collect(),
            goals: terms.iter().map(|t| points[t.goal]).collect(),
        };
        let map = StaticRoadmap::from_parts(None, agent(), points.to_vec(), pairs, terms, 0).unwrap();
        (inst, map)
    }

    #[test]
    fn start_equals_goal_is_immediate() {
        let p = Point2::new(0.5, 0.5);
        let (inst, map) = chain(&[p, p], World::empty(), &[(0, 1)], 1);
        let view = GraphView::Static { map: &map, start: 0, goal: 0, horizon: 5 };
        let out = space_time_astar(&inst.agents[0], p, &view, &Reservations::new(), &mut Budget::unlimited());
        assert_eq!(out.path, Ok(vec![p]));
        assert_eq!(out.expanded, 1);
    }

    #[test]
    fn two_vertex_roadmap() {
        let (a, b) = (Point2::new(0.5, 0.5), Point2::new(0.52, 0.5));
        let (inst, map) = chain(&[a, b], World::empty(), &[(0, 1)], 1);
        let views = [GraphView::for_static(&map, 0, 8).unwrap()];
        let out = prioritized_planning(&inst, &views, &PlanLimits::default());
        let sol = out.result.unwrap();
        assert_eq!(sol.paths[0], vec![a, b]);
        assert!(validate_solution(&inst, &sol).is_valid());
    }

    #[test]
    fn corridor_arrival_and_expansions() {
        let k = agent().max_speed;
        let pts: Vec<Point2> = (0..=5).map(|s| Point2::new(0.3 + s as f64 * k, 0.5)).collect();
        let mut order = vec![pts[0], pts[5]];
        order.extend_from_slice(&pts[1..5]);
        let edges = [(0, 2), (2, 3), (3, 4), (4, 5), (5, 1)];
        let (inst, map) = chain(&order, World::empty(), &edges, 1);
        let view = GraphView::for_static(&map, 0, 20).unwrap();
        let out = space_time_astar(&inst.agents[0], inst.goals[0], &view, &Reservations::new(), &mut Budget::unlimited());
        assert_eq!(out.path.unwrap().len(), 6);
        assert_eq!(out.expanded, 6);
    }

    #[test]
    fn blocked_direct_edge_waits() {
        let k = agent().max_speed;
        let (a, b) = (Point2::new(0.5, 0.5), Point2::new(0.5 + k, 0.5));
        let (inst, map) = chain(&[a, b], World::empty(), &[(0, 1)], 1);
        let mut res = Reservations::new();
        // Another agent sits on the goal at t = 1 and then leaves.
        res.add(vec![Point2::new(0.5 + k, 0.6), b, Point2::new(0.5 + k, 0.6)], 1.0 / 64.0);
        let view = GraphView::for_static(&map, 0, 10).unwrap();
        let out = space_time_astar(&inst.agents[0], b, &view, &res, &mut Budget::unlimited());
        let path = out.path.unwrap();
        assert!(path.len() > 2, "{path:?}");
    }

    #[test]
    fn narrow_corridor_swap_fails() {
        let k = agent().max_speed;
        // A one-lane corridor walled in by obstacles above and below.
        let pts: Vec<Point2> = (0..6).map(|s| Point2::new(0.3 + s as f64 * k, 0.5)).collect();
        let obstacles = (0..30)
            .flat_map(|s| {
                let x = 0.25 + s as f64 * 0.01;
                [Obstacle::new(Point2::new(x, 0.5 + 0.032), 0.016), Obstacle::new(Point2::new(x, 0.5 - 0.032), 0.016)]
            })
            .collect();
        let order = vec![pts[0], pts[5], pts[1], pts[2], pts[3], pts[4]];
        let edges = [(0, 2), (2, 3), (3, 4), (4, 5), (5, 1)];
        let terms = vec![Terminal { agent: 0, start: 0, goal: 1 }, Terminal { agent: 1, start: 1, goal: 0 }];
        let world = World::new(obstacles);
        let map = StaticRoadmap::from_parts(None, agent(), order.clone(), &edges, terms, 0).unwrap();
        let inst = ProblemInstance {
            scenario: None,
            seed: None,
            world,
            agents: vec![agent(); 2],
            starts: vec![pts[0], pts[5]],
            goals: vec![pts[5], pts[0]],
        };
        map.check_consistency(&inst.world).unwrap();
        let views: Vec<_> = (0..2).map(|i| GraphView::for_static(&map, i, 30).unwrap()).collect();
        let out = prioritized_planning(&inst, &views, &PlanLimits::default());
        assert_eq!(out.result.unwrap_err(), PlanFailure { reason: FailureReason::Exhausted, agent: 1 });
    }

    #[test]
    fn expansion_budget_is_a_timeout() {
        let inst = generate_seeded(&ScenarioConfig::new(Scenario::Basic, Profile::Desk), 3).unwrap();
        let map = build_grid(&inst, 32, RoadmapScope::Shared, Execution::Sequential);
        let views: Vec<_> = (0..inst.num_agents()).map(|i| GraphView::for_static(&map, i, 200).unwrap()).collect();
        let limits = PlanLimits { max_expansions: Some(3), ..PlanLimits::default() };
        let out = prioritized_planning(&inst, &views, &limits);
        assert_eq!(out.result.unwrap_err().reason, FailureReason::Timeout);
        assert_eq!(out.expanded, 3);
    }

    /// Layer-by-layer breadth-first search over the time-expanded graph.
    fn bfs_arrival(agent: &AgentSpec, goal: Point2, view: &GraphView<'_>, res: &Reservations) -> Option<usize> {
        let mut frontier = vec![view.start()];
        let mut succ = Vec::new();
        for t in 0..=view.horizon() {
            if frontier.iter().any(|&v| view.pos(v) == goal && res.rest_clear(goal, t, agent.radius)) {
                return Some(t);
            }
            let mut next: Vec<usize> = Vec::new();
            for &v in &frontier {
                view.successors(v, &mut succ);
                for &u in &succ {
                    if res.motion_clear(view.pos(v), view.pos(u), t, agent.radius) {
                        next.push(u);
                    }
                }
            }
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        None
    }

    #[test]
    fn astar_matches_breadth_first_arrival() {
        let mut solvable = 0;
        for seed in 0..20u64 {
            let mut inst = generate_seeded(&ScenarioConfig::new(Scenario::Basic, Profile::Desk), seed).unwrap();
            for a in &mut inst.agents {
                *a = AgentSpec::new(a.radius, 0.12);
            }
            let map = build_random(&inst, 120, RoadmapScope::Shared, &mut seeded(seed), Execution::Sequential);
            let mut rng = seeded(seed + 100);
            let mut res = Reservations::new();
            for _ in 0..rng.gen_range(0..4) {
                let path = (0..rng.gen_range(1..25)).map(|_| map.vertices[rng.gen_range(0..map.num_vertices())]).collect();
                res.add(path, 1.0 / 64.0);
            }
            let view = GraphView::for_static(&map, 0, 40).unwrap();
            let a = &inst.agents[0];
            let out = space_time_astar(a, inst.goals[0], &view, &res, &mut Budget::unlimited());
            let got = out.path.ok().map(|p| p.len() - 1);
            assert_eq!(got, bfs_arrival(a, inst.goals[0], &view, &res), "seed {seed}");
            solvable += got.is_some() as usize;
        }
        assert!(solvable >= 5, "{solvable}");
    }

    #[test]
    fn static_horizon_covers_straight_line() {
        let inst = generate_seeded(&ScenarioConfig::new(Scenario::Basic, Profile::Desk), 0).unwrap();
        let h = static_horizon(&inst, 64, 4);
        for i in 0..inst.num_agents() {
            assert!(h >= 4 * heuristic(inst.starts[i], inst.goals[i], inst.agents[i].max_speed));
        }
    }

    #[test]
    fn grid_planning_solutions_validate() {
        for seed in 0..4 {
            let inst = generate_seeded(&ScenarioConfig::new(Scenario::Basic, Profile::Desk), seed).unwrap();
            let map = build_grid(&inst, 32, RoadmapScope::Shared, Execution::Sequential);
            let h = static_horizon(&inst, 64, 4);
            let views: Vec<_> = (0..inst.num_agents()).map(|i| GraphView::for_static(&map, i, h).unwrap()).collect();
            let out = prioritized_planning(&inst, &views, &PlanLimits::default());
            if let Ok(sol) = out.result {
                let report = validate_solution(&inst, &sol);
                assert!(report.is_valid(), "{report:?}");
            }
        }
    }
}
