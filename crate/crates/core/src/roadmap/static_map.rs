use std::collections::HashMap;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geometry::{in_free_space, valid_edge, AgentSpec, Point2, World};
use crate::instance::ProblemInstance;
use crate::par::{self, Execution};
use crate::rng::Rng;

/// Which agents a static roadmap serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadmapScope {
    /// One roadmap for all agents; requires identical agent specs.
    Shared,
    Agent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminal {
    pub agent: usize,
    pub start: usize,
    pub goal: usize,
}

/// Undirected roadmap without time; the planner expands it in time lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticRoadmap {
    pub owner: Option<usize>,
    pub agent: AgentSpec,
    pub vertices: Vec<Point2>,
    adjacency: Vec<Vec<u32>>,
    pub terminals: Vec<Terminal>,
    /// Vertices that came from sampling, excluding injected starts and goals.
    pub sampled: usize,
}

impl StaticRoadmap {
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn terminal(&self, agent: usize) -> Option<Terminal> {
        self.terminals.iter().copied().find(|t| t.agent == agent)
    }

    pub(crate) fn from_parts(
        owner: Option<usize>,
        agent: AgentSpec,
        vertices: Vec<Point2>,
        edges: &[(usize, usize)],
        terminals: Vec<Terminal>,
        sampled: usize,
    ) -> Result<Self, String> {
        let mut adjacency = vec![Vec::new(); vertices.len()];
        for &(a, b) in edges {
            if a >= vertices.len() || b >= vertices.len() {
                return Err(format!("edge ({a}, {b}) out of range"));
            }
            adjacency[a].push(b as u32);
            adjacency[b].push(a as u32);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Ok(Self { owner, agent, vertices, adjacency, terminals, sampled })
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, adj)| adj.iter().filter(move |&&b| (b as usize) > a).map(move |&b| (a, b as usize)))
    }

    /// Check the free-space and single-timestep-edge invariants.
    pub fn check_consistency(&self, world: &World) -> Result<(), String> {
        for (i, &p) in self.vertices.iter().enumerate() {
            if !in_free_space(p, &self.agent, world) {
                return Err(format!("vertex {i} not in free space"));
            }
        }
        for (a, b) in self.edges() {
            if !valid_edge(self.vertices[a], self.vertices[b], &self.agent, world) {
                return Err(format!("edge ({a}, {b}) is not traversable in one timestep"));
            }
            if !self.adjacency[b].contains(&(a as u32)) {
                return Err(format!("edge ({a}, {b}) is not symmetric"));
            }
        }
        Ok(())
    }
}

fn scope_agent(inst: &ProblemInstance, scope: RoadmapScope) -> (Option<usize>, AgentSpec, Vec<usize>) {
    match scope {
        RoadmapScope::Shared => {
            assert!(inst.is_homogeneous(), "a shared roadmap needs identical agents");
            (None, inst.agents[0], (0..inst.num_agents()).collect())
        }
        RoadmapScope::Agent(i) => (Some(i), inst.agents[i], vec![i]),
    }
}

/// Append starts and goals, then connect everything within one timestep.
fn finish(
    inst: &ProblemInstance,
    scope: RoadmapScope,
    mut vertices: Vec<Point2>,
    exec: Execution,
) -> StaticRoadmap {
    let (owner, agent, served) = scope_agent(inst, scope);
    let sampled = vertices.len();
    let mut terminals = Vec::with_capacity(served.len());
    for &i in &served {
        let start = vertices.len();
        vertices.push(inst.starts[i]);
        let goal = vertices.len();
        vertices.push(inst.goals[i]);
        terminals.push(Terminal { agent: i, start, goal });
    }
    let adjacency = connect(&vertices, &agent, &inst.world, exec);
    StaticRoadmap { owner, agent, vertices, adjacency, terminals, sampled }
}

/// All pairs within one step, found through a uniform hash of cell size `k`.
fn connect(vertices: &[Point2], agent: &AgentSpec, world: &World, exec: Execution) -> Vec<Vec<u32>> {
    let cell = agent.max_speed * (1.0 + 1e-6);
    let key = |p: Point2| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    for (i, &p) in vertices.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i as u32);
    }
    par::map_range(exec, vertices.len(), |i| {
        let p = vertices[i];
        let (cx, cy) = key(p);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = buckets.get(&(cx + dx, cy + dy)) {
                    out.extend(
                        bucket
                            .iter()
                            .copied()
                            .filter(|&j| j as usize != i && valid_edge(p, vertices[j as usize], agent, world)),
                    );
                }
            }
        }
        out.sort_unstable();
        out
    })
}

fn sample_free(rng: &mut Rng, agent: &AgentSpec, world: &World) -> Point2 {
    let r = agent.radius;
    loop {
        let p = Point2::new(rng.gen_range(r..=1.0 - r), rng.gen_range(r..=1.0 - r));
        if in_free_space(p, agent, world) {
            return p;
        }
    }
}

/// Uniform free-space samples plus starts and goals.
///
/// # Panics
///
/// Loops forever if the agent has no free space at all; instances that pass
/// validation always have some.
pub fn build_random(
    inst: &ProblemInstance,
    n_samples: usize,
    scope: RoadmapScope,
    rng: &mut Rng,
    exec: Execution,
) -> StaticRoadmap {
    let (_, agent, _) = scope_agent(inst, scope);
    let pts = (0..n_samples).map(|_| sample_free(rng, &agent, &inst.world)).collect();
    finish(inst, scope, pts, exec)
}

/// Free cell centers of a `side x side` lattice plus starts and goals.
pub fn build_grid(inst: &ProblemInstance, side: usize, scope: RoadmapScope, exec: Execution) -> StaticRoadmap {
    assert!(side >= 2, "grid side must be at least 2");
    let (_, agent, _) = scope_agent(inst, scope);
    let s = side as f64;
    let pts = (0..side * side)
        .map(|k| Point2::new(((k % side) as f64 + 0.5) / s, ((k / side) as f64 + 0.5) / s))
        .filter(|&p| in_free_space(p, &agent, &inst.world))
        .collect();
    finish(inst, scope, pts, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Low,
    Mid,
    High,
}

impl Density {
    pub fn factor(self) -> f64 {
        match self {
            Density::Low => 50.0,
            Density::Mid => 75.0,
            Density::High => 100.0,
        }
    }
}

impl FromStr for Density {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "low" => Ok(Density::Low),
            "mid" | "middle" => Ok(Density::Mid),
            "high" => Ok(Density::High),
            other => Err(format!("unknown density `{other}`")),
        }
    }
}

/// `ceil(c * l / k)` samples for a start-goal distance `l`.
pub fn square_sample_count(length: f64, max_speed: f64, density: Density) -> usize {
    (density.factor() * length / max_speed).ceil() as usize
}

/// Frame of the square whose diagonal is `start -> goal`: center, the two
/// side directions, and the half side length including the margin.
pub(crate) fn square_frame(start: Point2, goal: Point2, margin: f64) -> (Point2, Point2, Point2, f64) {
    let d = goal - start;
    let l = d.norm();
    let center = start.lerp(goal, 0.5);
    let dir = if l > 0.0 { d * (1.0 / l) } else { Point2::new(1.0, 0.0) };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let e1 = Point2::new(h * (dir.x - dir.y), h * (dir.x + dir.y));
    let e2 = Point2::new(h * (dir.x + dir.y), h * (dir.y - dir.x));
    (center, e1, e2, l * h / 2.0 + margin)
}

/// Per-agent samples from the square with diagonal start-goal, grown by
/// `k / 5` on every side. Samples outside free space are dropped.
pub fn build_square(
    inst: &ProblemInstance,
    agent_index: usize,
    density: Density,
    rng: &mut Rng,
    exec: Execution,
) -> StaticRoadmap {
    let agent = inst.agents[agent_index];
    let (s, g) = (inst.starts[agent_index], inst.goals[agent_index]);
    let count = square_sample_count(s.distance(g), agent.max_speed, density);
    let (center, e1, e2, half) = square_frame(s, g, agent.max_speed / 5.0);
    let pts = (0..count)
        .map(|_| {
            let u = rng.gen_range(-half..=half);
            let v = rng.gen_range(-half..=half);
            center + e1 * u + e2 * v
        })
        .filter(|&p| in_free_space(p, &agent, &inst.world))
        .collect();
    finish(inst, RoadmapScope::Agent(agent_index), pts, exec)
}
