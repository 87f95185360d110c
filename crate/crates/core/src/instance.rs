//! Problem instances: scenario configs, random generation, and the JSON
//! instance file format.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{in_free_space, AgentSpec, Obstacle, Point2, World};
use crate::gridmap::{build_occupancy, cost_to_go_lenient};
use crate::rng::Rng;

pub const BASE_SPEED: f64 = 1.0 / 32.0;
pub const BASE_RADIUS: f64 = 1.0 / 64.0;
pub const HETERO_MULTIPLIERS: [f64; 3] = [1.0, 1.25, 1.5];
pub const OBSTACLE_RADIUS_RANGE: (f64, f64) = (1.0 / 64.0, 1.0 / 16.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Basic,
    MoreAgents,
    NoObstacles,
    MoreObstacles,
    HeteroAgents,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Basic,
        Scenario::MoreAgents,
        Scenario::NoObstacles,
        Scenario::MoreObstacles,
        Scenario::HeteroAgents,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Basic => "basic",
            Scenario::MoreAgents => "more_agents",
            Scenario::NoObstacles => "no_obstacles",
            Scenario::MoreObstacles => "more_obstacles",
            Scenario::HeteroAgents => "hetero_agents",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "basic" => Ok(Scenario::Basic),
            "more_agents" => Ok(Scenario::MoreAgents),
            "no_obstacles" => Ok(Scenario::NoObstacles),
            "more_obstacles" => Ok(Scenario::MoreObstacles),
            "hetero_agents" | "hetero" => Ok(Scenario::HeteroAgents),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

/// Scale preset for scenario configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 21-40 agents with 10-20 obstacles.
    Paper,
    /// 4-8 agents (9-12 for more_agents) with 0-4 obstacles, sized for a single CPU.
    Desk,
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub agent_count_min: usize,
    pub agent_count_max: usize,
    pub obstacle_count: usize,
    pub base_speed: f64,
    pub base_radius: f64,
    pub heterogeneous: bool,
    /// Rejection-sampling budget per start or goal.
    pub max_attempts: usize,
    /// Require every goal to be reachable from its start on the occupancy
    /// grid of this resolution; `0` disables the check.
    pub connectivity_resolution: usize,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, profile: Profile) -> Self {
        let (agents, obstacles) = match (profile, scenario) {
            (Profile::Paper, Scenario::MoreAgents) => (31..=40, 10),
            (Profile::Paper, Scenario::NoObstacles) => (21..=30, 0),
            (Profile::Paper, Scenario::MoreObstacles) => (21..=30, 20),
            (Profile::Paper, _) => (21..=30, 10),
            (Profile::Desk, Scenario::MoreAgents) => (9..=12, 2),
            (Profile::Desk, Scenario::NoObstacles) => (4..=8, 0),
            (Profile::Desk, Scenario::MoreObstacles) => (4..=8, 4),
            (Profile::Desk, _) => (4..=8, 2),
        };
        Self {
            scenario,
            agent_count_min: *agents.start(),
            agent_count_max: *agents.end(),
            obstacle_count: obstacles,
            base_speed: BASE_SPEED,
            base_radius: BASE_RADIUS,
            heterogeneous: scenario == Scenario::HeteroAgents,
            max_attempts: 10_000,
            connectivity_resolution: 64,
        }
    }

    pub fn with_agents(mut self, range: RangeInclusive<usize>) -> Self {
        self.agent_count_min = *range.start();
        self.agent_count_max = *range.end();
        self
    }

    pub fn with_obstacles(mut self, count: usize) -> Self {
        self.obstacle_count = count;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub world: World,
    pub agents: Vec<AgentSpec>,
    pub starts: Vec<Point2>,
    pub goals: Vec<Point2>,
}

impl ProblemInstance {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// All agents share one radius and speed.
    pub fn is_homogeneous(&self) -> bool {
        self.agents.windows(2).all(|w| w[0] == w[1])
    }

    /// Check the instance invariants; `Ok` when the instance is well formed.
    pub fn validate(&self) -> Result<(), InstanceError> {
        let n = self.agents.len();
        if n == 0 {
            return Err(InstanceError::Invalid("instance has no agents".into()));
        }
        if self.starts.len() != n || self.goals.len() != n {
            return Err(InstanceError::Invalid(format!(
                "{} agents but {} starts and {} goals",
                n,
                self.starts.len(),
                self.goals.len()
            )));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !(a.radius > 0.0 && a.max_speed > 0.0 && a.radius.is_finite() && a.max_speed.is_finite()) {
                return Err(InstanceError::Invalid(format!("agent {i} has non-positive radius or speed")));
            }
            for (what, p) in [("start", self.starts[i]), ("goal", self.goals[i])] {
                if !p.is_finite() || !in_free_space(p, a, &self.world) {
                    return Err(InstanceError::Invalid(format!("{what} of agent {i} is not in free space")));
                }
            }
        }
        for o in &self.world.obstacles {
            if !(o.radius > 0.0) || !o.center.is_finite() {
                return Err(InstanceError::Invalid("obstacle with non-positive radius".into()));
            }
        }
        for (what, pts) in [("starts", &self.starts), ("goals", &self.goals)] {
            for i in 0..n {
                for j in i + 1..n {
                    if pts[i].distance(pts[j]) < self.agents[i].radius + self.agents[j].radius {
                        return Err(InstanceError::Invalid(format!("{what} of agents {i} and {j} overlap")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("gave up placing {what} after {attempts} attempts")]
    GenerationTimeout { what: String, attempts: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
}

fn uniform_in(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Random instance for a scenario; deterministic given the generator state.
pub fn generate_instance(cfg: &ScenarioConfig, rng: &mut Rng) -> Result<ProblemInstance, InstanceError> {
    let n = rng.gen_range(cfg.agent_count_min..=cfg.agent_count_max);
    let obstacles = (0..cfg.obstacle_count)
        .map(|_| {
            let c = Point2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            Obstacle::new(c, uniform_in(rng, OBSTACLE_RADIUS_RANGE.0, OBSTACLE_RADIUS_RANGE.1))
        })
        .collect();
    let world = World::new(obstacles);
    let agents: Vec<AgentSpec> = (0..n)
        .map(|_| {
            if cfg.heterogeneous {
                let mr = HETERO_MULTIPLIERS[rng.gen_range(0..HETERO_MULTIPLIERS.len())];
                let mk = HETERO_MULTIPLIERS[rng.gen_range(0..HETERO_MULTIPLIERS.len())];
                AgentSpec::new(cfg.base_radius * mr, cfg.base_speed * mk)
            } else {
                AgentSpec::new(cfg.base_radius, cfg.base_speed)
            }
        })
        .collect();

    let mut starts: Vec<Point2> = Vec::with_capacity(n);
    let mut goals: Vec<Point2> = Vec::with_capacity(n);
    for (i, agent) in agents.iter().enumerate() {
        let grid = (cfg.connectivity_resolution >= 2)
            .then(|| build_occupancy(&world, agent, cfg.connectivity_resolution));
        let start = place(rng, agent, &world, &agents, &starts, cfg.max_attempts, |_| true)
            .ok_or_else(|| timeout(format!("start of agent {i}"), cfg.max_attempts))?;
        let field = grid.as_ref().map(|g| cost_to_go_lenient(g, start));
        let goal = place(rng, agent, &world, &agents, &goals, cfg.max_attempts, |p| match (&grid, &field) {
            (Some(g), Some(f)) => {
                let (x, y) = g.cell_of(p);
                f.is_reachable(x, y)
            }
            _ => true,
        })
        .ok_or_else(|| timeout(format!("goal of agent {i}"), cfg.max_attempts))?;
        starts.push(start);
        goals.push(goal);
    }
    Ok(ProblemInstance {
        scenario: Some(cfg.scenario),
        seed: None,
        world,
        agents,
        starts,
        goals,
    })
}

fn timeout(what: String, attempts: usize) -> InstanceError {
    InstanceError::GenerationTimeout { what, attempts }
}

fn place(
    rng: &mut Rng,
    agent: &AgentSpec,
    world: &World,
    agents: &[AgentSpec],
    placed: &[Point2],
    attempts: usize,
    extra: impl Fn(Point2) -> bool,
) -> Option<Point2> {
    let r = agent.radius;
    for _ in 0..attempts {
        let p = Point2::new(uniform_in(rng, r, 1.0 - r), uniform_in(rng, r, 1.0 - r));
        if !in_free_space(p, agent, world) {
            continue;
        }
        let clear = placed
            .iter()
            .zip(agents)
            .all(|(q, other)| p.distance(*q) >= r + other.radius);
        if clear && extra(p) {
            return Some(p);
        }
    }
    None
}

/// Generate with a fresh generator per seed and stamp the seed.
pub fn generate_seeded(cfg: &ScenarioConfig, seed: u64) -> Result<ProblemInstance, InstanceError> {
    let mut rng = crate::rng::seeded(seed);
    let mut inst = generate_instance(cfg, &mut rng)?;
    inst.seed = Some(seed);
    Ok(inst)
}

// ---- file format ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObstacleRecord {
    cx: f64,
    cy: f64,
    r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(default)]
    scenario: Option<Scenario>,
    #[serde(default)]
    seed: Option<u64>,
    obstacles: Vec<ObstacleRecord>,
    agents: Vec<AgentSpec>,
    starts: Vec<[f64; 2]>,
    goals: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

impl InstanceFile {
    fn from_instance(inst: &ProblemInstance, config: Option<serde_json::Value>) -> Self {
        Self {
            scenario: inst.scenario,
            seed: inst.seed,
            obstacles: inst
                .world
                .obstacles
                .iter()
                .map(|o| ObstacleRecord { cx: o.center.x, cy: o.center.y, r: o.radius })
                .collect(),
            agents: inst.agents.clone(),
            starts: inst.starts.iter().map(|p| p.to_array()).collect(),
            goals: inst.goals.iter().map(|p| p.to_array()).collect(),
            config,
        }
    }

    fn into_instance(self) -> ProblemInstance {
        ProblemInstance {
            scenario: self.scenario,
            seed: self.seed,
            world: World::new(
                self.obstacles
                    .into_iter()
                    .map(|o| Obstacle::new(Point2::new(o.cx, o.cy), o.r))
                    .collect(),
            ),
            agents: self.agents,
            starts: self.starts.into_iter().map(Point2::from).collect(),
            goals: self.goals.into_iter().map(Point2::from).collect(),
        }
    }
}

pub fn save_instance(inst: &ProblemInstance) -> String {
    save_instance_with_config(inst, None)
}

/// Serialize, embedding the run configuration that produced the instance.
pub fn save_instance_with_config(inst: &ProblemInstance, config: Option<serde_json::Value>) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(inst, config)).expect("instance serializes")
}

pub fn load_instance(text: &str) -> Result<ProblemInstance, InstanceError> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| InstanceError::Parse(e.to_string()))?;
    let inst = file.into_instance();
    inst.validate()?;
    Ok(inst)
}

/// The embedded run configuration of an instance file, if present.
pub fn load_instance_config(text: &str) -> Result<Option<serde_json::Value>, InstanceError> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| InstanceError::Parse(e.to_string()))?;
    Ok(file.config)
}
