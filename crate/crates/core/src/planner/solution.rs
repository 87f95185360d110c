use serde::{Deserialize, Serialize};

use crate::geometry::{moving_discs_collide, swept_disc_clear, within_speed, Point2};
use crate::instance::ProblemInstance;

/// One point sequence per agent on synchronized timesteps. An agent stays
/// at its last point after its sequence ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub paths: Vec<Vec<Point2>>,
}

impl Solution {
    pub fn makespan(&self) -> usize {
        self.paths.iter().map(|p| p.len().saturating_sub(1)).max().unwrap_or(0)
    }

    pub fn position(&self, agent: usize, t: usize) -> Point2 {
        let p = &self.paths[agent];
        p[t.min(p.len() - 1)]
    }
}

/// Earliest timestep from which `path` stays at `goal`.
pub fn arrival_time(path: &[Point2], goal: Point2) -> usize {
    path.iter().rposition(|&p| p != goal).map_or(0, |t| t + 1)
}

pub fn sum_of_costs(inst: &ProblemInstance, sol: &Solution) -> usize {
    sol.paths.iter().zip(&inst.goals).map(|(p, &g)| arrival_time(p, g)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Endpoint,
    Obstacle,
    InterAgent,
    Kinematic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub agents: Vec<usize>,
    /// Start of the offending step `t -> t + 1`.
    pub t: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

pub fn validate_solution(inst: &ProblemInstance, sol: &Solution) -> ValidationReport {
    let mut out = Vec::new();
    let n = inst.num_agents();
    if sol.paths.len() != n {
        out.push(Violation { kind: ViolationKind::Endpoint, agents: (0..n).collect(), t: 0 });
        return ValidationReport { violations: out };
    }
    for (i, path) in sol.paths.iter().enumerate() {
        if path.first() != Some(&inst.starts[i]) {
            out.push(Violation { kind: ViolationKind::Endpoint, agents: vec![i], t: 0 });
        }
        match path.last() {
            Some(&g) if g == inst.goals[i] => {}
            _ => out.push(Violation { kind: ViolationKind::Endpoint, agents: vec![i], t: path.len().saturating_sub(1) }),
        }
    }
    if sol.paths.iter().any(Vec::is_empty) {
        return ValidationReport { violations: out };
    }
    let steps = sol.makespan().max(1);
    for t in 0..steps {
        for i in 0..n {
            let (p, q) = (sol.position(i, t), sol.position(i, t + 1));
            let a = &inst.agents[i];
            if !within_speed(p, q, a.max_speed) {
                out.push(Violation { kind: ViolationKind::Kinematic, agents: vec![i], t });
            }
            if !swept_disc_clear(p, q, a, &inst.world) {
                out.push(Violation { kind: ViolationKind::Obstacle, agents: vec![i], t });
            }
            for j in i + 1..n {
                let (pj, qj) = (sol.position(j, t), sol.position(j, t + 1));
                if moving_discs_collide(p, q, a.radius, pj, qj, inst.agents[j].radius) {
                    out.push(Violation { kind: ViolationKind::InterAgent, agents: vec![i, j], t });
                }
            }
        }
    }
    ValidationReport { violations: out }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetrics {
    pub success: bool,
    pub sum_of_costs: Option<usize>,
    pub makespan: Option<usize>,
    pub expanded_nodes: u64,
    pub wall_time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// The solution file: per-agent point sequences plus metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub paths: Vec<Vec<[f64; 2]>>,
    pub metrics: SolutionMetrics,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl SolutionFile {
    pub fn solution(&self) -> Solution {
        Solution { paths: self.paths.iter().map(|p| p.iter().map(|&a| Point2::from(a)).collect()).collect() }
    }

    pub fn from_solution(sol: &Solution, metrics: SolutionMetrics, config: serde_json::Value) -> Self {
        Self { paths: sol.paths.iter().map(|p| p.iter().map(|q| q.to_array()).collect()).collect(), metrics, config }
    }
}
