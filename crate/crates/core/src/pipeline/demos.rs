use serde::{Deserialize, Serialize};

use super::bench::static_views_for;
use super::PipelineError;
use crate::instance::{generate_seeded, ProblemInstance, ScenarioConfig};
use crate::par::{self, Execution};
use crate::planner::{prioritized_planning, validate_solution, PlanLimits, Solution};
use crate::rng::{derive_seed, seeded};
use crate::roadmap::{build_random, RoadmapScope, StaticRoadmap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub scenario: ScenarioConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub roadmap_samples: usize,
    pub limits: PlanLimits,
    pub max_resamples: usize,
    pub seed: u64,
}

impl DemoConfig {
    pub fn desk(scenario: ScenarioConfig, seed: u64) -> Self {
        Self {
            scenario,
            n_train: 50,
            n_val: 10,
            roadmap_samples: 3000,
            limits: PlanLimits { time_limit_ms: None, ..PlanLimits::default() },
            max_resamples: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub instance: ProblemInstance,
    pub solution: Solution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub train: Vec<Demonstration>,
    pub val: Vec<Demonstration>,
}

/// Random roadmap of `n` samples: shared by identical agents, per agent
/// otherwise.
pub(crate) fn random_roadmaps(inst: &ProblemInstance, n: usize, seed: u64, exec: Execution) -> Vec<StaticRoadmap> {
    if inst.is_homogeneous() {
        vec![build_random(inst, n, RoadmapScope::Shared, &mut seeded(seed), exec)]
    } else {
        (0..inst.num_agents())
            .map(|i| build_random(inst, n, RoadmapScope::Agent(i), &mut seeded(derive_seed(seed, &[i as u64])), exec))
            .collect()
    }
}

fn solve_one(cfg: &DemoConfig, index: usize) -> Result<Demonstration, PipelineError> {
    for attempt in 0..cfg.max_resamples {
        let seed = derive_seed(cfg.seed, &[index as u64, attempt as u64]);
        let inst = generate_seeded(&cfg.scenario, seed)?;
        let maps = random_roadmaps(&inst, cfg.roadmap_samples, derive_seed(seed, &[1]), Execution::Sequential);
        let views = static_views_for(&inst, &maps, &cfg.limits);
        if let Ok(solution) = prioritized_planning(&inst, &views, &cfg.limits).result {
            if validate_solution(&inst, &solution).is_valid() {
                return Ok(Demonstration { id: format!("demo_{index:04}"), instance: inst, solution });
            }
        }
        log::debug!("demonstration {index}: attempt {attempt} failed, resampling");
    }
    Err(PipelineError::DemoExhausted { index, attempts: cfg.max_resamples })
}

/// Solve `n_train + n_val` instances on random roadmaps; failures are
/// replaced by fresh instances.
pub fn gen_demonstrations(cfg: &DemoConfig, exec: Execution) -> Result<DemoSet, PipelineError> {
    let all = par::map_range(exec, cfg.n_train + cfg.n_val, |k| solve_one(cfg, k));
    let mut demos = all.into_iter().collect::<Result<Vec<_>, _>>()?;
    let val = demos.split_off(cfg.n_train);
    Ok(DemoSet { train: demos, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Profile, Scenario};

    #[test]
    fn demos_validate_and_split() {
        let mut cfg = DemoConfig::desk(ScenarioConfig::new(Scenario::Basic, Profile::Desk).with_agents(3..=4), 5);
        cfg.n_train = 3;
        cfg.n_val = 2;
        let set = gen_demonstrations(&cfg, Execution::Sequential).unwrap();
        assert_eq!((set.train.len(), set.val.len()), (3, 2));
        for d in set.train.iter().chain(&set.val) {
            assert!(validate_solution(&d.instance, &d.solution).is_valid());
        }
        for a in &set.train {
            assert!(set.val.iter().all(|b| b.instance != a.instance));
        }
        assert_eq!(gen_demonstrations(&cfg, Execution::Parallel).unwrap(), set);
    }
}
