use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::demos::random_roadmaps;
use crate::ctrm::{construct_ctrms, CtrmBuild, CtrmParams};
use crate::features::FeatureConfig;
use crate::instance::ProblemInstance;
use crate::neural::CvaeModel;
use crate::par::{self, Execution};
use crate::planner::{
    prioritized_planning, static_horizon, sum_of_costs, validate_solution, GraphView, PlanLimits, PlanOutcome,
};
use crate::rng::{derive_seed, label_tag, seeded};
use crate::roadmap::{build_grid, build_square, Density, RoadmapDump, RoadmapScope, RoadmapSetFile, StaticRoadmap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Ctrm { n_traj: usize, model: String, random_walk: bool },
    Random { samples: usize },
    Grid { side: usize },
    Square { density: Density },
}

impl Method {
    pub fn id(&self) -> String {
        match self {
            Method::Ctrm { n_traj, model, random_walk } => {
                let mut s = format!("ctrm_{n_traj}");
                if model != "full" {
                    s.push('_');
                    s.push_str(model);
                }
                if !random_walk {
                    s.push_str("_no_random_walk");
                }
                s
            }
            Method::Random { samples } => format!("random_{samples}"),
            Method::Grid { side } => format!("grid_{side}"),
            Method::Square { density } => format!("square_{}", serde_json::to_value(density).unwrap().as_str().unwrap()),
        }
    }
}

/// A trained sampler available to CTRM methods under `label`.
#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub label: String,
    pub model: CvaeModel,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchInstance {
    pub id: String,
    pub instance: ProblemInstance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    Record,
    /// Leave timings out so that outputs are byte-reproducible.
    Omit,
}

#[derive(Debug, Clone)]
pub enum BuiltRoadmaps {
    Timed(CtrmBuild),
    /// Roadmaps plus the index each agent plans on.
    Static(Vec<StaticRoadmap>, Vec<usize>),
}

impl BuiltRoadmaps {
    pub fn views<'a>(&'a self, inst: &ProblemInstance, limits: &PlanLimits) -> Vec<GraphView<'a>> {
        match self {
            BuiltRoadmaps::Timed(b) => b.roadmaps.iter().map(GraphView::Timed).collect(),
            BuiltRoadmaps::Static(maps, assign) => {
                let h = static_horizon(inst, limits.horizon_resolution, limits.horizon_factor);
                assign
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| GraphView::for_static(&maps[m], i, h).expect("static roadmap lacks terminals"))
                    .collect()
            }
        }
    }

    pub fn vertices_per_agent_per_timestep(&self) -> f64 {
        match self {
            BuiltRoadmaps::Timed(b) => b.vertices_per_agent_per_timestep(),
            BuiltRoadmaps::Static(maps, assign) => {
                assign.iter().map(|&m| maps[m].num_vertices() as f64).sum::<f64>() / assign.len().max(1) as f64
            }
        }
    }

    pub fn to_file(&self, method: &Method, config: serde_json::Value) -> RoadmapSetFile {
        let (roadmaps, assignment) = match self {
            BuiltRoadmaps::Timed(b) => (b.roadmaps.iter().map(RoadmapDump::from).collect(), (0..b.roadmaps.len()).collect()),
            BuiltRoadmaps::Static(maps, assign) => (maps.iter().map(RoadmapDump::from).collect(), assign.clone()),
        };
        RoadmapSetFile { method: method.id(), config, roadmaps, assignment }
    }
}

pub(crate) fn static_views_for<'a>(
    inst: &ProblemInstance,
    maps: &'a [StaticRoadmap],
    limits: &PlanLimits,
) -> Vec<GraphView<'a>> {
    let h = static_horizon(inst, limits.horizon_resolution, limits.horizon_factor);
    (0..inst.num_agents())
        .map(|i| {
            let m = if maps.len() == 1 { &maps[0] } else { &maps[i] };
            GraphView::for_static(m, i, h).expect("static roadmap lacks terminals")
        })
        .collect()
}

fn per_agent_or_shared(inst: &ProblemInstance, maps: Vec<StaticRoadmap>) -> BuiltRoadmaps {
    let assign = if maps.len() == 1 { vec![0; inst.num_agents()] } else { (0..inst.num_agents()).collect() };
    BuiltRoadmaps::Static(maps, assign)
}

/// Build the roadmaps `method` plans on.
pub fn build_roadmaps(
    inst: &ProblemInstance,
    method: &Method,
    models: &[ModelEntry],
    seed: u64,
    exec: Execution,
) -> Result<BuiltRoadmaps, String> {
    Ok(match method {
        Method::Ctrm { n_traj, model, random_walk } => {
            let entry = models.iter().find(|m| &m.label == model).ok_or_else(|| format!("no model named `{model}`"))?;
            let params = CtrmParams { random_walk: *random_walk, ..CtrmParams::new(*n_traj, entry.features) };
            params.validate()?;
            BuiltRoadmaps::Timed(construct_ctrms(inst, &entry.model, &params, &mut seeded(seed)))
        }
        Method::Random { samples } => per_agent_or_shared(inst, random_roadmaps(inst, *samples, seed, exec)),
        Method::Grid { side } => {
            let maps = if inst.is_homogeneous() {
                vec![build_grid(inst, *side, RoadmapScope::Shared, exec)]
            } else {
                (0..inst.num_agents()).map(|i| build_grid(inst, *side, RoadmapScope::Agent(i), exec)).collect()
            };
            per_agent_or_shared(inst, maps)
        }
        Method::Square { density } => {
            let maps = (0..inst.num_agents())
                .map(|i| build_square(inst, i, *density, &mut seeded(derive_seed(seed, &[i as u64])), exec))
                .collect();
            BuiltRoadmaps::Static(maps, (0..inst.num_agents()).collect())
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub instance: String,
    pub agents: usize,
    pub success: bool,
    pub sum_of_costs: Option<usize>,
    pub expanded_nodes: Option<u64>,
    pub roadmap_build_ms: Option<f64>,
    pub planning_ms: Option<f64>,
    pub vertices_per_agent_per_timestep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn run_cell(
    bi: &BenchInstance,
    method: &Method,
    models: &[ModelEntry],
    limits: &PlanLimits,
    seed: u64,
    timing: Timing,
) -> MetricsRecord {
    let inst = &bi.instance;
    let cell_seed = derive_seed(seed, &[label_tag(&bi.id), label_tag(&method.id())]);
    let clock = Instant::now();
    let built = build_roadmaps(inst, method, models, cell_seed, Execution::Sequential);
    let build_ms = ms(clock);
    let mut rec = MetricsRecord {
        method: method.id(),
        instance: bi.id.clone(),
        agents: inst.num_agents(),
        success: false,
        sum_of_costs: None,
        expanded_nodes: None,
        roadmap_build_ms: None,
        planning_ms: None,
        vertices_per_agent_per_timestep: None,
        failure: None,
    };
    let built = match built {
        Ok(b) => b,
        Err(e) => {
            rec.failure = Some(e);
            return rec;
        }
    };
    let clock = Instant::now();
    let PlanOutcome { result, expanded, .. } = prioritized_planning(inst, &built.views(inst, limits), limits);
    let plan_ms = ms(clock);
    if timing == Timing::Record {
        rec.roadmap_build_ms = Some(build_ms);
        rec.planning_ms = Some(plan_ms);
    }
    match result {
        Ok(sol) => {
            let report = validate_solution(inst, &sol);
            if report.is_valid() {
                rec.success = true;
                rec.sum_of_costs = Some(sum_of_costs(inst, &sol));
                rec.expanded_nodes = Some(expanded);
                rec.vertices_per_agent_per_timestep = Some(built.vertices_per_agent_per_timestep());
            } else {
                log::error!("{} on {}: planner returned an invalid solution", rec.method, rec.instance);
                rec.failure = Some(format!("invalid solution ({} violations)", report.violations.len()));
            }
        }
        Err(f) => rec.failure = Some(f.to_string()),
    }
    rec
}

/// Every (instance, method) cell, instance-major. Cell failures are
/// recorded, never raised.
pub fn run_benchmark(
    instances: &[BenchInstance],
    methods: &[Method],
    models: &[ModelEntry],
    limits: &PlanLimits,
    seed: u64,
    timing: Timing,
    exec: Execution,
) -> Vec<MetricsRecord> {
    let cells: Vec<(usize, usize)> =
        (0..instances.len()).flat_map(|i| (0..methods.len()).map(move |m| (i, m))).collect();
    par::map(exec, &cells, |&(i, m)| run_cell(&instances[i], &methods[m], models, limits, seed, timing))
}

pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

pub fn parse_metrics_jsonl(text: &str) -> Result<Vec<MetricsRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Whether the method clears the success threshold and enters the
    /// common-success averages.
    pub included: bool,
    pub cost_per_agent: Option<f64>,
    pub expanded_per_agent: Option<f64>,
    pub vertices_per_agent_per_timestep: Option<f64>,
    pub roadmap_build_ms: Option<f64>,
    pub planning_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub threshold: f64,
    pub common_instances: Vec<String>,
    pub methods: Vec<MethodSummary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Success rate per method; costs and expansions averaged over instances
/// solved by every method at or above `threshold`.
pub fn aggregate(records: &[MetricsRecord], threshold: f64) -> Aggregate {
    let mut order: Vec<String> = Vec::new();
    for r in records {
        if !order.contains(&r.method) {
            order.push(r.method.clone());
        }
    }
    fn of<'a>(records: &'a [MetricsRecord], m: &'a str) -> impl Iterator<Item = &'a MetricsRecord> + 'a {
        records.iter().filter(move |r| r.method == m)
    }
    let rate = |m: &str| {
        let runs = of(records, m).count();
        let ok = of(records, m).filter(|r| r.success).count();
        (runs, ok, if runs == 0 { 0.0 } else { ok as f64 / runs as f64 })
    };
    let included: Vec<&String> = order.iter().filter(|m| {
        let (_, ok, r) = rate(m);
        ok > 0 && r >= threshold
    }).collect();
    let mut common: Option<BTreeSet<String>> = None;
    for m in &included {
        let solved: BTreeSet<String> = of(records, m).filter(|r| r.success).map(|r| r.instance.clone()).collect();
        common = Some(match common {
            None => solved,
            Some(c) => c.intersection(&solved).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let methods = order
        .iter()
        .map(|m| {
            let (runs, successes, success_rate) = rate(m);
            let inc = included.contains(&m);
            let sub: Vec<&MetricsRecord> =
                if inc { of(records, m).filter(|r| common.contains(&r.instance)).collect() } else { vec![] };
            debug_assert!(!inc || sub.iter().map(|r| &r.instance).collect::<BTreeSet<_>>() == common.iter().collect());
            MethodSummary {
                method: m.clone(),
                runs,
                successes,
                success_rate,
                included: inc,
                cost_per_agent: mean(sub.iter().map(|r| r.sum_of_costs.unwrap() as f64 / r.agents as f64)),
                expanded_per_agent: mean(sub.iter().map(|r| r.expanded_nodes.unwrap() as f64 / r.agents as f64)),
                vertices_per_agent_per_timestep: mean(of(records, m).filter_map(|r| r.vertices_per_agent_per_timestep)),
                roadmap_build_ms: mean(of(records, m).filter_map(|r| r.roadmap_build_ms)),
                planning_ms: mean(of(records, m).filter_map(|r| r.planning_ms)),
            }
        })
        .collect();
    Aggregate { threshold, common_instances: common.into_iter().collect(), methods }
}
