use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ctrm_core::instance::{generate_seeded, Profile, Scenario, ScenarioConfig};
use ctrm_core::par::Execution;
use ctrm_core::pipeline::{run_benchmark, BenchInstance, Method, Timing};
use ctrm_core::planner::PlanLimits;
use ctrm_core::rng::seeded;
use ctrm_core::roadmap::{build_random, RoadmapScope};

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn suite(n: usize) -> Vec<BenchInstance> {
    let cfg = ScenarioConfig::new(Scenario::Basic, Profile::Desk);
    (0..n)
        .map(|k| BenchInstance { id: format!("inst_{k}"), instance: generate_seeded(&cfg, 100 + k as u64).unwrap() })
        .collect()
}

fn roadmap_edges(c: &mut Criterion) {
    let inst = suite(1).remove(0).instance;
    let mut g = c.benchmark_group("random_roadmap_3000");
    g.sample_size(10);
    for exec in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| build_random(&inst, 3000, RoadmapScope::Shared, &mut seeded(1), exec))
        });
    }
    g.finish();
}

fn benchmark_matrix(c: &mut Criterion) {
    let instances = suite(4);
    let methods = [Method::Random { samples: 1500 }, Method::Grid { side: 32 }];
    let limits = PlanLimits { time_limit_ms: None, ..PlanLimits::default() };
    let mut g = c.benchmark_group("benchmark_matrix");
    g.sample_size(10);
    for exec in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| run_benchmark(&instances, &methods, &[], &limits, 7, Timing::Omit, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, roadmap_edges, benchmark_matrix);
criterion_main!(benches);
