use ctrm_core::ctrm::{construct_ctrms, CtrmParams};
use ctrm_core::features::FeatureConfig;
use ctrm_core::instance::{generate_seeded, load_instance, save_instance, Profile, Scenario, ScenarioConfig};
use ctrm_core::neural::{load_checkpoint, save_checkpoint, TrainConfig};
use ctrm_core::par::Execution;
use ctrm_core::pipeline::{
    aggregate, build_roadmaps, extract_training_samples, gen_demonstrations, metrics_jsonl, parse_metrics_jsonl,
    read_samples, run_benchmark, train_variant, write_samples, AblationVariant, BenchInstance, DemoConfig, Method,
    ModelEntry, SampleSet, Timing,
};
use ctrm_core::planner::{prioritized_planning, validate_solution, GraphView, PlanLimits};
use ctrm_core::rng::seeded;
use ctrm_core::roadmap::RoadmapSetFile;

fn desk() -> ScenarioConfig {
    ScenarioConfig::new(Scenario::Basic, Profile::Desk).with_agents(3..=5)
}

fn limits() -> PlanLimits {
    PlanLimits { time_limit_ms: None, ..PlanLimits::default() }
}

fn small_model() -> ModelEntry {
    let features = FeatureConfig::desk();
    let mut cfg = DemoConfig::desk(desk(), 4);
    cfg.n_train = 4;
    cfg.n_val = 2;
    let demos = gen_demonstrations(&cfg, Execution::Sequential).unwrap();
    let set = SampleSet {
        fov_len: features.fov_len(),
        train: extract_training_samples(&demos.train, features, Execution::Sequential),
        val: extract_training_samples(&demos.val, features, Execution::Sequential),
    };
    let mut bytes = Vec::new();
    write_samples(&mut bytes, &set).unwrap();
    let set = read_samples(&mut bytes.as_slice()).unwrap();
    let mut tc = TrainConfig::desk(3);
    tc.epochs = 2;
    train_variant(AblationVariant::Full, features, &set.train, &set.val, &tc).0
}

fn instances(n: u64) -> Vec<BenchInstance> {
    (0..n).map(|k| BenchInstance { id: format!("i{k}"), instance: generate_seeded(&desk(), 50 + k).unwrap() }).collect()
}

#[test]
fn checkpoint_reload_builds_identical_ctrms() {
    let entry = small_model();
    let text = save_checkpoint(&entry.model, serde_json::json!({"note": "x"}));
    let (back, training) = load_checkpoint(&text, Some(&entry.model.cfg)).unwrap();
    assert_eq!(training["note"], "x");
    let inst = generate_seeded(&desk(), 1).unwrap();
    let params = CtrmParams::new(8, entry.features);
    let a = construct_ctrms(&inst, &entry.model, &params, &mut seeded(9));
    let b = construct_ctrms(&inst, &back, &params, &mut seeded(9));
    assert_eq!(a.roadmaps, b.roadmaps);
    assert_eq!(a.makespan, b.makespan);
}

#[test]
fn dumped_roadmaps_plan_like_the_originals() {
    let entry = small_model();
    let inst = load_instance(&save_instance(&generate_seeded(&desk(), 2).unwrap())).unwrap();
    for method in [
        Method::Ctrm { n_traj: 20, model: "full".into(), random_walk: true },
        Method::Random { samples: 3000 },
        Method::Grid { side: 32 },
    ] {
        let built = build_roadmaps(&inst, &method, std::slice::from_ref(&entry), 6, Execution::Sequential).unwrap();
        let direct = prioritized_planning(&inst, &built.views(&inst, &limits()), &limits());

        let file = RoadmapSetFile::from_json(&built.to_file(&method, serde_json::Value::Null).to_json()).unwrap();
        let sol = match &method {
            Method::Ctrm { .. } => {
                let maps: Vec<_> = file.roadmaps.into_iter().map(|d| d.into_timed().unwrap()).collect();
                let views: Vec<_> = file.assignment.iter().map(|&k| GraphView::Timed(&maps[k])).collect();
                prioritized_planning(&inst, &views, &limits())
            }
            _ => {
                let maps: Vec<_> = file.roadmaps.into_iter().map(|d| d.into_static().unwrap()).collect();
                let h = ctrm_core::planner::static_horizon(&inst, 64, 4);
                let views: Vec<_> =
                    file.assignment.iter().enumerate().map(|(i, &k)| GraphView::for_static(&maps[k], i, h).unwrap()).collect();
                prioritized_planning(&inst, &views, &limits())
            }
        };
        assert_eq!(direct.result, sol.result, "{}", method.id());
        assert_eq!(direct.expanded, sol.expanded);
        if let Ok(s) = &sol.result {
            assert!(validate_solution(&inst, s).is_valid());
        }
    }
}

#[test]
fn benchmark_records_round_trip_and_ignore_execution_mode() {
    let entry = small_model();
    let suite = instances(3);
    let methods = [
        Method::Ctrm { n_traj: 10, model: "full".into(), random_walk: true },
        Method::Random { samples: 3000 },
        Method::Square { density: ctrm_core::roadmap::Density::Low },
    ];
    let models = [entry];
    let seq = run_benchmark(&suite, &methods, &models, &limits(), 1, Timing::Omit, Execution::Sequential);
    let par = run_benchmark(&suite, &methods, &models, &limits(), 1, Timing::Omit, Execution::Parallel);
    assert_eq!(metrics_jsonl(&seq), metrics_jsonl(&par));
    assert_eq!(seq.len(), 9);
    assert_eq!(parse_metrics_jsonl(&metrics_jsonl(&seq)).unwrap(), seq);

    let agg = aggregate(&seq, 0.0);
    for id in &agg.common_instances {
        for m in agg.methods.iter().filter(|m| m.included) {
            assert!(seq.iter().any(|r| &r.instance == id && r.method == m.method && r.success));
        }
    }
    for r in seq.iter().filter(|r| !r.success) {
        assert!(r.sum_of_costs.is_none() && r.expanded_nodes.is_none() && r.failure.is_some());
    }
}
