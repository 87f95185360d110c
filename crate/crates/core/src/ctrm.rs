//! Cooperative timed roadmap construction: learned next-vertex sampling
//! with a random-walk fallback and merging of compatible vertices.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, FeatureContext, MotionEncoding, RawFeature};
use crate::geometry::{valid_edge, Point2};
use crate::instance::ProblemInstance;
use crate::neural::CvaeModel;
use crate::rng::Rng;
use crate::roadmap::TimedRoadmap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrmParams {
    pub n_traj: usize,
    pub t_max: usize,
    pub gamma: f64,
    pub post_goal_p: f64,
    pub n_retry: usize,
    /// Merge radius as a fraction of the agent's speed.
    pub merge_fraction: f64,
    /// `false` always uses the learned sampler (`p_biased = 1`).
    pub random_walk: bool,
    pub features: FeatureConfig,
}

impl CtrmParams {
    pub fn new(n_traj: usize, features: FeatureConfig) -> Self {
        Self {
            n_traj,
            t_max: 64,
            gamma: 5.0,
            post_goal_p: 0.1,
            n_retry: 3,
            merge_fraction: 0.1,
            random_walk: true,
            features,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_traj < 1 {
            return Err("n_traj must be at least 1".into());
        }
        if self.t_max < 2 {
            return Err("t_max must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.post_goal_p) || !(self.merge_fraction >= 0.0) {
            return Err("post_goal_p must lie in [0, 1] and merge_fraction must be non-negative".into());
        }
        Ok(())
    }

    /// Probability of using the learned sampler at timestep `t`.
    ///
    /// `makespan == 0` means no pass has reached the goals yet.
    pub fn p_biased(&self, t: usize, makespan: usize, reached_goal: bool) -> f64 {
        if !self.random_walk {
            return 1.0;
        }
        if reached_goal {
            return self.post_goal_p;
        }
        let reference = if makespan == 0 { self.t_max } else { makespan.min(self.t_max) };
        1.0 - (-self.gamma * t as f64 / reference as f64).exp()
    }
}

/// `L[i][t]`: where agent `i` is at timestep `t` in the current pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationTable {
    steps: Vec<Vec<Point2>>,
}

impl LocationTable {
    pub fn new(starts: &[Point2]) -> Self {
        Self { steps: vec![starts.to_vec()] }
    }

    pub fn at(&self, i: usize, t: usize) -> Point2 {
        self.steps[t][i]
    }

    /// Positions of every agent at `t`.
    pub fn layer(&self, t: usize) -> &[Point2] {
        &self.steps[t]
    }

    /// Number of filled timesteps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, layer: Vec<Point2>) {
        assert_eq!(layer.len(), self.steps[0].len());
        self.steps.push(layer);
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CtrmError {
    #[error("no construction pass brought every agent within reach of its goal")]
    ConstructionIncomplete,
}

#[derive(Debug, Clone)]
pub struct CtrmBuild {
    pub roadmaps: Vec<TimedRoadmap>,
    /// Layers carrying goal vertices; zero when construction is incomplete.
    pub makespan: usize,
    /// Passes that ended with every agent able to reach its goal.
    pub completed_passes: usize,
}

impl CtrmBuild {
    pub fn status(&self) -> Result<(), CtrmError> {
        if self.makespan == 0 {
            Err(CtrmError::ConstructionIncomplete)
        } else {
            Ok(())
        }
    }

    /// Vertices per agent per timestep, averaged over agents.
    pub fn vertices_per_agent_per_timestep(&self) -> f64 {
        let n = self.roadmaps.len().max(1) as f64;
        self.roadmaps.iter().map(|d| d.num_vertices() as f64 / d.num_layers() as f64).sum::<f64>() / n
    }
}

/// Whether every agent stands on its goal or one valid step from it.
pub fn check_reachability_to_goals(inst: &ProblemInstance, t: usize, table: &LocationTable) -> bool {
    (0..inst.num_agents()).all(|i| near_goal(inst, i, table.at(i, t)))
}

fn near_goal(inst: &ProblemInstance, i: usize, p: Point2) -> bool {
    p == inst.goals[i] || valid_edge(p, inst.goals[i], &inst.agents[i], &inst.world)
}

/// Turn a sampled motion into a target point: magnitude clamped to the
/// agent's speed, point clamped to the square.
pub fn motion_to_point(from: Point2, motion: MotionEncoding, max_speed: f64) -> Point2 {
    let m = MotionEncoding { magnitude: motion.magnitude.clamp(0.0, max_speed), ..motion };
    (from + m.displacement()).clamp_unit()
}

fn random_walk_point(from: Point2, max_speed: f64, rng: &mut Rng) -> Point2 {
    let r = max_speed * rng.gen::<f64>().sqrt();
    let a = rng.gen::<f64>() * std::f64::consts::TAU;
    (from + Point2::new(r * a.cos(), r * a.sin())).clamp_unit()
}

/// The biased step proposal; `None` when it is not a valid edge.
fn biased_step(inst: &ProblemInstance, i: usize, from: Point2, motion: MotionEncoding) -> Option<Point2> {
    let (a, w) = (&inst.agents[i], &inst.world);
    // A goal one valid step away is taken directly.
    if valid_edge(from, inst.goals[i], a, w) {
        return Some(inst.goals[i]);
    }
    let p = motion_to_point(from, motion, a.max_speed);
    valid_edge(from, p, a, w).then_some(p)
}

fn fallback_step(inst: &ProblemInstance, i: usize, from: Point2, params: &CtrmParams, rng: &mut Rng) -> Point2 {
    let a = &inst.agents[i];
    for _ in 0..params.n_retry {
        let p = random_walk_point(from, a.max_speed, rng);
        if valid_edge(from, p, a, &inst.world) {
            return p;
        }
    }
    from
}

/// Observation of agent `i` for step `t`, built from the `t - 1` snapshot.
fn observe(ctx: &FeatureContext, inst: &ProblemInstance, table: &LocationTable, t: usize, fovs: &[Vec<u8>], i: usize) -> RawFeature {
    let prev = table.layer(t.saturating_sub(2));
    ctx.extract_with(inst, i, table.layer(t - 1), prev, fovs)
}

/// Propose `L[i][t]` for one agent.
#[allow(clippy::too_many_arguments)]
pub fn sample_next_vertex(
    inst: &ProblemInstance,
    ctx: &FeatureContext,
    t: usize,
    i: usize,
    table: &LocationTable,
    model: &CvaeModel,
    params: &CtrmParams,
    makespan: usize,
    reached_goal: bool,
    rng: &mut Rng,
) -> Point2 {
    let from = table.at(i, t - 1);
    if rng.gen::<f64>() < params.p_biased(t, makespan, reached_goal) {
        let fovs: Vec<Vec<u8>> = table.layer(t - 1).iter().enumerate().map(|(j, &p)| ctx.fov_bits(j, p)).collect();
        let x = observe(ctx, inst, table, t, &fovs, i);
        let motion = model.sample_motion(&[&x], rng)[0];
        if let Some(p) = biased_step(inst, i, from, motion) {
            return p;
        }
    }
    fallback_step(inst, i, from, params, rng)
}

/// Propose `L[i][t]` for every agent at once, sharing one model call.
#[allow(clippy::too_many_arguments)]
fn sample_layer(
    inst: &ProblemInstance,
    ctx: &FeatureContext,
    t: usize,
    table: &LocationTable,
    model: &CvaeModel,
    params: &CtrmParams,
    makespan: usize,
    reached: &[bool],
    rng: &mut Rng,
) -> Vec<Point2> {
    let n = inst.num_agents();
    let biased: Vec<bool> = (0..n).map(|i| rng.gen::<f64>() < params.p_biased(t, makespan, reached[i])).collect();
    let mut proposals: Vec<Option<Point2>> = vec![None; n];
    let who: Vec<usize> = (0..n).filter(|&i| biased[i]).collect();
    if !who.is_empty() {
        let fovs: Vec<Vec<u8>> = table.layer(t - 1).iter().enumerate().map(|(j, &p)| ctx.fov_bits(j, p)).collect();
        let xs: Vec<RawFeature> = who.iter().map(|&i| observe(ctx, inst, table, t, &fovs, i)).collect();
        let refs: Vec<&RawFeature> = xs.iter().collect();
        for (&i, m) in who.iter().zip(model.sample_motion(&refs, rng)) {
            proposals[i] = biased_step(inst, i, table.at(i, t - 1), m);
        }
    }
    (0..n)
        .map(|i| match proposals[i] {
            Some(p) => p,
            None => fallback_step(inst, i, table.at(i, t - 1), params, rng),
        })
        .collect()
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|x| big.binary_search(x).is_ok())
}

/// Look for a layer-`t` vertex of `d` that can stand in for `p`.
///
/// Returns the position the agent should occupy, or `None` when `p` has to
/// be inserted as a new vertex.
pub fn find_compatible_vertex(
    inst: &ProblemInstance,
    t: usize,
    i: usize,
    p: Point2,
    d: &mut TimedRoadmap,
    delta: f64,
) -> Option<Point2> {
    if d.layer(t).is_empty() {
        return None;
    }
    let world = &inst.world;
    let goal = inst.goals[i];
    let parents = d.candidate_parents(p, t, world);
    let children = d.candidate_children(p, t, world);
    let layer: Vec<usize> = d.layer(t).to_vec();
    for v in layer {
        let q = d.vertex(v).pos;
        if q.distance(p) > delta {
            continue;
        }
        let (qp, qc) = (d.vertex(v).parents(), d.vertex(v).children());
        if qp == parents.as_slice() && qc == children.as_slice() {
            if p.distance(goal) < q.distance(goal) {
                d.relocate(v, p, None, None);
                return Some(p);
            }
            return Some(q);
        }
        if is_subset(&parents, qp) && is_subset(&children, qc) {
            return Some(q);
        }
        if is_subset(qp, &parents) && is_subset(qc, &children) {
            d.relocate(v, p, Some(parents), Some(children));
            return Some(p);
        }
    }
    None
}

/// Build one timed roadmap per agent.
pub fn construct_ctrms(inst: &ProblemInstance, model: &CvaeModel, params: &CtrmParams, rng: &mut Rng) -> CtrmBuild {
    assert_eq!(
        params.features.fov_len(),
        model.cfg.fov_len,
        "feature configuration does not match the model"
    );
    let n = inst.num_agents();
    let ctx = FeatureContext::new(inst, params.features);
    let mut roadmaps: Vec<TimedRoadmap> =
        (0..n).map(|i| TimedRoadmap::new(i, inst.agents[i], inst.starts[i])).collect();
    let mut makespan = 0;
    let mut completed = 0;
    for _ in 0..params.n_traj {
        let mut table = LocationTable::new(&inst.starts);
        let mut reached: Vec<bool> = (0..n).map(|i| near_goal(inst, i, inst.starts[i])).collect();
        for t in 1..params.t_max {
            let proposals = sample_layer(inst, &ctx, t, &table, model, params, makespan, &reached, rng);
            let layer: Vec<Point2> = proposals
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    let d = &mut roadmaps[i];
                    let delta = params.merge_fraction * inst.agents[i].max_speed;
                    find_compatible_vertex(inst, t, i, p, d, delta).unwrap_or_else(|| {
                        d.insert(p, t, &inst.world);
                        p
                    })
                })
                .collect();
            for (i, &p) in layer.iter().enumerate() {
                reached[i] = reached[i] || near_goal(inst, i, p);
            }
            table.push(layer);
            if check_reachability_to_goals(inst, t, &table) {
                makespan = makespan.max(t + 1);
                completed += 1;
                break;
            }
        }
    }
    for (i, d) in roadmaps.iter_mut().enumerate() {
        for t in 1..=makespan {
            if d.find_at(inst.goals[i], t).next().is_none() {
                d.insert(inst.goals[i], t, &inst.world);
            }
        }
    }
    CtrmBuild { roadmaps, makespan, completed_passes: completed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AgentSpec, Obstacle, World};
    use crate::instance::{generate_seeded, Profile, Scenario, ScenarioConfig};
    use crate::neural::ModelConfig;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn agent() -> AgentSpec {
        AgentSpec::new(1.0 / 64.0, 1.0 / 32.0)
    }

    fn single(start: Point2, goal: Point2, world: World) -> ProblemInstance {
        ProblemInstance { scenario: None, seed: None, world, agents: vec![agent()], starts: vec![start], goals: vec![goal] }
    }

    fn small_features() -> FeatureConfig {
        FeatureConfig { grid_resolution: 32, fov_size: 3, neighbors: 4 }
    }

    fn model() -> CvaeModel {
        CvaeModel::new(ModelConfig::new(small_features().fov_len()), &mut seeded(11))
    }

    #[test]
    fn schedule_endpoints() {
        let p = CtrmParams::new(25, small_features());
        assert_eq!(p.p_biased(0, 0, false), 0.0);
        assert!((p.p_biased(20, 20, false) - (1.0 - (-5f64).exp())).abs() < 1e-12);
        assert!((p.p_biased(64, 0, false) - 0.993_262_053).abs() < 1e-8);
        assert_eq!(p.p_biased(3, 20, true), 0.1);
        let no_walk = CtrmParams { random_walk: false, ..p };
        assert_eq!(no_walk.p_biased(0, 0, true), 1.0);
    }

    #[test]
    fn reachability_examples() {
        let inst = single(Point2::new(0.5, 0.5), Point2::new(0.52, 0.5), World::empty());
        let mut table = LocationTable::new(&inst.starts);
        assert!(check_reachability_to_goals(&inst, 0, &table));
        table.push(vec![Point2::new(0.3, 0.5)]);
        assert!(!check_reachability_to_goals(&inst, 1, &table));
        table.push(vec![inst.goals[0]]);
        assert!(check_reachability_to_goals(&inst, 2, &table));
    }

    #[test]
    fn boxed_in_agent_stays_put() {
        let c = Point2::new(0.5, 0.5);
        let ring = 2.0 / 64.0 + 1e-9;
        let obstacles = (0..16)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 16.0;
                Obstacle::new(c + Point2::new(ring * a.cos(), ring * a.sin()), 1.0 / 64.0)
            })
            .collect();
        let inst = single(c, Point2::new(0.9, 0.9), World::new(obstacles));
        let ctx = FeatureContext::new(&inst, small_features());
        let table = LocationTable::new(&inst.starts);
        let m = model();
        let params = CtrmParams { random_walk: false, ..CtrmParams::new(1, small_features()) };
        let mut rng = seeded(3);
        for _ in 0..50 {
            assert_eq!(sample_next_vertex(&inst, &ctx, 1, 0, &table, &m, &params, 0, false, &mut rng), c);
        }
    }

    #[test]
    fn adjacent_goal_terminates_first_pass() {
        let g = Point2::new(0.5, 0.5);
        let inst = single(g, g, World::empty());
        let build = construct_ctrms(&inst, &model(), &CtrmParams::new(1, small_features()), &mut seeded(0));
        assert_eq!(build.makespan, 2);
        assert_eq!(build.completed_passes, 1);
        let d = &build.roadmaps[0];
        assert_eq!(d.find_at(g, 1).count(), 1);
        assert_eq!(d.find_at(g, 2).count(), 1);
        assert_eq!(d.num_layers(), 3);
        d.check_consistency(&inst.world).unwrap();
    }

    #[test]
    fn merge_on_empty_layer_is_not_found() {
        let inst = single(Point2::new(0.5, 0.5), Point2::new(0.9, 0.5), World::empty());
        let mut d = TimedRoadmap::new(0, agent(), inst.starts[0]);
        assert_eq!(find_compatible_vertex(&inst, 1, 0, Point2::new(0.51, 0.5), &mut d, 0.003), None);
    }

    #[test]
    fn equal_structure_keeps_the_point_nearer_the_goal() {
        let inst = single(Point2::new(0.5, 0.5), Point2::new(0.9, 0.5), World::empty());
        let mut d = TimedRoadmap::new(0, agent(), inst.starts[0]);
        let q = Point2::new(0.51, 0.5);
        let v = d.insert(q, 1, &inst.world);
        let delta = agent().max_speed / 10.0;
        let p = Point2::new(0.51 + delta / 2.0, 0.5);
        assert_eq!(find_compatible_vertex(&inst, 1, 0, p, &mut d, delta), Some(p));
        assert_eq!(d.vertex(v).pos, p);
        assert_eq!(d.num_vertices(), 2);
        // Farther from the goal: the existing vertex wins untouched.
        let back = Point2::new(0.51 + delta / 4.0, 0.5);
        assert_eq!(find_compatible_vertex(&inst, 1, 0, back, &mut d, delta), Some(p));
        assert_eq!(d.vertex(v).pos, p);
    }

    #[test]
    fn richer_existing_vertex_is_reused() {
        let inst = single(Point2::new(0.5, 0.5), Point2::new(0.9, 0.5), World::empty());
        let k = agent().max_speed;
        let mut d = TimedRoadmap::new(0, agent(), inst.starts[0]);
        let far = d.insert(Point2::new(0.5 - 0.9 * k, 0.5), 1, &inst.world);
        let q = Point2::new(0.5 - 0.02 * k, 0.5);
        let v = d.insert(q, 2, &inst.world);
        // p sits slightly right of q: out of reach of `far`, which q reaches.
        let p = Point2::new(0.5 + 0.12 * k, 0.5);
        let (parents, children) = (d.candidate_parents(p, 2, &inst.world), d.candidate_children(p, 2, &inst.world));
        assert!(!parents.contains(&far) && d.vertex(v).parents().contains(&far));
        assert!(children.is_empty());
        let before = d.clone();
        assert_eq!(find_compatible_vertex(&inst, 2, 0, p, &mut d, 0.2 * k), Some(q));
        assert_eq!(d, before);
    }

    #[test]
    fn poorer_existing_vertex_is_rewritten() {
        let inst = single(Point2::new(0.5, 0.5), Point2::new(0.9, 0.5), World::empty());
        let k = agent().max_speed;
        let mut d = TimedRoadmap::new(0, agent(), inst.starts[0]);
        let far = d.insert(Point2::new(0.5 - 0.9 * k, 0.5), 1, &inst.world);
        d.insert(Point2::new(0.5 - 0.05 * k, 0.5), 1, &inst.world);
        let q = Point2::new(0.5 + 0.14 * k, 0.5);
        let v = d.insert(q, 2, &inst.world);
        assert!(!d.vertex(v).parents().contains(&far));
        let p = Point2::new(0.5 + 0.07 * k, 0.5);
        assert_eq!(find_compatible_vertex(&inst, 2, 0, p, &mut d, 0.1 * k), Some(p));
        assert_eq!(d.vertex(v).pos, p);
        assert!(d.vertex(v).parents().contains(&far));
        assert!(d.vertex(far).children().contains(&v));
        d.check_consistency(&inst.world).unwrap();
    }

    fn desk_instance(seed: u64) -> ProblemInstance {
        generate_seeded(&ScenarioConfig::new(Scenario::Basic, Profile::Desk), seed).unwrap()
    }

    #[test]
    fn roadmaps_are_consistent_and_compact() {
        let m = model();
        let params = CtrmParams::new(5, small_features());
        for seed in 0..3 {
            let inst = desk_instance(seed);
            let build = construct_ctrms(&inst, &m, &params, &mut seeded(seed));
            for d in &build.roadmaps {
                d.check_consistency(&inst.world).unwrap();
                for t in 0..d.num_layers() {
                    assert!(d.layer(t).len() <= params.n_traj + 1);
                }
                assert_eq!(d.vertex(d.start()).pos, inst.starts[d.owner]);
            }
            if build.status().is_ok() {
                for (i, d) in build.roadmaps.iter().enumerate() {
                    assert_eq!(d.num_layers(), build.makespan + 1);
                    assert_eq!(d.find_at(inst.goals[i], build.makespan).count(), 1);
                }
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let inst = desk_instance(4);
        let m = model();
        let params = CtrmParams::new(3, small_features());
        let a = construct_ctrms(&inst, &m, &params, &mut seeded(9));
        let b = construct_ctrms(&inst, &m, &params, &mut seeded(9));
        assert_eq!(a.roadmaps, b.roadmaps);
        assert_eq!(a.makespan, b.makespan);
    }

    #[test]
    fn incomplete_construction_has_no_goal_layers() {
        let inst = single(Point2::new(0.1, 0.1), Point2::new(0.9, 0.9), World::empty());
        let params = CtrmParams { t_max: 3, ..CtrmParams::new(2, small_features()) };
        let build = construct_ctrms(&inst, &model(), &params, &mut seeded(1));
        assert_eq!(build.status(), Err(CtrmError::ConstructionIncomplete));
        assert_eq!(build.roadmaps[0].find_at(inst.goals[0], 1).count(), 0);
    }

    /// Pairs `(u, w)` joined through some layer-`t` vertex.
    fn two_hops(d: &TimedRoadmap, t: usize) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = d
            .layer(t)
            .iter()
            .flat_map(|&v| {
                let tv = d.vertex(v);
                tv.parents().iter().flat_map(move |&u| tv.children().iter().map(move |&w| (u, w)))
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn merging_preserves_connectivity(
            seeds in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..12),
            px in -1.0f64..1.0, py in -1.0f64..1.0,
        ) {
            let inst = single(Point2::new(0.5, 0.5), Point2::new(0.9, 0.5), World::empty());
            let k = agent().max_speed;
            let mut d = TimedRoadmap::new(0, agent(), inst.starts[0]);
            for (n, &(x, y)) in seeds.iter().enumerate() {
                let t = 1 + n % 3;
                d.insert(Point2::new(0.5 + t as f64 * 0.5 * k * x, 0.5 + 0.5 * k * y), t, &inst.world);
            }
            let p = Point2::new(0.5 + k * px, 0.5 + 0.5 * k * py);
            let (edges, hops) = (d.num_edges(), two_hops(&d, 2));
            let delta = 0.3 * k;
            if let Some(q) = find_compatible_vertex(&inst, 2, 0, p, &mut d, delta) {
                prop_assert!(q.distance(p) <= delta);
                prop_assert!(d.find_at(q, 2).next().is_some());
            }
            d.check_consistency(&inst.world).unwrap();
            prop_assert!(d.num_edges() >= edges);
            let after = two_hops(&d, 2);
            prop_assert!(hops.iter().all(|h| after.binary_search(h).is_ok()));
        }
    }
}
