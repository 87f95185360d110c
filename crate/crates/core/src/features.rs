//! Raw per-agent observations feeding the CVAE condition vector.
//!
//! The trainable parts (environment embeddings, attention, indicator
//! prediction) live in [`crate::neural`]; this module produces the fixed
//! numeric inputs those networks consume and the Eq.(1)-style aggregation.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::gridmap::{build_occupancy, cost_to_go_lenient, extract_fov, CostToGoField, OccupancyGrid};
use crate::instance::ProblemInstance;

/// Lengths enter the networks in units of the base speed.
pub const LENGTH_SCALE: f64 = 32.0;
pub const DEFAULT_NEIGHBORS: usize = 15;
pub const SELF_SCALARS: usize = 8;
pub const NEIGHBOR_SCALARS: usize = 11;
pub const WEIGHT_GAMMA: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEncoding {
    pub magnitude: f64,
    pub direction: Point2,
}

impl MotionEncoding {
    pub fn to_array(self, scale: f64) -> [f64; 3] {
        [self.magnitude * scale, self.direction.x, self.direction.y]
    }

    /// Displacement `magnitude * direction`, renormalizing the direction.
    pub fn displacement(self) -> Point2 {
        let n = self.direction.norm();
        if n == 0.0 || !n.is_finite() {
            Point2::ZERO
        } else {
            self.direction * (self.magnitude.max(0.0) / n)
        }
    }
}

/// `xi(v) = [|v|, v / |v|]`, with a zero direction for the null vector.
pub fn xi(v: Point2) -> MotionEncoding {
    let m = v.norm();
    let direction = if m > 0.0 { v * (1.0 / m) } else { Point2::ZERO };
    MotionEncoding { magnitude: m, direction }
}

/// Coarse turn of the next motion relative to the goal bearing.
///
/// Bins follow the sine of the signed angle from the goal direction to the
/// motion: `[-1, -1/3]`, `(-1/3, 1/3]`, `(1/3, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Indicator {
    TurnClockwise,
    Straight,
    TurnCounterClockwise,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::TurnClockwise, Indicator::Straight, Indicator::TurnCounterClockwise];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn from_sine(s: f64) -> Self {
        if s <= -1.0 / 3.0 {
            Indicator::TurnClockwise
        } else if s <= 1.0 / 3.0 {
            Indicator::Straight
        } else {
            Indicator::TurnCounterClockwise
        }
    }
}

/// Sine of the signed angle from `g - rho_t` to `rho_next - rho_t`; zero
/// when either vector vanishes.
pub fn turn_sine(rho_t: Point2, rho_next: Point2, goal: Point2) -> f64 {
    let a = xi(goal - rho_t).direction;
    let b = xi(rho_next - rho_t).direction;
    a.cross(b).clamp(-1.0, 1.0)
}

pub fn indicator_truth(rho_t: Point2, rho_next: Point2, goal: Point2) -> Indicator {
    Indicator::from_sine(turn_sine(rho_t, rho_next, goal))
}

/// Unsigned angle between the goal direction and the motion, `pi/2` when
/// either is zero.
pub fn turn_angle(rho_t: Point2, rho_next: Point2, goal: Point2) -> f64 {
    let a = goal - rho_t;
    let b = rho_next - rho_t;
    if a.norm_sq() == 0.0 || b.norm_sq() == 0.0 {
        return FRAC_PI_2;
    }
    a.cross(b).abs().atan2(a.dot(b))
}

/// `1 - exp(-gamma * delta^2)`.
pub fn sample_weight(delta: f64, gamma: f64) -> f64 {
    1.0 - (-gamma * delta * delta).exp()
}

/// The agent itself followed by up to `k` others, nearest first, ties by
/// lower index.
pub fn select_neighbors(i: usize, positions: &[Point2], k: usize) -> Vec<usize> {
    let me = positions[i];
    let mut others: Vec<(f64, usize)> =
        positions.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, p)| (p.distance(me), j)).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    std::iter::once(i).chain(others.into_iter().take(k).map(|(_, j)| j)).collect()
}

/// Attention weights `softmax_j(-|alpha_j - alpha_self|^2)`; entry 0 is the
/// self entry.
pub fn attention_weights(alphas: &[&[f64]]) -> Vec<f64> {
    let me = alphas[0];
    let scores: Vec<f64> =
        alphas.iter().map(|a| -a.iter().zip(me).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).collect();
    crate::neural::softmax_vec(&scores)
}

/// `sum_j w_j m_j` over the neighbor entries, entry 0 being the agent itself.
pub fn comm_aggregate(alphas: &[&[f64]], messages: &[&[f64]]) -> Vec<f64> {
    assert_eq!(alphas.len(), messages.len());
    let w = attention_weights(alphas);
    let mut out = vec![0.0; messages[0].len()];
    for (wj, m) in w.iter().zip(messages) {
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += wj * v;
        }
    }
    out
}

/// `[x_goal; x_comm; x_ind]`.
pub fn compose(x_goal: &[f64], x_comm: &[f64], x_ind: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x_goal.len() + x_comm.len() + x_ind.len());
    v.extend_from_slice(x_goal);
    v.extend_from_slice(x_comm);
    v.extend_from_slice(x_ind);
    v
}

/// Observation of one neighbor `j` seen from agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRaw {
    /// `xi(rho_j - rho_i)`, `xi(rho_j_prev - rho_i)`, `xi(g_j - rho_i)`, `r_j`, `k_j`.
    pub scalars: [f32; NEIGHBOR_SCALARS],
    /// Occupancy then closer-to-goal bits of `j`'s field of view.
    pub fov: Vec<u8>,
}

/// Everything the networks need for one agent at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeature {
    /// `xi(g - rho)`, `xi(rho_prev - rho)`, `r`, `k`.
    pub self_scalars: [f32; SELF_SCALARS],
    /// The first entry is the agent itself.
    pub neighbors: Vec<NeighborRaw>,
}

impl RawFeature {
    pub fn self_fov(&self) -> &[u8] {
        &self.neighbors[0].fov
    }

    /// Flat float layout: self scalars, neighbor count, then per neighbor its
    /// scalars followed by its map bits.
    pub fn flatten(&self) -> Vec<f32> {
        let fov = self.neighbors[0].fov.len();
        let mut out = Vec::with_capacity(SELF_SCALARS + 1 + self.neighbors.len() * (NEIGHBOR_SCALARS + fov));
        out.extend_from_slice(&self.self_scalars);
        out.push(self.neighbors.len() as f32);
        for n in &self.neighbors {
            out.extend_from_slice(&n.scalars);
            out.extend(n.fov.iter().map(|&b| b as f32));
        }
        out
    }

    pub fn unflatten(x: &[f32], fov_len: usize) -> Result<Self, String> {
        if x.len() < SELF_SCALARS + 1 {
            return Err("feature record too short".into());
        }
        let mut self_scalars = [0f32; SELF_SCALARS];
        self_scalars.copy_from_slice(&x[..SELF_SCALARS]);
        let n = x[SELF_SCALARS] as usize;
        let stride = NEIGHBOR_SCALARS + fov_len;
        if n == 0 || x.len() != SELF_SCALARS + 1 + n * stride {
            return Err(format!("feature record of length {} does not hold {n} neighbors", x.len()));
        }
        let neighbors = x[SELF_SCALARS + 1..]
            .chunks_exact(stride)
            .map(|c| {
                let mut scalars = [0f32; NEIGHBOR_SCALARS];
                scalars.copy_from_slice(&c[..NEIGHBOR_SCALARS]);
                NeighborRaw { scalars, fov: c[NEIGHBOR_SCALARS..].iter().map(|&v| (v != 0.0) as u8).collect() }
            })
            .collect();
        Ok(Self { self_scalars, neighbors })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub grid_resolution: usize,
    pub fov_size: usize,
    pub neighbors: usize,
}

impl FeatureConfig {
    pub fn desk() -> Self {
        Self { grid_resolution: 64, fov_size: 11, neighbors: DEFAULT_NEIGHBORS }
    }

    pub fn paper() -> Self {
        Self { grid_resolution: 160, fov_size: 19, neighbors: DEFAULT_NEIGHBORS }
    }

    pub fn fov_len(&self) -> usize {
        2 * self.fov_size * self.fov_size
    }
}

/// Per-instance grids and cost-to-go fields, built once and shared by every
/// feature extraction on that instance.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub cfg: FeatureConfig,
    grids: Vec<OccupancyGrid>,
    grid_of: Vec<usize>,
    fields: Vec<CostToGoField>,
}

impl FeatureContext {
    pub fn new(inst: &ProblemInstance, cfg: FeatureConfig) -> Self {
        let mut grids: Vec<OccupancyGrid> = Vec::new();
        let mut radii: Vec<f64> = Vec::new();
        let mut grid_of = Vec::with_capacity(inst.num_agents());
        for a in &inst.agents {
            let idx = match radii.iter().position(|&r| r == a.radius) {
                Some(k) => k,
                None => {
                    radii.push(a.radius);
                    grids.push(build_occupancy(&inst.world, a, cfg.grid_resolution));
                    grids.len() - 1
                }
            };
            grid_of.push(idx);
        }
        let fields = inst.goals.iter().zip(&grid_of).map(|(&g, &k)| cost_to_go_lenient(&grids[k], g)).collect();
        Self { cfg, grids, grid_of, fields }
    }

    pub fn fov_bits(&self, agent: usize, pos: Point2) -> Vec<u8> {
        let maps = extract_fov(&self.grids[self.grid_of[agent]], &self.fields[agent], pos, self.cfg.fov_size);
        maps.occupancy.iter().chain(&maps.closer_to_goal).map(|&b| b as u8).collect()
    }

    /// Raw observation of agent `i` given everyone's current and previous
    /// positions (`previous = current` at the first timestep).
    pub fn extract(&self, inst: &ProblemInstance, i: usize, current: &[Point2], previous: &[Point2]) -> RawFeature {
        let fovs: Vec<Vec<u8>> = (0..inst.num_agents()).map(|j| self.fov_bits(j, current[j])).collect();
        self.extract_with(inst, i, current, previous, &fovs)
    }

    /// Same as [`Self::extract`] with the per-agent maps precomputed.
    pub fn extract_with(
        &self,
        inst: &ProblemInstance,
        i: usize,
        current: &[Point2],
        previous: &[Point2],
        fovs: &[Vec<u8>],
    ) -> RawFeature {
        let s = LENGTH_SCALE;
        let me = current[i];
        let mut self_scalars = [0f32; SELF_SCALARS];
        let vals = [
            xi(inst.goals[i] - me).to_array(s),
            xi(previous[i] - me).to_array(s),
        ];
        for (k, v) in vals.iter().flatten().enumerate() {
            self_scalars[k] = *v as f32;
        }
        self_scalars[6] = (inst.agents[i].radius * s) as f32;
        self_scalars[7] = (inst.agents[i].max_speed * s) as f32;

        let neighbors = select_neighbors(i, current, self.cfg.neighbors)
            .into_iter()
            .map(|j| {
                let mut scalars = [0f32; NEIGHBOR_SCALARS];
                let vals = [
                    xi(current[j] - me).to_array(s),
                    xi(previous[j] - me).to_array(s),
                    xi(inst.goals[j] - me).to_array(s),
                ];
                for (k, v) in vals.iter().flatten().enumerate() {
                    scalars[k] = *v as f32;
                }
                scalars[9] = (inst.agents[j].radius * s) as f32;
                scalars[10] = (inst.agents[j].max_speed * s) as f32;
                NeighborRaw { scalars, fov: fovs[j].clone() }
            })
            .collect();
        RawFeature { self_scalars, neighbors }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_seeded, Profile, Scenario, ScenarioConfig};
    use proptest::prelude::*;

    #[test]
    fn xi_examples() {
        let e = xi(Point2::new(3e-2, 4e-2));
        assert!((e.magnitude - 5e-2).abs() < 1e-15);
        assert!((e.direction.x - 0.6).abs() < 1e-12 && (e.direction.y - 0.8).abs() < 1e-12);
        assert_eq!(xi(Point2::ZERO), MotionEncoding { magnitude: 0.0, direction: Point2::ZERO });
        let e = xi(Point2::new(-1e-2, 0.0));
        assert_eq!(e.direction, Point2::new(-1.0, 0.0));
        assert!((e.magnitude - 1e-2).abs() < 1e-18);
    }

    #[test]
    fn neighbor_selection() {
        let pts = vec![Point2::new(0.5, 0.5), Point2::new(0.6, 0.5)];
        assert_eq!(select_neighbors(0, &pts, 15), vec![0, 1]);
        let many: Vec<Point2> = (0..30).map(|k| Point2::new(k as f64 / 32.0, 0.3)).collect();
        let n = select_neighbors(10, &many, 15);
        assert_eq!(n.len(), 16);
        assert_eq!(n[0], 10);
        // Agents 9 and 11 are equidistant; the lower index comes first.
        assert_eq!(&n[1..3], &[9, 11]);
    }

    #[test]
    fn attention_examples() {
        let a = [0.3, -0.2];
        assert_eq!(attention_weights(&[&a]), vec![1.0]);
        let m = [1.0, 2.0, 3.0];
        assert_eq!(comm_aggregate(&[&a], &[&m]), m.to_vec());
        let w = attention_weights(&[&a, &a]);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let w = attention_weights(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, -2.0]]);
        assert!(w[0] > w[1] && w[0] > w[2]);
    }

    #[test]
    fn indicator_examples() {
        let rho = Point2::new(0.5, 0.5);
        let g = Point2::new(0.9, 0.5);
        assert_eq!(indicator_truth(rho, Point2::new(0.52, 0.5), g), Indicator::Straight);
        assert_eq!(indicator_truth(rho, Point2::new(0.5, 0.52), g), Indicator::TurnCounterClockwise);
        assert_eq!(indicator_truth(rho, Point2::new(0.5, 0.48), g), Indicator::TurnClockwise);
        assert_eq!(Indicator::from_sine(-1.0 / 3.0), Indicator::TurnClockwise);
        assert_eq!(Indicator::from_sine(1.0 / 3.0), Indicator::Straight);
        assert_eq!(indicator_truth(g, Point2::new(0.91, 0.5), g), Indicator::Straight);
    }

    #[test]
    fn weights() {
        assert_eq!(sample_weight(0.0, WEIGHT_GAMMA), 0.0);
        assert!((sample_weight(FRAC_PI_2, WEIGHT_GAMMA) - 1.0).abs() < 1e-50);
        let rho = Point2::new(0.5, 0.5);
        assert_eq!(turn_angle(rho, rho, Point2::new(0.9, 0.5)), FRAC_PI_2);
        assert_eq!(turn_angle(rho, Point2::new(0.52, 0.5), Point2::new(0.9, 0.5)), 0.0);
    }

    #[test]
    fn compose_layout() {
        let x = compose(&[1.0; 40], &[0.0; 32], &Indicator::Straight.one_hot());
        assert_eq!(x.len(), 75);
        assert_eq!(&x[72..], &[0.0, 1.0, 0.0]);
        assert!(x[40..72].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_feature_round_trip() {
        let inst = generate_seeded(&ScenarioConfig::new(Scenario::Basic, Profile::Desk), 3).unwrap();
        let ctx = FeatureContext::new(&inst, FeatureConfig::desk());
        let f = ctx.extract(&inst, 1, &inst.starts, &inst.starts);
        assert_eq!(f.neighbors.len(), inst.num_agents().min(16));
        assert_eq!(f.self_fov().len(), 242);
        // No history at the first timestep.
        assert_eq!(&f.self_scalars[3..6], &[0.0, 0.0, 0.0]);
        let back = RawFeature::unflatten(&f.flatten(), 242).unwrap();
        assert_eq!(back, f);
        assert!(RawFeature::unflatten(&f.flatten()[..20], 242).is_err());
    }

    proptest! {
        #[test]
        fn indicator_partitions(s in -1.0f64..=1.0) {
            let hits = Indicator::ALL.iter().filter(|&&b| Indicator::from_sine(s) == b).count();
            prop_assert_eq!(hits, 1);
        }

        #[test]
        fn xi_is_finite(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let e = xi(Point2::new(x, y));
            prop_assert!(e.magnitude.is_finite() && e.direction.is_finite());
            let n = e.direction.norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }

        #[test]
        fn attention_sums_to_one_and_is_permutation_invariant(
            alphas in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 10), 1..16),
            seed in any::<u64>(),
        ) {
            let messages: Vec<Vec<f64>> = alphas.iter().map(|a| a.iter().map(|v| v * 2.0 + 1.0).collect()).collect();
            let ar: Vec<&[f64]> = alphas.iter().map(Vec::as_slice).collect();
            let w = attention_weights(&ar);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            let base = comm_aggregate(&ar, &messages.iter().map(Vec::as_slice).collect::<Vec<_>>());
            // Shuffle everything except the self entry.
            let mut order: Vec<usize> = (1..alphas.len()).collect();
            let mut s = seed;
            for k in (1..order.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(k, (s >> 33) as usize % (k + 1));
            }
            order.insert(0, 0);
            let pa: Vec<&[f64]> = order.iter().map(|&k| alphas[k].as_slice()).collect();
            let pm: Vec<&[f64]> = order.iter().map(|&k| messages[k].as_slice()).collect();
            let permuted = comm_aggregate(&pa, &pm);
            for (a, b) in base.iter().zip(&permuted) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
