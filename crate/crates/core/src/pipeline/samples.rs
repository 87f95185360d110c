use std::io::{Read, Write};

use super::demos::Demonstration;
use super::PipelineError;
use crate::features::{indicator_truth, sample_weight, turn_angle, FeatureConfig, FeatureContext, Indicator, RawFeature, WEIGHT_GAMMA};
use crate::geometry::Point2;
use crate::neural::{motion_target, Sample};
use crate::par::{self, Execution};
use crate::planner::arrival_time;

const MAGIC: &[u8; 8] = b"CTRMSMP1";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub fov_len: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

fn demo_samples(d: &Demonstration, cfg: FeatureConfig, gamma: f64) -> Vec<Sample> {
    let inst = &d.instance;
    let sol = &d.solution;
    let ctx = FeatureContext::new(inst, cfg);
    let n = inst.num_agents();
    let arrivals: Vec<usize> = (0..n).map(|i| arrival_time(&sol.paths[i], inst.goals[i])).collect();
    let horizon = arrivals.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for t in 0..horizon {
        let current: Vec<Point2> = (0..n).map(|j| sol.position(j, t)).collect();
        let previous: Vec<Point2> = (0..n).map(|j| sol.position(j, t.saturating_sub(1))).collect();
        let fovs: Vec<Vec<u8>> = (0..n).map(|j| ctx.fov_bits(j, current[j])).collect();
        for i in (0..n).filter(|&i| t < arrivals[i]) {
            let (here, next, goal) = (current[i], sol.position(i, t + 1), inst.goals[i]);
            out.push(Sample {
                x: ctx.extract_with(inst, i, &current, &previous, &fovs),
                y: motion_target(next - here),
                weight: sample_weight(turn_angle(here, next, goal), gamma),
                ind: indicator_truth(here, next, goal),
            });
        }
    }
    out
}

/// One record per agent and timestep before the agent's arrival.
pub fn extract_training_samples(demos: &[Demonstration], cfg: FeatureConfig, exec: Execution) -> Vec<Sample> {
    par::map(exec, demos, |d| demo_samples(d, cfg, WEIGHT_GAMMA)).into_iter().flatten().collect()
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_record(w: &mut impl Write, s: &Sample) -> std::io::Result<()> {
    let x = s.x.flatten();
    w.write_all(&(x.len() as u32).to_le_bytes())?;
    for v in &x {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in s.y.iter().chain([&s.weight]) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[s.ind.index() as u8])
}

/// Little-endian: magic, fov length, train and validation counts, then
/// `(len, x[len] as f32, y[3], w as f64, indicator as u8)` per record.
pub fn write_samples(w: &mut impl Write, set: &SampleSet) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u64(w, set.fov_len as u64)?;
    put_u64(w, set.train.len() as u64)?;
    put_u64(w, set.val.len() as u64)?;
    for s in set.train.iter().chain(&set.val) {
        put_record(w, s)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        if self.buf.len() < n {
            return Err(PipelineError::Samples("truncated file".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn record(&mut self, fov_len: usize) -> Result<Sample, PipelineError> {
        let len = self.u32()? as usize;
        let x: Vec<f32> =
            self.take(4 * len)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let x = RawFeature::unflatten(&x, fov_len).map_err(PipelineError::Samples)?;
        let y = [self.f64()?, self.f64()?, self.f64()?];
        let weight = self.f64()?;
        let ind = self.take(1)?[0] as usize;
        if ind > 2 {
            return Err(PipelineError::Samples(format!("indicator {ind} out of range")));
        }
        Ok(Sample { x, y, weight, ind: Indicator::from_index(ind) })
    }
}

pub fn read_samples(r: &mut impl Read) -> Result<SampleSet, PipelineError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf };
    if c.take(8)? != MAGIC {
        return Err(PipelineError::Samples("bad magic".into()));
    }
    let fov_len = c.u64()? as usize;
    let n_train = c.u64()? as usize;
    let n_val = c.u64()? as usize;
    let mut all = Vec::with_capacity(n_train + n_val);
    for _ in 0..n_train + n_val {
        all.push(c.record(fov_len)?);
    }
    if !c.buf.is_empty() {
        return Err(PipelineError::Samples("trailing bytes".into()));
    }
    let val = all.split_off(n_train);
    Ok(SampleSet { fov_len, train: all, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AgentSpec, World};
    use crate::instance::ProblemInstance;
    use crate::planner::Solution;

    fn demo(paths: Vec<Vec<Point2>>) -> Demonstration {
        let a = AgentSpec::new(1.0 / 64.0, 1.0 / 32.0);
        let n = paths.len();
        Demonstration {
            id: "d".into(),
            instance: ProblemInstance {
                scenario: None,
                seed: None,
                world: World::empty(),
                agents: vec![a; n],
                starts: paths.iter().map(|p| p[0]).collect(),
                goals: paths.iter().map(|p| *p.last().unwrap()).collect(),
            },
            solution: Solution { paths },
        }
    }

    fn cfg() -> FeatureConfig {
        FeatureConfig { grid_resolution: 32, fov_size: 3, neighbors: 4 }
    }

    #[test]
    fn straight_mover_has_zero_weights() {
        let d = demo(vec![(0..5).map(|s| Point2::new(0.2 + 0.03 * s as f64, 0.5)).collect()]);
        let s = extract_training_samples(&[d], cfg(), Execution::Sequential);
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|r| r.weight.abs() < 1e-12 && r.ind == Indicator::Straight));
        assert!((s[0].y[0] - 0.03 * 32.0).abs() < 1e-12);
    }

    #[test]
    fn record_count_is_sum_of_arrivals() {
        let g = Point2::new(0.8, 0.8);
        let d = demo(vec![
            (0..4).map(|s| Point2::new(0.2 + 0.03 * s as f64, 0.2)).collect(),
            vec![Point2::new(0.75, 0.8), Point2::new(0.77, 0.8), g, g, g],
        ]);
        assert_eq!(extract_training_samples(&[d], cfg(), Execution::Sequential).len(), 3 + 2);
    }

    #[test]
    fn dodge_has_positive_weight() {
        let p = vec![Point2::new(0.2, 0.5), Point2::new(0.21, 0.525), Point2::new(0.23, 0.5), Point2::new(0.26, 0.5)];
        let s = extract_training_samples(&[demo(vec![p])], cfg(), Execution::Sequential);
        assert!(s[0].weight > 0.9);
        assert_eq!(s[0].ind, Indicator::TurnCounterClockwise);
        assert_eq!(s[1].ind, Indicator::TurnClockwise);
        assert!(s[2].weight < 1e-12);
    }

    #[test]
    fn sample_file_round_trip() {
        let d = demo(vec![
            (0..4).map(|s| Point2::new(0.2 + 0.03 * s as f64, 0.2)).collect(),
            vec![Point2::new(0.75, 0.8), Point2::new(0.77, 0.8), Point2::new(0.8, 0.8)],
        ]);
        let all = extract_training_samples(&[d], cfg(), Execution::Sequential);
        let set = SampleSet { fov_len: cfg().fov_len(), train: all[..3].to_vec(), val: all[3..].to_vec() };
        let mut bytes = Vec::new();
        write_samples(&mut bytes, &set).unwrap();
        let back = read_samples(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, set);
        bytes.pop();
        assert!(read_samples(&mut bytes.as_slice()).is_err());
    }
}
