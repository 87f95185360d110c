use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::static_map::{StaticRoadmap, Terminal};
use super::timed::TimedRoadmap;
use crate::geometry::{AgentSpec, Point2};

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("malformed roadmap file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("inconsistent roadmap: {0}")]
    Invalid(String),
}

/// JSON form shared by timed and static roadmaps.
///
/// Static roadmaps have a single layer; timed roadmaps have one layer per
/// timestep and their edge indices count vertices across layers in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadmapDump {
    pub kind: String,
    /// Owning agent, or `None` for a shared roadmap.
    pub agent: Option<usize>,
    pub spec: AgentSpec,
    pub layers: Vec<Vec<[f64; 2]>>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminals: Vec<Terminal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled: Option<usize>,
}

impl From<&TimedRoadmap> for RoadmapDump {
    fn from(rm: &TimedRoadmap) -> Self {
        // Vertex ids are renumbered layer by layer.
        let mut index = vec![0usize; rm.num_vertices()];
        let mut layers = Vec::with_capacity(rm.num_layers());
        let mut next = 0;
        for t in 0..rm.num_layers() {
            let mut layer = Vec::new();
            for &v in rm.layer(t) {
                index[v] = next;
                next += 1;
                layer.push(rm.vertex(v).pos.to_array());
            }
            layers.push(layer);
        }
        let mut edges: Vec<[usize; 2]> = rm
            .vertices()
            .iter()
            .enumerate()
            .flat_map(|(v, tv)| tv.children().iter().map(move |&c| (v, c)))
            .map(|(a, b)| [index[a], index[b]])
            .collect();
        edges.sort_unstable();
        RoadmapDump {
            kind: "timed".into(),
            agent: Some(rm.owner),
            spec: rm.agent,
            layers,
            edges,
            terminals: vec![],
            sampled: None,
        }
    }
}

impl From<&StaticRoadmap> for RoadmapDump {
    fn from(rm: &StaticRoadmap) -> Self {
        RoadmapDump {
            kind: "static".into(),
            agent: rm.owner,
            spec: rm.agent,
            layers: vec![rm.vertices.iter().map(|p| p.to_array()).collect()],
            edges: rm.edges().map(|(a, b)| [a, b]).collect(),
            terminals: rm.terminals.clone(),
            sampled: Some(rm.sampled),
        }
    }
}

impl RoadmapDump {
    pub fn into_timed(self) -> Result<TimedRoadmap, DumpError> {
        if self.kind != "timed" {
            return Err(DumpError::Invalid(format!("expected a timed roadmap, found `{}`", self.kind)));
        }
        let owner = self.agent.ok_or_else(|| DumpError::Invalid("timed roadmap without an owner".into()))?;
        let layers = self.layers.into_iter().map(|l| l.into_iter().map(Point2::from).collect()).collect();
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        TimedRoadmap::from_parts(owner, self.spec, layers, &edges).map_err(DumpError::Invalid)
    }

    pub fn into_static(self) -> Result<StaticRoadmap, DumpError> {
        if self.kind != "static" || self.layers.len() != 1 {
            return Err(DumpError::Invalid("expected a single-layer static roadmap".into()));
        }
        let vertices: Vec<Point2> = self.layers.into_iter().next().unwrap().into_iter().map(Point2::from).collect();
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        for t in &self.terminals {
            if t.start >= vertices.len() || t.goal >= vertices.len() {
                return Err(DumpError::Invalid(format!("terminal of agent {} out of range", t.agent)));
            }
        }
        let sampled = self.sampled.unwrap_or(vertices.len() - 2 * self.terminals.len());
        StaticRoadmap::from_parts(self.agent, self.spec, vertices, &edges, self.terminals, sampled)
            .map_err(DumpError::Invalid)
    }
}

/// A roadmap file: every roadmap built for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadmapSetFile {
    pub method: String,
    #[serde(default)]
    pub config: serde_json::Value,
    pub roadmaps: Vec<RoadmapDump>,
    /// `assignment[i]` is the index of the roadmap agent `i` plans on.
    pub assignment: Vec<usize>,
}

impl RoadmapSetFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("roadmap dumps always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, DumpError> {
        let f: RoadmapSetFile = serde_json::from_str(text)?;
        if let Some(&bad) = f.assignment.iter().find(|&&a| a >= f.roadmaps.len()) {
            return Err(DumpError::Invalid(format!("assignment points at missing roadmap {bad}")));
        }
        Ok(f)
    }
}
