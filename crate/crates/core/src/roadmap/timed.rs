use crate::geometry::{in_free_space, valid_edge, AgentSpec, Point2, World};

pub type VertexId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct TimedVertex {
    pub pos: Point2,
    pub t: usize,
    parents: Vec<VertexId>,
    children: Vec<VertexId>,
}

impl TimedVertex {
    /// Sorted ids of the connected vertices at `t - 1`.
    pub fn parents(&self) -> &[VertexId] {
        &self.parents
    }

    /// Sorted ids of the connected vertices at `t + 1`.
    pub fn children(&self) -> &[VertexId] {
        &self.children
    }
}

/// Directed acyclic graph of `(position, timestep)` vertices for one agent.
/// Edges only run from layer `t` to layer `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedRoadmap {
    pub owner: usize,
    pub agent: AgentSpec,
    vertices: Vec<TimedVertex>,
    layers: Vec<Vec<VertexId>>,
}

impl TimedRoadmap {
    /// A roadmap holding only the start vertex at `t = 0`.
    pub fn new(owner: usize, agent: AgentSpec, start: Point2) -> Self {
        Self {
            owner,
            agent,
            vertices: vec![TimedVertex { pos: start, t: 0, parents: vec![], children: vec![] }],
            layers: vec![vec![0]],
        }
    }

    pub fn start(&self) -> VertexId {
        0
    }

    pub fn vertex(&self, id: VertexId) -> &TimedVertex {
        &self.vertices[id]
    }

    pub fn vertices(&self) -> &[TimedVertex] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.vertices.iter().map(|v| v.children.len()).sum()
    }

    /// Number of layers, i.e. one past the largest timestep.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, t: usize) -> &[VertexId] {
        self.layers.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Layer-`t - 1` vertices with a valid edge into `p`.
    pub fn candidate_parents(&self, p: Point2, t: usize, world: &World) -> Vec<VertexId> {
        if t == 0 {
            return vec![];
        }
        let mut out: Vec<VertexId> = self
            .layer(t - 1)
            .iter()
            .copied()
            .filter(|&u| valid_edge(self.vertices[u].pos, p, &self.agent, world))
            .collect();
        out.sort_unstable();
        out
    }

    /// Layer-`t + 1` vertices reachable from `p`.
    pub fn candidate_children(&self, p: Point2, t: usize, world: &World) -> Vec<VertexId> {
        let mut out: Vec<VertexId> = self
            .layer(t + 1)
            .iter()
            .copied()
            .filter(|&w| valid_edge(p, self.vertices[w].pos, &self.agent, world))
            .collect();
        out.sort_unstable();
        out
    }

    /// Add `(p, t)` and wire it to every valid parent and child.
    pub fn insert(&mut self, p: Point2, t: usize, world: &World) -> VertexId {
        let parents = self.candidate_parents(p, t, world);
        let children = self.candidate_children(p, t, world);
        self.insert_with(p, t, parents, children)
    }

    pub(crate) fn insert_with(
        &mut self,
        p: Point2,
        t: usize,
        parents: Vec<VertexId>,
        children: Vec<VertexId>,
    ) -> VertexId {
        let id = self.vertices.len();
        while self.layers.len() <= t {
            self.layers.push(Vec::new());
        }
        for &u in &parents {
            insert_sorted(&mut self.vertices[u].children, id);
        }
        for &w in &children {
            insert_sorted(&mut self.vertices[w].parents, id);
        }
        self.vertices.push(TimedVertex { pos: p, t, parents, children });
        self.layers[t].push(id);
        id
    }

    /// Move vertex `id` to `p`, optionally replacing its edge sets.
    ///
    /// Replacement sets must be supersets of the current ones; the merge
    /// step only ever grows connectivity.
    pub(crate) fn relocate(
        &mut self,
        id: VertexId,
        p: Point2,
        parents: Option<Vec<VertexId>>,
        children: Option<Vec<VertexId>>,
    ) {
        self.vertices[id].pos = p;
        if let Some(ps) = parents {
            for &u in &ps {
                insert_sorted(&mut self.vertices[u].children, id);
            }
            self.vertices[id].parents = ps;
        }
        if let Some(cs) = children {
            for &w in &cs {
                insert_sorted(&mut self.vertices[w].parents, id);
            }
            self.vertices[id].children = cs;
        }
    }

    /// Rebuild from explicit layers and edges (used when loading dumps).
    pub(crate) fn from_parts(
        owner: usize,
        agent: AgentSpec,
        layers: Vec<Vec<Point2>>,
        edges: &[(VertexId, VertexId)],
    ) -> Result<Self, String> {
        let mut vertices = Vec::new();
        let mut layer_ids = Vec::new();
        for (t, layer) in layers.into_iter().enumerate() {
            let mut ids = Vec::new();
            for p in layer {
                ids.push(vertices.len());
                vertices.push(TimedVertex { pos: p, t, parents: vec![], children: vec![] });
            }
            layer_ids.push(ids);
        }
        if layer_ids.first().map(Vec::len) != Some(1) {
            return Err("timed roadmap must have exactly one vertex at t = 0".into());
        }
        for &(a, b) in edges {
            if a >= vertices.len() || b >= vertices.len() || vertices[a].t + 1 != vertices[b].t {
                return Err(format!("edge ({a}, {b}) does not join consecutive layers"));
            }
            insert_sorted(&mut vertices[a].children, b);
            insert_sorted(&mut vertices[b].parents, a);
        }
        Ok(Self { owner, agent, vertices, layers: layer_ids })
    }

    /// Check that every vertex lies in free space and every edge is valid.
    pub fn check_consistency(&self, world: &World) -> Result<(), String> {
        for (id, v) in self.vertices.iter().enumerate() {
            if !in_free_space(v.pos, &self.agent, world) {
                return Err(format!("vertex {id} at t={} is not in free space", v.t));
            }
            for &c in &v.children {
                let w = &self.vertices[c];
                if w.t != v.t + 1 {
                    return Err(format!("edge {id}->{c} skips layers"));
                }
                if !valid_edge(v.pos, w.pos, &self.agent, world) {
                    return Err(format!("edge {id}->{c} at t={} is not locally plannable", v.t));
                }
                if !w.parents.contains(&id) {
                    return Err(format!("edge {id}->{c} missing from the parent list"));
                }
            }
        }
        Ok(())
    }

    /// Ids of vertices located exactly at `p` in layer `t`.
    pub fn find_at(&self, p: Point2, t: usize) -> impl Iterator<Item = VertexId> + '_ {
        self.layer(t).iter().copied().filter(move |&v| self.vertices[v].pos == p)
    }
}

fn insert_sorted(v: &mut Vec<VertexId>, id: VertexId) {
    if let Err(pos) = v.binary_search(&id) {
        v.insert(pos, id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Obstacle;
    use proptest::prelude::*;

    fn agent() -> AgentSpec {
        AgentSpec::new(1.0 / 64.0, 1.0 / 32.0)
    }

    #[test]
    fn insert_into_empty_layer_links_parents_only() {
        let w = World::empty();
        let mut d = TimedRoadmap::new(0, agent(), Point2::new(0.5, 0.5));
        let v = d.insert(Point2::new(0.51, 0.5), 1, &w);
        assert_eq!(d.vertex(v).parents(), &[0]);
        assert!(d.vertex(v).children().is_empty());
        assert_eq!(d.vertex(0).children(), &[v]);
    }

    #[test]
    fn duplicate_inserts_are_distinct_vertices() {
        let w = World::empty();
        let mut d = TimedRoadmap::new(0, agent(), Point2::new(0.5, 0.5));
        let a = d.insert(Point2::new(0.51, 0.5), 1, &w);
        let b = d.insert(Point2::new(0.51, 0.5), 1, &w);
        assert_ne!(a, b);
        assert_eq!(d.layer(1).len(), 2);
    }

    #[test]
    fn insert_wires_children_too() {
        let w = World::empty();
        let mut d = TimedRoadmap::new(0, agent(), Point2::new(0.5, 0.5));
        let c = d.insert(Point2::new(0.52, 0.5), 2, &w);
        assert!(d.vertex(c).parents().is_empty());
        let m = d.insert(Point2::new(0.51, 0.5), 1, &w);
        assert_eq!(d.vertex(m).parents(), &[0]);
        assert_eq!(d.vertex(m).children(), &[c]);
        assert_eq!(d.vertex(c).parents(), &[m]);
        d.check_consistency(&w).unwrap();
    }

    #[test]
    fn blocked_or_far_vertices_get_no_edges() {
        let w = World::new(vec![Obstacle::new(Point2::new(0.54, 0.5), 0.005)]);
        let mut d = TimedRoadmap::new(0, agent(), Point2::new(0.5, 0.5));
        let far = d.insert(Point2::new(0.6, 0.5), 1, &w);
        assert!(d.vertex(far).parents().is_empty());
        let behind = d.insert(Point2::new(0.5, 0.53), 1, &w);
        assert_eq!(d.vertex(behind).parents(), &[0]);
    }

    proptest! {
        #[test]
        fn inserts_keep_the_roadmap_consistent(
            pts in proptest::collection::vec((0.1f64..0.9, 0.1f64..0.9, 1usize..6), 1..60)
        ) {
            let w = World::new(vec![Obstacle::new(Point2::new(0.5, 0.5), 0.05)]);
            let mut d = TimedRoadmap::new(0, agent(), Point2::new(0.2, 0.2));
            for (x, y, t) in pts {
                let p = Point2::new(x, y);
                if in_free_space(p, &d.agent, &w) {
                    d.insert(p, t, &w);
                }
            }
            prop_assert!(d.check_consistency(&w).is_ok());
            for v in d.vertices() {
                for &c in v.children() {
                    prop_assert!(d.vertex(c).t == v.t + 1);
                }
            }
        }
    }
}
