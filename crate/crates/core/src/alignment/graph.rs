use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::Vector3;

use super::{AlignmentOptions, SubmapLink, UnionFind};
use crate::builder::{FramePose, Submap};
use crate::lie::{sim3_log, Sim3State, Sim3Tangent, Sim3Transform};
use crate::map::{GlobalMap, MapLandmark, TrajectoryEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct SubmapNode {
    pub submap: u32,
    /// Maps submap coordinates into the global frame.
    pub state: Sim3State,
    pub fixed: bool,
    pub component: usize,
    /// Submap id of the component's gauge anchor.
    pub anchor: u32,
    pub frame_poses: Vec<FramePose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkNode {
    pub position: Vector3<f64>,
    /// `(submap id, landmark id)` of every merged local copy.
    pub members: Vec<(u32, u64)>,
    pub truth_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationEdge {
    pub node: usize,
    pub landmark: usize,
    pub local: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<SubmapNode>,
    pub landmarks: Vec<LandmarkNode>,
    pub edges: Vec<ObservationEdge>,
    pub component_count: usize,
    pub link_count: usize,
}

impl PoseGraph {
    /// Submap and landmark nodes.
    pub fn node_count(&self) -> usize {
        self.nodes.len() + self.landmarks.len()
    }

    /// Observation edges plus one scale prior per submap.
    pub fn edge_count(&self) -> usize {
        self.edges.len() + self.nodes.len()
    }

    pub fn merged_landmark_count(&self) -> usize {
        self.landmarks.iter().filter(|l| l.members.len() > 1).count()
    }

    pub fn node_index(&self, submap: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.submap == submap)
    }

    pub fn transform(&self, submap: u32) -> Option<Sim3Transform> {
        self.node_index(submap).map(|i| self.nodes[i].state.group)
    }

    /// Edge indices grouped by landmark.
    pub(crate) fn edges_by_landmark(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.landmarks.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            out[edge.landmark].push(e);
        }
        out
    }
}

pub(crate) fn state_from_group(g: Sim3Transform) -> Sim3State {
    let tangent = sim3_log(&g).unwrap_or(Sim3Tangent::new(Vector3::zeros(), Vector3::zeros(), g.scale.ln()));
    Sim3State { group: g, tangent }
}

/// `ρ(e) = e²` for `e ≤ δ`, `2δe − δ²` beyond.
pub fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        e * e
    } else {
        2.0 * delta * e - delta * delta
    }
}

pub fn build_pose_graph(submaps: &[&Submap], links: &[SubmapLink], opts: &AlignmentOptions) -> PoseGraph {
    build_pose_graph_warm(submaps, links, opts, &HashMap::new())
}

/// Like [`build_pose_graph`], starting nodes from `initial` (submap id to
/// `(anchor id, transform)`) when their component keeps the same anchor.
pub fn build_pose_graph_warm(
    submaps: &[&Submap],
    links: &[SubmapLink],
    opts: &AlignmentOptions,
    initial: &HashMap<u32, (u32, Sim3Transform)>,
) -> PoseGraph {
    let mut order: Vec<&Submap> = submaps.to_vec();
    order.sort_by_key(|s| s.id);
    order.dedup_by_key(|s| s.id);
    let index: HashMap<u32, usize> = order.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let links: Vec<&SubmapLink> = links
        .iter()
        .filter(|l| l.a != l.b && index.contains_key(&l.a) && index.contains_key(&l.b))
        .collect();

    let mut uf = UnionFind::new(order.len());
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); order.len()];
    for (li, l) in links.iter().enumerate() {
        let (a, b) = (index[&l.a], index[&l.b]);
        uf.union(a, b);
        adjacency[a].push((b, li));
        adjacency[b].push((a, li));
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    let components = uf.groups();

    // Chain relative transforms outward from each anchor.
    let mut transforms = vec![Sim3Transform::identity(); order.len()];
    let mut component_of = vec![0; order.len()];
    let mut anchor_of = vec![0u32; order.len()];
    for (c, members) in components.iter().enumerate() {
        let anchor = members[0];
        let anchor_id = order[anchor].id;
        let mut seen = vec![false; order.len()];
        let mut queue = VecDeque::from([anchor]);
        seen[anchor] = true;
        while let Some(u) = queue.pop_front() {
            component_of[u] = c;
            anchor_of[u] = anchor_id;
            for &(v, li) in &adjacency[u] {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                let l = links[li];
                // x_b = T x_a, so G_b = G_a ∘ T⁻¹ and G_a = G_b ∘ T.
                transforms[v] = match initial.get(&order[v].id) {
                    Some(&(a, g)) if a == anchor_id => g,
                    _ if order[u].id == l.a => l.relative.inverse().compose(&transforms[u]),
                    _ => l.relative.compose(&transforms[u]),
                };
                queue.push_back(v);
            }
        }
    }

    // Merge linked landmarks.
    let mut keys: Vec<(usize, u64)> = Vec::new();
    let mut key_index: HashMap<(u32, u64), usize> = HashMap::new();
    for (n, s) in order.iter().enumerate() {
        for &id in s.landmarks.keys() {
            key_index.insert((s.id, id), keys.len());
            keys.push((n, id));
        }
    }
    let mut lf = UnionFind::new(keys.len());
    for l in &links {
        for c in &l.correspondences {
            if let (Some(&x), Some(&y)) = (key_index.get(&(l.a, c.id_a)), key_index.get(&(l.b, c.id_b))) {
                lf.union(x, y);
            }
        }
    }
    let mut landmarks = Vec::new();
    let mut edges = Vec::new();
    for group in lf.groups() {
        let j = landmarks.len();
        let mut sum = Vector3::zeros();
        let mut members = Vec::with_capacity(group.len());
        for &k in &group {
            let (n, id) = keys[k];
            let local = order[n].landmarks[&id].position;
            sum += transforms[n].apply(&local);
            members.push((order[n].id, id));
            edges.push(ObservationEdge { node: n, landmark: j, local });
        }
        let (n0, id0) = keys[group[0]];
        landmarks.push(LandmarkNode {
            position: sum / group.len() as f64,
            members,
            truth_id: order[n0].landmarks[&id0].truth_id,
        });
    }

    let nodes = order
        .iter()
        .enumerate()
        .map(|(n, s)| SubmapNode {
            submap: s.id,
            state: state_from_group(transforms[n]),
            fixed: opts.fix_gauge && order[n].id == anchor_of[n],
            component: component_of[n],
            anchor: anchor_of[n],
            frame_poses: s.frame_poses.clone(),
        })
        .collect();
    PoseGraph {
        nodes,
        landmarks,
        edges,
        component_count: components.len(),
        link_count: links.len(),
    }
}

/// Robust alignment cost: Huber on every observation residual norm plus the
/// quadratic scale prior `(λ_a μ_i)²` on every submap.
pub fn evaluate_cost(graph: &PoseGraph, opts: &AlignmentOptions) -> f64 {
    let mut cost = 0.0;
    for e in &graph.edges {
        let r = graph.nodes[e.node].state.group.apply(&e.local) - graph.landmarks[e.landmark].position;
        cost += huber(r.norm(), opts.huber_delta);
    }
    // With no prior the zero-scale configuration (μ = −∞) must cost nothing.
    if opts.lambda_a > 0.0 {
        for n in &graph.nodes {
            cost += (opts.lambda_a * n.state.tangent.mu).powi(2);
        }
    }
    cost
}

/// Global landmark cloud and trajectory. Frames shared by consecutive
/// submaps keep the earliest relocalized estimate.
pub fn fuse_map(graph: &PoseGraph) -> GlobalMap {
    let landmarks = graph
        .landmarks
        .iter()
        .map(|l| MapLandmark {
            position: l.position,
            submap: l.members[0].0,
            truth_id: l.truth_id,
        })
        .collect();
    let mut frames: BTreeMap<u64, TrajectoryEntry> = BTreeMap::new();
    for n in &graph.nodes {
        for fp in &n.frame_poses {
            let entry = TrajectoryEntry {
                frame: fp.frame,
                pose: fp.pose.transformed_by(&n.state.group),
                submap: n.submap,
                relocalized: fp.relocalized,
            };
            match frames.get(&fp.frame) {
                Some(prev) if prev.relocalized || !entry.relocalized => {}
                _ => {
                    frames.insert(fp.frame, entry);
                }
            }
        }
    }
    GlobalMap {
        landmarks,
        trajectory: frames.into_values().collect(),
    }
}
