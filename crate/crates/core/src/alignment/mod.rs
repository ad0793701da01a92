//! Global alignment of submaps: inter-submap correspondences, a pose graph
//! over Sim(3) submap poses and merged landmarks, its robust least-squares
//! optimization, and fusion into one map.

mod graph;
mod optimize;
mod worker;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::Submap;
use crate::descriptor::{mutual_nearest, DescriptorMatrix};
use crate::lie::Sim3Transform;
use crate::multiview::{sim3_ransac, Correspondence3D3D, RansacConfig};

pub use graph::{build_pose_graph, build_pose_graph_warm, evaluate_cost, fuse_map, huber, LandmarkNode, ObservationEdge, PoseGraph, SubmapNode};
pub use optimize::{optimize_graph, OptimizationReport};
pub use worker::{alignment_worker, Aligner, MapSnapshot};

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("link {a}->{b} rejected: {inliers} inliers, {required} required")]
    LinkRejected { a: u32, b: u32, inliers: usize, required: usize },
    #[error("linear solve failed in component {component}")]
    LinearSolve { component: usize },
    #[error("alignment options: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    TemporalOverlap,
    LoopClosure,
}

/// Verified correspondence set between two submaps.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmapLink {
    pub a: u32,
    pub b: u32,
    /// Inliers only, `point_a`/`id_a` in submap `a`.
    pub correspondences: Vec<Correspondence3D3D>,
    /// Maps points of `a` onto `b`.
    pub relative: Sim3Transform,
    pub kind: LinkKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentOptions {
    /// Scene units of the submap frame.
    pub huber_delta: f64,
    pub lambda_a: f64,
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this
    /// fraction.
    pub function_tolerance: f64,
    pub min_link_inliers: usize,
    /// Sim(3) RANSAC threshold in units of the target submap.
    pub link_threshold: f64,
    pub link_iterations: usize,
    pub match_max_distance: f32,
    /// Place-recognition candidates verified per submap.
    pub loop_candidates: usize,
    pub loop_score_floor: f64,
    /// Hold the first submap of every component at the identity.
    pub fix_gauge: bool,
    pub seed: u64,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        Self {
            huber_delta: 0.5,
            lambda_a: 0.01,
            max_iterations: 50,
            function_tolerance: 1e-10,
            min_link_inliers: 12,
            link_threshold: 1.0,
            link_iterations: 1000,
            match_max_distance: 0.7,
            loop_candidates: 5,
            loop_score_floor: 0.1,
            fix_gauge: true,
            seed: 0,
        }
    }
}

impl AlignmentOptions {
    pub fn validate(&self) -> Result<(), AlignmentError> {
        let bad = |m: &str| Err(AlignmentError::Config(m.to_string()));
        // Zero is allowed so the unregularized objective can be inspected.
        if !(self.lambda_a >= 0.0 && self.lambda_a < 1.0) {
            return bad("lambda_a must be in [0, 1)");
        }
        if !(self.huber_delta > 0.0) || !(self.function_tolerance > 0.0) || !(self.link_threshold > 0.0) {
            return bad("huber_delta, function_tolerance and link_threshold must be positive");
        }
        if self.max_iterations == 0 || self.min_link_inliers < 3 || self.link_iterations == 0 {
            return bad("max_iterations and link_iterations must be positive, min_link_inliers at least 3");
        }
        if !(self.match_max_distance > 0.0) || !(0.0..=1.0).contains(&self.loop_score_floor) {
            return bad("match_max_distance must be positive, loop_score_floor in [0, 1]");
        }
        Ok(())
    }

    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            max_iterations: self.link_iterations,
            inlier_threshold: self.link_threshold,
            min_inliers: self.min_link_inliers,
            seed: self.seed,
            ..RansacConfig::default()
        }
    }
}

/// Landmarks of `next` continued from landmarks of `prev` through the
/// overlap frames.
pub fn find_temporal_correspondences(prev: &Submap, next: &Submap) -> Vec<Correspondence3D3D> {
    next.landmarks
        .values()
        .filter_map(|l| {
            let from = prev.landmarks.get(&l.carried_from?)?;
            Some(Correspondence3D3D {
                point_a: from.position,
                point_b: l.position,
                id_a: from.id,
                id_b: l.id,
            })
        })
        .collect()
}

/// Mutual nearest-neighbor descriptor matches between two landmark sets.
pub fn find_loop_correspondences(a: &Submap, b: &Submap, max_distance: f32) -> Vec<Correspondence3D3D> {
    let la: Vec<_> = a.landmarks.values().collect();
    let lb: Vec<_> = b.landmarks.values().collect();
    let da = DescriptorMatrix::from_descriptors(la.iter().map(|l| &l.descriptor));
    let db = DescriptorMatrix::from_descriptors(lb.iter().map(|l| &l.descriptor));
    mutual_nearest(&da, &db, max_distance)
        .into_iter()
        .map(|(i, j, _)| Correspondence3D3D {
            point_a: la[i].position,
            point_b: lb[j].position,
            id_a: la[i].id,
            id_b: lb[j].id,
        })
        .collect()
}

/// Robustly fit the similarity between two submaps and keep the inliers.
pub fn verify_link(
    a: &Submap,
    b: &Submap,
    corrs: &[Correspondence3D3D],
    kind: LinkKind,
    cfg: &RansacConfig,
) -> Result<SubmapLink, AlignmentError> {
    let required = cfg.min_inliers.max(3);
    let reject = |inliers| AlignmentError::LinkRejected {
        a: a.id,
        b: b.id,
        inliers,
        required,
    };
    if corrs.len() < required {
        return Err(reject(corrs.len()));
    }
    let fit = sim3_ransac(corrs, cfg).map_err(|_| reject(0))?;
    if fit.inlier_count() < required {
        return Err(reject(fit.inlier_count()));
    }
    let correspondences = corrs.iter().zip(&fit.inliers).filter(|(_, &k)| k).map(|(c, _)| *c).collect();
    Ok(SubmapLink {
        a: a.id,
        b: b.id,
        correspondences,
        relative: fit.transform,
        kind,
    })
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    /// Group members by root, groups ordered by their smallest member.
    pub(crate) fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: HashMap<usize, usize> = HashMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            let g = *by_root.entry(r).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[g].push(i);
        }
        out
    }
}
