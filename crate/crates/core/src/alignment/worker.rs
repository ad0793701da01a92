use std::collections::HashMap;
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};

use super::graph::{build_pose_graph_warm, fuse_map, PoseGraph};
use super::optimize::optimize_graph;
use super::{find_loop_correspondences, find_temporal_correspondences, verify_link, AlignmentError, AlignmentOptions, LinkKind, SubmapLink};
use crate::builder::Submap;
use crate::lie::Sim3Transform;
use crate::map::GlobalMap;
use crate::place_recognition::{select_candidates, SubmapDatabase};

/// Immutable result of one alignment pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSnapshot {
    /// Increases by one with every published snapshot.
    pub version: u64,
    pub map: Arc<GlobalMap>,
    pub submaps: Vec<u32>,
    pub link_count: usize,
    pub loop_links: usize,
    pub node_count: usize,
    pub edge_count: usize,
    pub merged_landmarks: usize,
    pub component_count: usize,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub latency_seconds: f64,
}

/// Incremental alignment state: every arriving submap is linked to the
/// previous one and to place-recognition candidates, then the whole graph is
/// re-optimized from the previous estimates.
pub struct Aligner {
    opts: AlignmentOptions,
    db: Option<SubmapDatabase>,
    submaps: Vec<Submap>,
    links: Vec<SubmapLink>,
    rejected_links: usize,
    estimates: HashMap<u32, (u32, Sim3Transform)>,
    graph: Option<PoseGraph>,
    latest: Option<MapSnapshot>,
    version: u64,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Aligner {
    /// Without a database only temporal links are formed.
    pub fn new(opts: AlignmentOptions, db: Option<SubmapDatabase>) -> Result<Self, AlignmentError> {
        opts.validate()?;
        Ok(Self {
            opts,
            db,
            submaps: Vec::new(),
            links: Vec::new(),
            rejected_links: 0,
            estimates: HashMap::new(),
            graph: None,
            latest: None,
            version: 0,
        })
    }

    pub fn submaps(&self) -> &[Submap] {
        &self.submaps
    }

    pub fn links(&self) -> &[SubmapLink] {
        &self.links
    }

    pub fn rejected_links(&self) -> usize {
        self.rejected_links
    }

    pub fn graph(&self) -> Option<&PoseGraph> {
        self.graph.as_ref()
    }

    pub fn latest(&self) -> Option<&MapSnapshot> {
        self.latest.as_ref()
    }

    pub fn global_map(&self) -> GlobalMap {
        self.graph.as_ref().map(fuse_map).unwrap_or_default()
    }

    fn has_link(&self, a: u32, b: u32) -> bool {
        self.links.iter().any(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
    }

    fn try_link(&mut self, a: usize, b: usize, kind: LinkKind) {
        let (sa, sb) = (&self.submaps[a], &self.submaps[b]);
        let corrs = match kind {
            LinkKind::TemporalOverlap => find_temporal_correspondences(sa, sb),
            LinkKind::LoopClosure => find_loop_correspondences(sa, sb, self.opts.match_max_distance),
        };
        if corrs.is_empty() {
            debug!("no {kind:?} correspondences between submaps {} and {}", sa.id, sb.id);
        }
        let mut ransac = self.opts.ransac();
        ransac.seed = mix(self.opts.seed, ((sa.id as u64) << 32) | sb.id as u64);
        match verify_link(sa, sb, &corrs, kind, &ransac) {
            Ok(link) => {
                info!(
                    "{kind:?} link {} -> {}: {} of {} correspondences",
                    link.a,
                    link.b,
                    link.correspondences.len(),
                    corrs.len()
                );
                self.links.push(link);
            }
            Err(e) => {
                debug!("{e}");
                self.rejected_links += 1;
            }
        }
    }

    /// Link, re-optimize and publish. Failed submaps are skipped.
    pub fn add_submap(&mut self, submap: Submap) -> Result<Option<MapSnapshot>, AlignmentError> {
        if !submap.is_completed() {
            warn!("skipping failed submap {}: {}", submap.id, submap.failure.as_deref().unwrap_or(""));
            return Ok(None);
        }
        let started = Instant::now();
        let id = submap.id;
        let descriptors: Vec<_> = submap.landmarks.values().map(|l| l.descriptor).collect();
        self.submaps.push(submap);
        let new = self.submaps.len() - 1;
        let prev = new.checked_sub(1);
        if let Some(p) = prev {
            self.try_link(p, new, LinkKind::TemporalOverlap);
        }
        if let Some(db) = &self.db {
            let ranked = db.query(&descriptors, Some(id as u64));
            let candidates = select_candidates(&ranked, self.opts.loop_candidates, self.opts.loop_score_floor);
            for (cand, score) in candidates {
                let Some(c) = self.submaps.iter().position(|s| s.id as u64 == cand) else { continue };
                if self.has_link(self.submaps[c].id, id) {
                    continue;
                }
                debug!("loop candidate {cand} for submap {id}, score {score:.3}");
                self.try_link(c, new, LinkKind::LoopClosure);
            }
        }
        if let Some(db) = &mut self.db {
            if let Err(e) = db.add_submap(id as u64, &descriptors) {
                warn!("database: {e}");
            }
        }

        let refs: Vec<&Submap> = self.submaps.iter().collect();
        let graph = build_pose_graph_warm(&refs, &self.links, &self.opts, &self.estimates);
        let (graph, report) = optimize_graph(&graph, &self.opts)?;
        self.estimates = graph.nodes.iter().map(|n| (n.submap, (n.anchor, n.state.group))).collect();
        self.version += 1;
        let snapshot = MapSnapshot {
            version: self.version,
            map: Arc::new(fuse_map(&graph)),
            submaps: graph.nodes.iter().map(|n| n.submap).collect(),
            link_count: graph.link_count,
            loop_links: self.links.iter().filter(|l| l.kind == LinkKind::LoopClosure).count(),
            node_count: graph.node_count(),
            edge_count: graph.edge_count(),
            merged_landmarks: graph.merged_landmark_count(),
            component_count: graph.component_count,
            cost_trace: report.cost_trace,
            converged: report.converged,
            latency_seconds: started.elapsed().as_secs_f64(),
        };
        self.graph = Some(graph);
        self.latest = Some(snapshot.clone());
        Ok(Some(snapshot))
    }
}

/// Consume submaps until the channel closes, publishing a snapshot after
/// each aligned submap. Per-submap failures are logged and skipped.
pub fn alignment_worker(rx: Receiver<Submap>, mut aligner: Aligner, mut publish: impl FnMut(&MapSnapshot)) -> Aligner {
    for submap in rx {
        let id = submap.id;
        match aligner.add_submap(submap) {
            Ok(Some(s)) => publish(&s),
            Ok(None) => {}
            Err(e) => warn!("alignment of submap {id} failed: {e}"),
        }
    }
    aligner
}
