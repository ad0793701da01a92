use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use nalgebra::{Vector2, Vector3};

use super::knn::knn_outliers;
use super::{BuilderConfig, FramePose, Keyframe, KeyframeKind, Landmark, Submap, SubmapStatus};
use crate::bundle_adjust::{reprojection_residual, solve_ba, BAObservation, BAOptions, BAProblem, CameraBlock, PointBlock};
use crate::dataset::{DatasetError, Frame, FrameSource};
use crate::descriptor::{match_ratio, median, mutual_nearest, nearest_neighbor_distances, DescriptorMatrix};
use crate::lie::Se3Pose;
use crate::multiview::{
    estimate_relative_pose, pnp_ransac_with_prior, triangulate_with_min_angle, CameraIntrinsics, Correspondence2D3D,
    ImageSize, PixelMatch, RelativePose,
};

/// Keyframe trigger: fewer tracked inliers than `tau_resection`.
pub fn should_add_keyframe(pnp_inliers: usize, tau_resection: usize) -> bool {
    pnp_inliers < tau_resection
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackOutcome {
    Tracked { pose: Se3Pose, inliers: usize },
    Lost(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted {
        middle: Option<u64>,
        new_landmarks: usize,
        duplicates: usize,
    },
    Aborted(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStage {
    /// Any keyframe observation above the reprojection threshold.
    PostBa,
    /// Mean distance to the k nearest landmarks above mean + σ·std.
    Knn,
    /// Every keyframe observation above the reprojection threshold.
    Completion,
}

/// Seed handed from a completed submap to the next: where to start and which
/// features of the overlap frames were inliers of which landmarks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Carryover {
    pub start_index: usize,
    pub links: HashMap<u64, HashMap<usize, u64>>,
}

struct StoredFrame {
    index: usize,
    frame: Frame,
    descriptors: DescriptorMatrix,
    pose: Option<Se3Pose>,
    /// Tracking inliers as `(feature index, landmark id)`.
    inliers: Vec<(usize, u64)>,
}

/// Mutable state of the submap under construction.
pub struct SubmapState {
    id: u32,
    k: CameraIntrinsics,
    size: ImageSize,
    cfg: BuilderConfig,
    ba: BAOptions,
    frames: Vec<StoredFrame>,
    keyframes: Vec<Keyframe>,
    landmarks: BTreeMap<u64, Landmark>,
    next_landmark: u64,
    tau: usize,
    carry: Option<Carryover>,
    ba_rms: f64,
    started: Instant,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SubmapState {
    pub fn new(
        id: u32,
        intrinsics: CameraIntrinsics,
        size: ImageSize,
        cfg: BuilderConfig,
        ba: BAOptions,
        next_landmark: u64,
        carry: Option<Carryover>,
    ) -> Self {
        let k = intrinsics.with_focal(cfg.initial_focal.unwrap_or(intrinsics.focal));
        Self {
            id,
            k,
            size,
            tau: cfg.tau_resection.unwrap_or(cfg.tau_resection_floor),
            cfg,
            ba,
            frames: Vec::new(),
            keyframes: Vec::new(),
            landmarks: BTreeMap::new(),
            next_landmark,
            carry,
            ba_rms: 0.0,
            started: Instant::now(),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn landmarks(&self) -> &BTreeMap<u64, Landmark> {
        &self.landmarks
    }

    pub fn tau_resection(&self) -> usize {
        self.tau
    }

    pub fn next_landmark_id(&self) -> u64 {
        self.next_landmark
    }

    /// Current focal estimate used for tracking.
    pub fn focal(&self) -> f64 {
        self.k.focal
    }

    pub fn ba_rms(&self) -> f64 {
        self.ba_rms
    }

    /// Pose of the most recent frame with an estimate.
    pub fn last_pose(&self) -> Option<Se3Pose> {
        self.frames.iter().rev().find_map(|f| f.pose)
    }

    fn seed(&self, frame: u64, purpose: u64) -> u64 {
        mix(mix(self.cfg.seed, frame), purpose)
    }

    fn store(index: usize, frame: Frame) -> StoredFrame {
        let descriptors = DescriptorMatrix::from_descriptors(frame.observations.iter().map(|o| &o.descriptor));
        StoredFrame {
            index,
            frame,
            descriptors,
            pose: None,
            inliers: Vec::new(),
        }
    }

    fn slot_of(&self, frame_id: u64) -> Option<usize> {
        self.frames.binary_search_by_key(&frame_id, |f| f.frame.id).ok()
    }

    fn carried(&self, frame_id: u64, feature: usize) -> Option<u64> {
        self.carry.as_ref()?.links.get(&frame_id)?.get(&feature).copied()
    }

    fn new_landmark_id(&mut self) -> u64 {
        let id = self.next_landmark;
        self.next_landmark += 1;
        id
    }

    fn pixel_matches(a: &StoredFrame, b: &StoredFrame, pairs: &[(usize, usize, f32)]) -> Vec<PixelMatch> {
        pairs
            .iter()
            .map(|&(i, j, _)| (a.frame.observations[i].pixel, b.frame.observations[j].pixel))
            .collect()
    }

    /// Mean angle (degrees) between the bearing rays of the inlier matches.
    fn mean_parallax(&self, rel: &RelativePose, pixels: &[PixelMatch]) -> f64 {
        let rt = rel.pose.rotation.transpose();
        let (mut sum, mut n) = (0.0, 0usize);
        for (m, _) in pixels.iter().zip(&rel.inliers).filter(|(_, &b)| b) {
            let a = self.k.ray(&m.0).normalize();
            let b = (rt * self.k.ray(&m.1)).normalize();
            sum += a.cross(&b).norm().atan2(a.dot(&b)).to_degrees();
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Triangulate a match between two posed frames, checking depth, angle
    /// and reprojection error in both views.
    fn triangulate_checked(
        &self,
        pose_a: &Se3Pose,
        pose_b: &Se3Pose,
        pa: &Vector2<f64>,
        pb: &Vector2<f64>,
    ) -> Option<Vector3<f64>> {
        let x = triangulate_with_min_angle(pose_a, pose_b, &self.k, pa, pb, self.cfg.min_triangulation_angle).ok()?;
        for (pose, px) in [(pose_a, pa), (pose_b, pb)] {
            let cam = CameraBlock::new(*pose, self.k.focal);
            let (r, behind) = reprojection_residual(&cam, &self.k.principal_point, &x, px);
            if behind || r.norm() > self.cfg.reprojection_threshold {
                return None;
            }
        }
        Some(x)
    }

    /// Find the second keyframe starting from `start` and create the initial
    /// landmarks. Returns the dataset index of the second keyframe, or `None`
    /// when the sequence ends first.
    pub fn bootstrap(&mut self, source: &dyn FrameSource, start: usize) -> Result<Option<usize>, DatasetError> {
        let len = source.len();
        let mut first = start;
        'restart: while first < len {
            self.frames.clear();
            self.frames.push(Self::store(first, source.frame(first)?));
            for j in first + 1..len {
                let fj = Self::store(j, source.frame(j)?);
                let pairs = mutual_nearest(&self.frames[0].descriptors, &fj.descriptors, self.cfg.match_max_distance);
                let pixels = Self::pixel_matches(&self.frames[0], &fj, &pairs);
                let ransac = self.cfg.essential.with_seed(self.seed(fj.frame.id, 1));
                let Ok(rel) = estimate_relative_pose(&pixels, &self.k, &ransac) else {
                    // A short baseline can fail verification while matches
                    // are plentiful; only a lost first frame restarts.
                    if pixels.len() < self.cfg.essential.min_inliers.max(5) {
                        first += 1;
                        continue 'restart;
                    }
                    self.frames.push(fj);
                    continue;
                };
                let inliers = rel.inlier_count();
                let parallax = self.mean_parallax(&rel, &pixels);
                self.frames.push(fj);
                // Too few well-conditioned triangulations keeps the first
                // keyframe and waits for more parallax.
                if (inliers < self.cfg.tau_stereo || parallax > self.cfg.alpha_stereo) && self.initialize(&pairs, &rel) {
                    return Ok(Some(j));
                }
            }
            break;
        }
        self.frames.clear();
        Ok(None)
    }

    fn initialize(&mut self, pairs: &[(usize, usize, f32)], rel: &RelativePose) -> bool {
        let last = self.frames.len() - 1;
        let (pose_a, pose_b) = (Se3Pose::identity(), rel.pose);
        let (id_a, id_b) = (self.frames[0].frame.id, self.frames[last].frame.id);
        let mut created = Vec::new();
        for (&(ia, ib, _), _) in pairs.iter().zip(&rel.inliers).filter(|(_, &b)| b) {
            let oa = self.frames[0].frame.observations[ia];
            let ob = self.frames[last].frame.observations[ib];
            if let Some(x) = self.triangulate_checked(&pose_a, &pose_b, &oa.pixel, &ob.pixel) {
                created.push((ia, ib, x, oa, ob));
            }
        }
        // Most inliers must survive the angle check, otherwise the baseline
        // is still too short.
        if created.len() < self.cfg.pnp.min_inliers.max(4) || 2 * created.len() < rel.inlier_count() {
            return false;
        }
        self.landmarks.clear();
        self.keyframes.clear();
        for (ia, ib, x, oa, ob) in created {
            let id = self.new_landmark_id();
            let carried_from = self.carried(id_a, ia).or_else(|| self.carried(id_b, ib));
            self.landmarks.insert(
                id,
                Landmark {
                    id,
                    position: x,
                    descriptor: oa.descriptor,
                    view_direction: x.normalize(),
                    observations: vec![(id_a, oa.pixel), (id_b, ob.pixel)],
                    truth_id: oa.truth_id,
                    carried_from,
                },
            );
            self.frames[0].inliers.push((ia, id));
            self.frames[last].inliers.push((ib, id));
        }
        let focal = self.cfg.estimate_focal.then_some(self.k.focal);
        self.frames[0].pose = Some(pose_a);
        self.frames[last].pose = Some(pose_b);
        self.keyframes.push(Keyframe {
            frame_id: id_a,
            pose: pose_a,
            kind: KeyframeKind::BootstrapFirst,
            focal,
        });
        self.keyframes.push(Keyframe {
            frame_id: id_b,
            pose: pose_b,
            kind: KeyframeKind::BootstrapSecond,
            focal,
        });
        self.run_ba();
        self.filter_outliers(FilterStage::PostBa);
        if self.landmarks.len() < self.cfg.pnp.min_inliers.max(4) {
            return false;
        }
        self.normalize_scale();
        self.update_tau(id_b);
        true
    }

    /// Rescale so the median landmark depth in the first keyframe equals
    /// the configured unit depth.
    fn normalize_scale(&mut self) {
        let first = self.keyframes[0].pose;
        let mut depths: Vec<f32> = self.landmarks.values().map(|l| first.apply(&l.position).z as f32).collect();
        let Some(m) = median(&mut depths) else {
            return;
        };
        if !(m > 0.0) {
            return;
        }
        let s = self.cfg.normalized_depth / m as f64;
        for l in self.landmarks.values_mut() {
            l.position *= s;
        }
        for kf in &mut self.keyframes {
            kf.pose.translation *= s;
        }
        for f in &mut self.frames {
            if let Some(p) = &mut f.pose {
                p.translation *= s;
            }
        }
    }

    fn update_tau(&mut self, frame_id: u64) {
        if let Some(t) = self.cfg.tau_resection {
            self.tau = t;
            return;
        }
        let visible = self
            .landmarks
            .values()
            .filter(|l| l.observations.iter().any(|(f, _)| *f == frame_id))
            .count();
        self.tau = ((self.cfg.tau_resection_fraction * visible as f64).floor() as usize).max(self.cfg.tau_resection_floor);
    }

    /// Landmarks predicted inside the image from `pose`, excluding those
    /// first seen from a very different direction.
    fn candidates(&self, pose: &Se3Pose) -> Vec<&Landmark> {
        let center = pose.center();
        let cos_limit = self.cfg.view_angle_limit.to_radians().cos();
        self.landmarks
            .values()
            .filter(|l| {
                let inside = self
                    .k
                    .project_camera(&pose.apply(&l.position))
                    .is_some_and(|p| self.size.contains(&p));
                inside && (l.position - center).normalize().dot(&l.view_direction) > cos_limit
            })
            .collect()
    }

    /// Descriptor-match `cands` into `frame` and estimate its pose.
    fn localize(
        &self,
        frame: &StoredFrame,
        cands: &[&Landmark],
        prior: &Se3Pose,
        seed: u64,
    ) -> Option<(Se3Pose, Vec<(usize, u64)>)> {
        if cands.len() < 4 {
            return None;
        }
        let cand_desc = DescriptorMatrix::from_descriptors(cands.iter().map(|l| &l.descriptor));
        let matches = match_ratio(&cand_desc, &frame.descriptors, self.cfg.match_max_distance, self.cfg.match_ratio);
        let mut by_feature: BTreeMap<usize, (usize, f32)> = BTreeMap::new();
        for (ci, m) in matches.iter().enumerate() {
            if let Some((fi, d)) = *m {
                let e = by_feature.entry(fi).or_insert((ci, d));
                if d < e.1 {
                    *e = (ci, d);
                }
            }
        }
        let pairs: Vec<(usize, usize)> = by_feature.iter().map(|(&fi, &(ci, _))| (fi, ci)).collect();
        let corrs: Vec<Correspondence2D3D> = pairs
            .iter()
            .map(|&(fi, ci)| Correspondence2D3D::new(cands[ci].id, cands[ci].position, frame.frame.observations[fi].pixel))
            .collect();
        let ransac = self.cfg.pnp.with_seed(seed);
        let res = pnp_ransac_with_prior(&corrs, &self.k, &ransac, Some(prior)).ok()?;
        let inliers = pairs
            .iter()
            .zip(&res.inliers)
            .filter(|(_, &b)| b)
            .map(|(&(fi, ci), _)| (fi, cands[ci].id))
            .collect();
        Some((res.pose, inliers))
    }

    /// PnP-track a frame against the submap's landmarks, predicted from the
    /// previous frame's pose.
    pub fn track_frame(&mut self, index: usize, frame: Frame) -> TrackOutcome {
        let Some(prev) = self.last_pose() else {
            return TrackOutcome::Lost("no previous pose");
        };
        let mut stored = Self::store(index, frame);
        let cands = self.candidates(&prev);
        let Some((pose, inliers)) = self.localize(&stored, &cands, &prev, self.seed(stored.frame.id, 2)) else {
            return TrackOutcome::Lost("pose estimation failed");
        };
        let count = inliers.len();
        stored.pose = Some(pose);
        stored.inliers = inliers;
        self.frames.push(stored);
        TrackOutcome::Tracked { pose, inliers: count }
    }

    fn add_inlier_observations(&mut self, slot: usize) {
        let id = self.frames[slot].frame.id;
        for &(fi, lid) in &self.frames[slot].inliers {
            if let Some(l) = self.landmarks.get_mut(&lid) {
                if l.observations.iter().all(|(f, _)| *f != id) {
                    l.observations.push((id, self.frames[slot].frame.observations[fi].pixel));
                }
            }
        }
    }

    /// Add the frame halfway between the last keyframe and the current frame
    /// plus the current frame as keyframes, triangulate new landmarks between
    /// them, and bundle-adjust.
    pub fn insert_keyframe_pair(&mut self) -> InsertOutcome {
        let Some(last_kf) = self.keyframes.last().copied() else {
            return InsertOutcome::Aborted("not bootstrapped");
        };
        let cur = self.frames.len() - 1;
        let cur_id = self.frames[cur].frame.id;
        let Some(cur_pose) = self.frames[cur].pose else {
            return InsertOutcome::Aborted("current frame has no pose");
        };
        if cur_id == last_kf.frame_id {
            return InsertOutcome::Aborted("current frame is already a keyframe");
        }
        let mid_id = (last_kf.frame_id + cur_id) / 2;
        let room = self.cfg.keyframes_per_submap.saturating_sub(self.keyframes.len());
        let middle = if room >= 2 && mid_id != last_kf.frame_id && mid_id != cur_id {
            self.slot_of(mid_id).filter(|&s| self.frames[s].pose.is_some())
        } else {
            None
        };
        let (partner, partner_pose) = match middle {
            Some(s) => (s, self.frames[s].pose.unwrap()),
            None => match self.slot_of(last_kf.frame_id) {
                Some(s) => (s, last_kf.pose),
                None => return InsertOutcome::Aborted("previous keyframe missing"),
            },
        };
        let partner_id = self.frames[partner].frame.id;

        let pairs = mutual_nearest(&self.frames[partner].descriptors, &self.frames[cur].descriptors, self.cfg.match_max_distance);
        let pixels = Self::pixel_matches(&self.frames[partner], &self.frames[cur], &pairs);
        let ransac = self.cfg.essential.with_seed(self.seed(cur_id, 3));
        let Ok(rel) = estimate_relative_pose(&pixels, &self.k, &ransac) else {
            return InsertOutcome::Aborted("essential matrix verification failed");
        };
        let mut fresh = Vec::new();
        for (&(ia, ib, _), _) in pairs.iter().zip(&rel.inliers).filter(|(_, &b)| b) {
            let oa = self.frames[partner].frame.observations[ia];
            let ob = self.frames[cur].frame.observations[ib];
            if let Some(x) = self.triangulate_checked(&partner_pose, &cur_pose, &oa.pixel, &ob.pixel) {
                fresh.push((ia, ib, x));
            }
        }

        // Drop triangulations whose descriptor matches an existing landmark.
        let mut nn = nearest_neighbor_distances(&self.frames[partner].descriptors);
        let dup_threshold = median(&mut nn).unwrap_or(0.0) * self.cfg.duplicate_factor;
        let existing = DescriptorMatrix::from_descriptors(self.landmarks.values().map(|l| &l.descriptor));
        let fresh_desc = DescriptorMatrix::from_descriptors(
            fresh.iter().map(|(ia, _, _)| &self.frames[partner].frame.observations[*ia].descriptor),
        );
        let dists = if existing.is_empty() || fresh_desc.is_empty() {
            None
        } else {
            Some(fresh_desc.distances_sq(&existing))
        };
        let is_dup = |row: usize| {
            dists.as_ref().is_some_and(|d| d.row(row).iter().any(|&v| v.max(0.0).sqrt() < dup_threshold))
        };
        let keep: Vec<bool> = (0..fresh.len()).map(|r| !is_dup(r)).collect();
        let duplicates = keep.iter().filter(|k| !**k).count();

        let focal = self.cfg.estimate_focal.then_some(self.k.focal);
        if let Some(s) = middle {
            self.keyframes.push(Keyframe {
                frame_id: partner_id,
                pose: partner_pose,
                kind: KeyframeKind::Middle,
                focal,
            });
            self.add_inlier_observations(s);
        }
        self.keyframes.push(Keyframe {
            frame_id: cur_id,
            pose: cur_pose,
            kind: KeyframeKind::Current,
            focal,
        });
        self.add_inlier_observations(cur);
        let partner_center = partner_pose.center();
        let mut new_landmarks = 0;
        for ((ia, ib, x), _) in fresh.into_iter().zip(&keep).filter(|(_, &k)| k) {
            let id = self.new_landmark_id();
            let oa = self.frames[partner].frame.observations[ia];
            let ob = self.frames[cur].frame.observations[ib];
            let carried_from = self.carried(partner_id, ia).or_else(|| self.carried(cur_id, ib));
            self.landmarks.insert(
                id,
                Landmark {
                    id,
                    position: x,
                    descriptor: oa.descriptor,
                    view_direction: (x - partner_center).normalize(),
                    observations: vec![(partner_id, oa.pixel), (cur_id, ob.pixel)],
                    truth_id: oa.truth_id,
                    carried_from,
                },
            );
            self.frames[partner].inliers.push((ia, id));
            self.frames[cur].inliers.push((ib, id));
            new_landmarks += 1;
        }
        self.run_ba();
        self.filter_outliers(FilterStage::PostBa);
        self.update_tau(cur_id);
        InsertOutcome::Inserted {
            middle: middle.map(|_| partner_id),
            new_landmarks,
            duplicates,
        }
    }

    fn run_ba(&mut self) {
        let focal_free = self.cfg.estimate_focal && self.keyframes.len() >= 4;
        let kf_index: HashMap<u64, usize> = self.keyframes.iter().enumerate().map(|(i, k)| (k.frame_id, i)).collect();
        let mut problem = BAProblem::new(self.k.principal_point);
        problem.cameras = self
            .keyframes
            .iter()
            .enumerate()
            .map(|(i, kf)| CameraBlock {
                pose: kf.pose,
                focal: kf.focal.unwrap_or(self.k.focal),
                fix_pose: i == 0,
                fix_focal: !focal_free,
            })
            .collect();
        let ids: Vec<u64> = self.landmarks.keys().copied().collect();
        for (pi, l) in self.landmarks.values().enumerate() {
            problem.points.push(PointBlock::new(l.position));
            for (f, px) in &l.observations {
                if let Some(&c) = kf_index.get(f) {
                    problem.observations.push(BAObservation {
                        camera: c,
                        point: pi,
                        pixel: *px,
                    });
                }
            }
        }
        let opts = BAOptions {
            estimate_focal: focal_free,
            ..self.ba
        };
        let Ok(res) = solve_ba(&problem, &opts) else {
            return;
        };
        self.ba_rms = res.rms;
        for (kf, cam) in self.keyframes.iter_mut().zip(&res.problem.cameras) {
            kf.pose = cam.pose;
            if kf.focal.is_some() {
                kf.focal = Some(cam.focal);
            }
        }
        for (id, p) in ids.iter().zip(&res.problem.points) {
            if let Some(l) = self.landmarks.get_mut(id) {
                l.position = p.position;
            }
        }
        let poses: Vec<(u64, Se3Pose)> = self.keyframes.iter().map(|k| (k.frame_id, k.pose)).collect();
        for (f, p) in poses {
            if let Some(s) = self.slot_of(f) {
                self.frames[s].pose = Some(p);
            }
        }
        if focal_free {
            let mut f: Vec<f64> = self.keyframes.iter().filter_map(|k| k.focal).collect();
            f.sort_by(f64::total_cmp);
            if let Some(m) = f.get(f.len() / 2) {
                self.k.focal = *m;
            }
        }
    }

    /// Reprojection errors of a landmark's keyframe observations; `None`
    /// marks an observation behind its camera.
    fn observation_errors(&self, l: &Landmark, kfs: &HashMap<u64, Keyframe>) -> Vec<Option<f64>> {
        l.observations
            .iter()
            .filter_map(|(f, px)| {
                let kf = kfs.get(f)?;
                let cam = CameraBlock::new(kf.pose, kf.focal.unwrap_or(self.k.focal));
                let (r, behind) = reprojection_residual(&cam, &self.k.principal_point, &l.position, px);
                Some((!behind).then_some(r.norm()))
            })
            .collect()
    }

    /// Remove outlier landmarks for the given stage; returns their ids.
    pub fn filter_outliers(&mut self, stage: FilterStage) -> Vec<u64> {
        let thr = self.cfg.reprojection_threshold;
        let removed: Vec<u64> = match stage {
            FilterStage::PostBa | FilterStage::Completion => {
                let kfs: HashMap<u64, Keyframe> = self.keyframes.iter().map(|k| (k.frame_id, *k)).collect();
                self.landmarks
                    .values()
                    .filter(|l| {
                        let errs = self.observation_errors(l, &kfs);
                        let bad = |e: &Option<f64>| e.is_none_or(|v| v > thr);
                        match stage {
                            FilterStage::PostBa => errs.iter().any(bad),
                            _ => !errs.is_empty() && errs.iter().all(bad),
                        }
                    })
                    .map(|l| l.id)
                    .collect()
            }
            FilterStage::Knn => {
                let ids: Vec<u64> = self.landmarks.keys().copied().collect();
                let pts: Vec<Vector3<f64>> = self.landmarks.values().map(|l| l.position).collect();
                knn_outliers(&pts, self.cfg.knn_k, self.cfg.knn_sigma)
                    .into_iter()
                    .map(|i| ids[i])
                    .collect()
            }
        };
        for id in &removed {
            self.landmarks.remove(id);
        }
        removed
    }

    fn frame_poses_so_far(&self) -> (Vec<FramePose>, Vec<u64>) {
        let mut poses = Vec::new();
        let mut missing = Vec::new();
        for f in &self.frames {
            match f.pose {
                Some(p) => poses.push(FramePose {
                    frame: f.frame.id,
                    pose: p,
                    relocalized: false,
                }),
                None => missing.push(f.frame.id),
            }
        }
        (poses, missing)
    }

    fn to_submap(&self, status: SubmapStatus, failure: Option<String>, poses: Vec<FramePose>, missing: Vec<u64>) -> Submap {
        let range = match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => (a.frame.id, b.frame.id),
            _ => (0, 0),
        };
        Submap {
            id: self.id,
            status,
            failure,
            keyframes: self.keyframes.clone(),
            landmarks: self.landmarks.clone(),
            frame_poses: poses,
            unlocalized_frames: missing,
            frame_range: range,
            ba_rms: self.ba_rms,
            focal: self.k.focal,
            principal_point: self.k.principal_point,
            build_seconds: self.started.elapsed().as_secs_f64(),
        }
    }

    /// Close the submap as failed.
    pub fn fail(&self, reason: &str) -> Submap {
        let (poses, missing) = self.frame_poses_so_far();
        self.to_submap(SubmapStatus::Failed, Some(reason.to_string()), poses, missing)
    }

    /// Pose and landmark links of every frame against the current
    /// landmarks. Keyframes keep their bundle-adjusted pose.
    fn relocalize_all(&self) -> (Vec<FramePose>, Vec<u64>, Vec<Vec<(usize, u64)>>) {
        let kf_pose: HashMap<u64, Se3Pose> = self.keyframes.iter().map(|k| (k.frame_id, k.pose)).collect();
        let mut poses = Vec::with_capacity(self.frames.len());
        let mut missing = Vec::new();
        let mut links: Vec<Vec<(usize, u64)>> = Vec::with_capacity(self.frames.len());
        for slot in 0..self.frames.len() {
            let f = &self.frames[slot];
            let prior = f
                .pose
                .or_else(|| self.frames[slot..].iter().find_map(|g| g.pose))
                .or_else(|| self.last_pose());
            let Some(prior) = prior else {
                missing.push(f.frame.id);
                links.push(Vec::new());
                continue;
            };
            let cands = self.candidates(&prior);
            let reloc = self.localize(f, &cands, &prior, self.seed(f.frame.id, 4));
            let id = f.frame.id;
            match (kf_pose.get(&id), reloc) {
                (Some(p), r) => {
                    poses.push(FramePose {
                        frame: id,
                        pose: *p,
                        relocalized: true,
                    });
                    links.push(r.map(|(_, l)| l).unwrap_or_default());
                }
                (None, Some((p, l))) => {
                    poses.push(FramePose {
                        frame: id,
                        pose: p,
                        relocalized: true,
                    });
                    links.push(l);
                }
                (None, None) => {
                    match f.pose {
                        Some(p) => poses.push(FramePose {
                            frame: id,
                            pose: p,
                            relocalized: false,
                        }),
                        None => missing.push(id),
                    }
                    links.push(Vec::new());
                }
            }
        }
        (poses, missing, links)
    }

    /// Bundle-adjust every relocalized frame together with the keyframes,
    /// using the relocalization matches as extra observations.
    fn refine_all_frames(&mut self, poses: &mut [FramePose], links: &[Vec<(usize, u64)>]) {
        let slot_of: HashMap<u64, usize> = self.frames.iter().enumerate().map(|(i, f)| (f.frame.id, i)).collect();
        let first = self.keyframes[0].frame_id;
        let is_kf: HashMap<u64, usize> = self.keyframes.iter().enumerate().map(|(i, k)| (k.frame_id, i)).collect();
        let cams: Vec<usize> = (0..poses.len()).filter(|&i| poses[i].relocalized).collect();
        let cam_of: HashMap<u64, usize> = cams.iter().enumerate().map(|(c, &i)| (poses[i].frame, c)).collect();
        let mut problem = BAProblem::new(self.k.principal_point);
        problem.cameras = cams
            .iter()
            .map(|&i| {
                let f = poses[i].frame;
                let focal = is_kf.get(&f).and_then(|&k| self.keyframes[k].focal).unwrap_or(self.k.focal);
                CameraBlock {
                    pose: poses[i].pose,
                    focal,
                    fix_pose: f == first,
                    fix_focal: true,
                }
            })
            .collect();
        let ids: Vec<u64> = self.landmarks.keys().copied().collect();
        let point_of: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        problem.points = self.landmarks.values().map(|l| PointBlock::new(l.position)).collect();
        for (pi, l) in self.landmarks.values().enumerate() {
            for (f, px) in &l.observations {
                if let Some(&c) = cam_of.get(f) {
                    problem.observations.push(BAObservation { camera: c, point: pi, pixel: *px });
                }
            }
        }
        for &i in &cams {
            let f = poses[i].frame;
            if is_kf.contains_key(&f) {
                continue;
            }
            let Some(&slot) = slot_of.get(&f) else { continue };
            for &(fi, lid) in &links[slot] {
                if let Some(&pi) = point_of.get(&lid) {
                    problem.observations.push(BAObservation {
                        camera: cam_of[&f],
                        point: pi,
                        pixel: self.frames[slot].frame.observations[fi].pixel,
                    });
                }
            }
        }
        if !problem.cameras.iter().any(|c| c.fix_pose) {
            return;
        }
        let Ok(res) = solve_ba(&problem, &self.ba) else {
            return;
        };
        for (&i, cam) in cams.iter().zip(&res.problem.cameras) {
            poses[i].pose = cam.pose;
            if let Some(&k) = is_kf.get(&poses[i].frame) {
                self.keyframes[k].pose = cam.pose;
            }
            if let Some(&slot) = slot_of.get(&poses[i].frame) {
                self.frames[slot].pose = Some(cam.pose);
            }
        }
        for (id, p) in ids.iter().zip(&res.problem.points) {
            if let Some(l) = self.landmarks.get_mut(id) {
                l.position = p.position;
            }
        }
    }

    /// Filter, relocalize every frame against the final landmarks, and hand
    /// the trailing overlap frames to the next submap.
    pub fn complete(&mut self) -> (Submap, Carryover) {
        self.filter_outliers(FilterStage::Completion);
        self.filter_outliers(FilterStage::Knn);
        let (mut poses, missing, mut links) = self.relocalize_all();
        if self.cfg.final_refinement {
            self.refine_all_frames(&mut poses, &links);
            let removed = self.filter_outliers(FilterStage::Completion);
            for l in &mut links {
                l.retain(|(_, id)| !removed.contains(id));
            }
        }
        self.ba_rms = self.keyframe_rms();

        let count = self.frames.len();
        let overlap = ((self.cfg.overlap_fraction * count as f64).ceil() as usize).clamp(1, count - 1);
        let first_shared = count - overlap;
        let carry = Carryover {
            start_index: self.frames[first_shared].index,
            links: (first_shared..count)
                .map(|s| (self.frames[s].frame.id, links[s].iter().copied().collect()))
                .collect(),
        };
        let submap = self.to_submap(SubmapStatus::Completed, None, poses, missing);
        (submap, carry)
    }

    fn keyframe_rms(&self) -> f64 {
        let kfs: HashMap<u64, Keyframe> = self.keyframes.iter().map(|k| (k.frame_id, *k)).collect();
        let (mut sum, mut n) = (0.0, 0usize);
        for l in self.landmarks.values() {
            for e in self.observation_errors(l, &kfs).into_iter().flatten() {
                sum += e * e;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }
}
