//! Incremental reconstruction driver.
//!
//! Consumes per-frame track measurements and produces camera poses, sparse
//! structure, and detected pipe instances. The loop follows the usual
//! incremental recipe: a two-view initialization, per-frame absolute pose
//! estimation, triangulation of newly covered tracks, and a windowed bundle
//! adjustment after every registration. Pipe detection runs on a fixed
//! registration cadence; once an instance exists, the model is rescaled so
//! the detected surface matches the known pipe radius, the scale gauge moves
//! from the initialization baseline to the surface constraint, and the
//! intrinsics join the optimized parameters.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DVector, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ba::{
    solve, BlockId, CylinderSurface, Loss, ParamSet, Reprojection, SolveOptions, SolveReport,
};
use crate::camera::Intrinsics;
use crate::conic::{Cone, ConicError, DetectConfig, Detector, FrameObservations, PipeInstance,
    PipeShape};
use crate::geom::{angle_between, Pose};
use crate::ransac::{ransac, RansacParams};

use super::epipolar::relative_pose_ransac;
use super::p3p::solve_p3p;
use super::triangulate::triangulate_midpoint;
use super::SfmError;

/// Tuning knobs of the incremental loop.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Angular inlier threshold for registration and initialization, radians
    /// between a measured ray and the predicted direction.
    pub register_thresh_rad: f64,
    /// Absolute minimum consensus size for an accepted pose.
    pub min_register_inliers: usize,
    /// Minimum fraction of a frame's correspondences that must be inliers.
    pub min_register_ratio: f64,
    /// Triangulation parallax gate, radians.
    pub min_parallax_rad: f64,
    /// Post-refinement acceptance gate on the angular reprojection error of
    /// a new point, radians.
    pub triangulate_gate_rad: f64,
    /// Minimum median triangulation parallax for an initialization pair.
    pub min_init_parallax_rad: f64,
    /// Number of candidate starting pairs scanned before giving up.
    pub init_scan_pairs: usize,
    /// Run pipe detection after this many new registrations.
    pub detect_interval: usize,
    /// Number of most recent poses optimized by the windowed adjustment.
    pub local_window: usize,
    /// Fractional point-count growth that triggers a full adjustment.
    pub global_growth: f64,
    /// Weight of the surface term relative to reprojection.
    pub alpha: f64,
    /// Master switch for detection and the surface constraint; off, the
    /// pipeline is a plain unconstrained reconstruction.
    pub use_pipes: bool,
    /// Detector settings, including the known pipe radius in millimetres.
    pub detect: DetectConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            register_thresh_rad: 2e-3,
            min_register_inliers: 6,
            min_register_ratio: 0.4,
            min_parallax_rad: 0.5_f64.to_radians(),
            triangulate_gate_rad: 4e-3,
            min_init_parallax_rad: 0.5_f64.to_radians(),
            init_scan_pairs: 10,
            detect_interval: 30,
            local_window: 8,
            global_growth: 0.05,
            alpha: 10.0,
            use_pipes: true,
            detect: DetectConfig::default(),
            seed: 0,
        }
    }
}

/// Cauchy scale for reprojection residuals, pixels.
const REPROJ_CAUCHY_PX: f64 = 1.0;
/// Cauchy scale for surface residuals, as a fraction of the pipe radius.
const SURFACE_CAUCHY_FRACTION: f64 = 0.05;
/// Observations whose angular reprojection error exceeds this multiple of
/// the registration threshold are pruned after a full adjustment.
const PRUNE_FACTOR: f64 = 3.0;

/// Counters and diagnostics accumulated over a run.
#[derive(Clone, Debug, Default)]
pub struct PipelineReport {
    pub total_frames: usize,
    pub registered_frames: usize,
    /// Frames that failed registration twice and were abandoned.
    pub dropped_frames: Vec<usize>,
    pub init_pair: (usize, usize),
    pub detection_rounds: usize,
    pub local_ba_runs: usize,
    pub global_ba_runs: usize,
    /// Rescaling applied when the first pipe instance appeared.
    pub scale_factor: Option<f64>,
    pub points: usize,
    pub observations_pruned: usize,
    pub final_cost: f64,
}

/// One reconstructed track.
#[derive(Clone, Debug)]
pub struct PointEntry {
    pub track: usize,
    pub position: Vector3<f64>,
    /// Registered frames observing the track (pruned observations excluded).
    pub frames: Vec<usize>,
    /// Index into the pipe list when the detector assigned the point.
    pub pipe: Option<usize>,
}

/// Final state of a reconstruction run.
#[derive(Clone, Debug)]
pub struct SfmResult {
    pub intrinsics: Intrinsics,
    /// Per input frame: the world-to-camera pose, or `None` if unregistered.
    pub poses: Vec<Option<Pose>>,
    pub points: Vec<PointEntry>,
    pub pipes: Vec<PipeInstance>,
    pub report: PipelineReport,
}

/// Frame-indexed measurement lists: `measurements[f]` holds the
/// `(track id, pixel)` observations of frame `f`.
pub type Measurements = Vec<Vec<(usize, Vector2<f64>)>>;

/// Runs the full incremental reconstruction over a measurement set.
pub fn run_pipeline(
    measurements: &Measurements,
    k: &Intrinsics,
    cfg: &PipelineConfig,
) -> Result<SfmResult, SfmError> {
    let mut p = Pipeline::new(measurements.clone(), *k, cfg.clone());
    p.initialize_model()?;
    p.run_to_completion();
    Ok(p.into_result())
}

/// The incremental reconstruction state machine.
pub struct Pipeline {
    cfg: PipelineConfig,
    k: Intrinsics,
    obs: Measurements,
    /// Track id -> its observations as sorted `(frame, pixel)` pairs.
    track_obs: BTreeMap<usize, Vec<(usize, Vector2<f64>)>>,
    /// Observations discarded by outlier pruning.
    pruned: BTreeSet<(usize, usize)>,
    /// Per-frame unprojected unit rays, rebuilt lazily when the intrinsics
    /// estimate moves. Tracks whose pixel fails to unproject are absent.
    rays: Vec<Option<(u64, BTreeMap<usize, Vector3<f64>>)>>,
    ray_version: u64,
    poses: Vec<Option<Pose>>,
    /// Frames in registration order.
    registered: Vec<usize>,
    points: BTreeMap<usize, Vector3<f64>>,
    detector: Detector,
    /// Frame pinned to the identity pose.
    anchor: usize,
    /// Second initialization frame; its dominant translation component is
    /// frozen while the baseline provides the scale gauge.
    baseline_frame: usize,
    baseline_locked: bool,
    intrinsics_free: bool,
    points_at_global: usize,
    pending_new_pipe: bool,
    /// Registration count at the last detection round.
    detect_mark: usize,
    /// Index into `registered` where the current detection interval starts.
    interval_start: usize,
    /// Frames awaiting their one retry, oldest first.
    pending_retry: Vec<usize>,
    seed_counter: u64,
    report: PipelineReport,
}

impl Pipeline {
    pub fn new(obs: Measurements, k: Intrinsics, cfg: PipelineConfig) -> Pipeline {
        let n = obs.len();
        let mut track_obs: BTreeMap<usize, Vec<(usize, Vector2<f64>)>> = BTreeMap::new();
        for (f, frame_obs) in obs.iter().enumerate() {
            for (track, px) in frame_obs {
                track_obs.entry(*track).or_default().push((f, *px));
            }
        }
        let detector = Detector::new(cfg.detect.clone());
        Pipeline {
            cfg,
            k,
            obs,
            track_obs,
            pruned: BTreeSet::new(),
            rays: vec![None; n],
            ray_version: 0,
            poses: vec![None; n],
            registered: Vec::new(),
            points: BTreeMap::new(),
            detector,
            anchor: 0,
            baseline_frame: 0,
            baseline_locked: true,
            intrinsics_free: false,
            points_at_global: 0,
            pending_new_pipe: false,
            detect_mark: 0,
            interval_start: 0,
            pending_retry: Vec::new(),
            seed_counter: 0,
            report: PipelineReport { total_frames: n, ..PipelineReport::default() },
        }
    }

    fn next_rng(&mut self) -> ChaCha8Rng {
        self.seed_counter += 1;
        ChaCha8Rng::seed_from_u64(
            self.cfg
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(self.seed_counter.wrapping_mul(0xbf58_476d_1ce4_e5b9)),
        )
    }

    /// Unprojected unit rays of one frame, rebuilding the cache when the
    /// intrinsics have moved since it was filled.
    fn frame_rays(&mut self, f: usize) -> &BTreeMap<usize, Vector3<f64>> {
        let stale = match &self.rays[f] {
            Some((version, _)) => *version != self.ray_version,
            None => true,
        };
        if stale {
            let mut map = BTreeMap::new();
            for (track, px) in &self.obs[f] {
                if let Ok(ray) = self.k.unproject(px) {
                    map.insert(*track, ray);
                }
            }
            self.rays[f] = Some((self.ray_version, map));
        }
        &self.rays[f].as_ref().unwrap().1
    }

    fn ray(&mut self, f: usize, track: usize) -> Option<Vector3<f64>> {
        self.frame_rays(f).get(&track).copied()
    }

    /// Registered, unpruned observations of a track.
    fn registered_obs(&self, track: usize) -> Vec<(usize, Vector2<f64>)> {
        self.track_obs
            .get(&track)
            .map(|v| {
                v.iter()
                    .filter(|(f, _)| {
                        self.poses[*f].is_some() && !self.pruned.contains(&(track, *f))
                    })
                    .copied()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Establishes the starting two-view geometry.
    ///
    /// Candidate pairs are scanned in increasing span order starting at
    /// `(0, 1)`; a pair is accepted when the essential-matrix consensus
    /// succeeds and the triangulated inliers show enough median parallax.
    /// The first frame of the accepted pair becomes the gauge anchor with an
    /// identity pose; the baseline to the second is normalized to unit
    /// length and its dominant translation component frozen until a pipe
    /// instance later fixes the absolute scale.
    pub fn initialize_model(&mut self) -> Result<(), SfmError> {
        let n = self.obs.len();
        let mut pairs = Vec::new();
        'outer: for a in 0..n {
            for b in a + 1..n.min(a + 6) {
                pairs.push((a, b));
                if pairs.len() >= self.cfg.init_scan_pairs {
                    break 'outer;
                }
            }
        }
        let mut last_reason = String::from("no candidate frame pairs");
        for &(a, b) in &pairs {
            match self.try_init_pair(a, b) {
                Ok(()) => return Ok(()),
                Err(reason) => {
                    last_reason = format!("pair ({a}, {b}): {reason}");
                }
            }
        }
        Err(SfmError::InitFailed { attempts: pairs.len(), reason: last_reason })
    }

    fn try_init_pair(&mut self, a: usize, b: usize) -> Result<(), String> {
        let rays_a = self.frame_rays(a).clone();
        let rays_b = self.frame_rays(b).clone();
        let mut shared: Vec<(usize, Vector3<f64>, Vector3<f64>)> = rays_a
            .iter()
            .filter_map(|(track, ra)| rays_b.get(track).map(|rb| (*track, *ra, *rb)))
            .collect();
        shared.sort_by_key(|(track, _, _)| *track);
        if shared.len() < 8 {
            return Err(format!("{} shared tracks, need 8", shared.len()));
        }
        let ray_pairs: Vec<_> = shared.iter().map(|(_, ra, rb)| (*ra, *rb)).collect();
        let mut rng = self.next_rng();
        let rel = relative_pose_ransac(
            &ray_pairs,
            self.cfg.register_thresh_rad,
            &RansacParams::default(),
            &mut rng,
        )
        .ok_or_else(|| "no essential-matrix consensus".to_string())?;

        let identity = Pose::identity();
        let mut triangulated = Vec::new();
        let mut parallaxes = Vec::new();
        for &i in &rel.inliers {
            let (track, ra, rb) = shared[i];
            if let Some(tri) = triangulate_midpoint(&identity, &ra, &rel.pose, &rb) {
                if tri.parallax >= self.cfg.min_parallax_rad {
                    triangulated.push((track, tri.point));
                    parallaxes.push(tri.parallax);
                }
            }
        }
        if triangulated.len() < 8 {
            return Err(format!("only {} triangulated inliers", triangulated.len()));
        }
        parallaxes.sort_by(f64::total_cmp);
        let median = parallaxes[parallaxes.len() / 2];
        if median < self.cfg.min_init_parallax_rad {
            return Err(format!("median parallax {median:.2e} rad too low"));
        }

        self.anchor = a;
        self.baseline_frame = b;
        self.baseline_locked = true;
        self.poses[a] = Some(identity);
        self.poses[b] = Some(rel.pose);
        self.registered = vec![a, b];
        for (track, x) in triangulated {
            self.points.insert(track, x);
        }
        self.report.init_pair = (a, b);
        self.points_at_global = self.points.len();

        // Sweep both starting frames for tracks the consensus step skipped,
        // then settle the two-view geometry.
        self.triangulate_new(a);
        self.triangulate_new(b);
        self.local_ba();
        Ok(())
    }

    /// Estimates the absolute pose of one frame from its tracks with
    /// existing structure. On success the frame is marked registered.
    pub fn register_frame(&mut self, f: usize) -> Result<Pose, SfmError> {
        let frame_rays = self.frame_rays(f).clone();
        let mut corr: Vec<(usize, Vector3<f64>, Vector3<f64>)> = Vec::new();
        for (track, ray) in &frame_rays {
            if self.pruned.contains(&(*track, f)) {
                continue;
            }
            if let Some(x) = self.points.get(track) {
                corr.push((*track, *ray, *x));
            }
        }
        if corr.len() < 4 {
            return Err(SfmError::TooFewCorrespondences { frame: f, got: corr.len(), need: 4 });
        }

        let thresh = self.cfg.register_thresh_rad;
        let mut rng = self.next_rng();
        let result = ransac(
            &mut rng,
            corr.len(),
            3,
            &RansacParams::default(),
            |idx| {
                let rays = [corr[idx[0]].1, corr[idx[1]].1, corr[idx[2]].1];
                let pts = [corr[idx[0]].2, corr[idx[1]].2, corr[idx[2]].2];
                solve_p3p(&rays, &pts)
            },
            |pose| {
                (0..corr.len())
                    .filter(|&i| {
                        let pred = pose.transform(&corr[i].2);
                        pred.z > 0.0 && angle_between(&pred, &corr[i].1) < thresh
                    })
                    .collect()
            },
        );
        let Some(result) = result else {
            return Err(SfmError::RegistrationFailed { frame: f, candidates: corr.len() });
        };
        let needed = self
            .cfg
            .min_register_inliers
            .max((self.cfg.min_register_ratio * corr.len() as f64).ceil() as usize);
        if result.inliers.len() < needed {
            return Err(SfmError::RegistrationFailed { frame: f, candidates: corr.len() });
        }

        // Polish the consensus pose on its inliers.
        let mut params = ParamSet::new();
        let pose_id = params.add_pose(result.model);
        let k_id = params.add_vec(DVector::from_column_slice(&self.k.as_array()));
        params.set_fixed(k_id, true);
        let mut residuals: Vec<Reprojection> = Vec::new();
        for &i in &result.inliers {
            let (track, _, x) = corr[i];
            let obs = self.track_obs[&track]
                .iter()
                .find(|(frame, _)| *frame == f)
                .expect("inlier track observes this frame")
                .1;
            let point_id = params.add_point(x);
            params.set_fixed(point_id, true);
            residuals.push(Reprojection::new(
                pose_id,
                point_id,
                k_id,
                obs,
                Loss::Cauchy { scale: REPROJ_CAUCHY_PX },
            ));
        }
        let refs: Vec<&dyn crate::ba::Residual> =
            residuals.iter().map(|r| r as &dyn crate::ba::Residual).collect();
        solve(&mut params, &refs, &SolveOptions { max_iters: 15, ..SolveOptions::default() });
        let pose = *params.pose(pose_id);

        self.poses[f] = Some(pose);
        self.registered.push(f);
        Ok(pose)
    }

    /// Triangulates tracks of a newly registered frame that now have two or
    /// more registered observations and no 3D point. Returns the number of
    /// points added.
    pub fn triangulate_new(&mut self, f: usize) -> usize {
        let tracks: Vec<usize> = self.obs[f].iter().map(|(t, _)| *t).collect();
        let mut added = 0;
        for track in tracks {
            if self.points.contains_key(&track) {
                continue;
            }
            let reg = self.registered_obs(track);
            if reg.len() < 2 {
                continue;
            }
            let (fa, _) = reg[0];
            let (fb, _) = reg[reg.len() - 1];
            let (Some(ra), Some(rb)) = (self.ray(fa, track), self.ray(fb, track)) else {
                continue;
            };
            let pose_a = self.poses[fa].unwrap();
            let pose_b = self.poses[fb].unwrap();
            let Some(tri) = triangulate_midpoint(&pose_a, &ra, &pose_b, &rb) else {
                continue;
            };
            if tri.parallax < self.cfg.min_parallax_rad {
                continue;
            }
            if let Some(x) = self.refine_point(track, tri.point, &reg) {
                self.points.insert(track, x);
                added += 1;
            }
        }
        added
    }

    /// Levenberg-Marquardt refinement of a single point over its registered
    /// observations, followed by the cheirality and reprojection gates.
    fn refine_point(
        &mut self,
        track: usize,
        initial: Vector3<f64>,
        reg: &[(usize, Vector2<f64>)],
    ) -> Option<Vector3<f64>> {
        let mut params = ParamSet::new();
        let point_id = params.add_point(initial);
        let k_id = params.add_vec(DVector::from_column_slice(&self.k.as_array()));
        params.set_fixed(k_id, true);
        let mut residuals: Vec<Reprojection> = Vec::new();
        for (f, px) in reg {
            let pose_id = params.add_pose(self.poses[*f].unwrap());
            params.set_fixed(pose_id, true);
            residuals.push(Reprojection::new(pose_id, point_id, k_id, *px, Loss::Squared));
        }
        let refs: Vec<&dyn crate::ba::Residual> =
            residuals.iter().map(|r| r as &dyn crate::ba::Residual).collect();
        solve(&mut params, &refs, &SolveOptions { max_iters: 10, ..SolveOptions::default() });
        let x = *params.point(point_id);

        for (f, _) in reg {
            let pred = self.poses[*f].unwrap().transform(&x);
            if pred.z <= 0.0 {
                return None;
            }
            let ray = self.ray(*f, track)?;
            if angle_between(&pred, &ray) > self.cfg.triangulate_gate_rad {
                return None;
            }
        }
        Some(x)
    }

    /// Windowed bundle adjustment over the most recent registrations.
    ///
    /// Frees the window poses and every point they observe; observations of
    /// those points from older frames participate with their poses held
    /// fixed, anchoring the window to the rest of the model. Surface
    /// residuals are attached to window points assigned to pipe instances,
    /// with the instance axes frozen. Intrinsics join once unlocked.
    pub fn local_ba(&mut self) -> Option<SolveReport> {
        let window: BTreeSet<usize> = self
            .registered
            .iter()
            .rev()
            .take(self.cfg.local_window)
            .copied()
            .collect();
        let mut window_points: BTreeSet<usize> = BTreeSet::new();
        for &f in &window {
            for (track, _) in &self.obs[f] {
                if self.points.contains_key(track) && !self.pruned.contains(&(*track, f)) {
                    window_points.insert(*track);
                }
            }
        }
        self.report.local_ba_runs += 1;
        self.bundle_adjust(&window, &window_points, false)
    }

    /// Full adjustment: all registered poses, all points, pipe axes, and
    /// (once unlocked) the intrinsics.
    pub fn global_ba(&mut self) -> Option<SolveReport> {
        let frames: BTreeSet<usize> = self.registered.iter().copied().collect();
        let tracks: BTreeSet<usize> = self.points.keys().copied().collect();
        self.report.global_ba_runs += 1;
        let report = self.bundle_adjust(&frames, &tracks, true);
        self.points_at_global = self.points.len();
        self.prune_outliers();
        report
    }

    /// Shared assembly for the two adjustment flavours. `free_frames` are
    /// optimized (minus gauge locks), `free_tracks` are the free points, and
    /// `global` additionally frees the pipe instance axes.
    fn bundle_adjust(
        &mut self,
        free_frames: &BTreeSet<usize>,
        free_tracks: &BTreeSet<usize>,
        global: bool,
    ) -> Option<SolveReport> {
        if free_tracks.is_empty() {
            return None;
        }
        let mut params = ParamSet::new();
        let k_id = params.add_vec(DVector::from_column_slice(&self.k.as_array()));
        params.set_fixed(k_id, !self.intrinsics_free);

        let mut pose_ids: BTreeMap<usize, BlockId> = BTreeMap::new();
        let mut point_ids: BTreeMap<usize, BlockId> = BTreeMap::new();
        let mut residuals: Vec<Box<dyn crate::ba::Residual>> = Vec::new();

        for &track in free_tracks {
            let Some(&x) = self.points.get(&track) else { continue };
            let reg = self.registered_obs(track);
            if reg.is_empty() {
                continue;
            }
            let point_id = *point_ids.entry(track).or_insert_with(|| params.add_point(x));
            for (f, px) in reg {
                let pose_id = *pose_ids.entry(f).or_insert_with(|| {
                    let id = params.add_pose(self.poses[f].unwrap());
                    let free = free_frames.contains(&f) && f != self.anchor;
                    params.set_fixed(id, !free);
                    if free && self.baseline_locked && f == self.baseline_frame {
                        let t = self.poses[f].unwrap().t;
                        let mut dominant = 3;
                        for i in 4..6 {
                            if t[i - 3].abs() > t[dominant - 3].abs() {
                                dominant = i;
                            }
                        }
                        let mut mask = [true; 6];
                        mask[dominant] = false;
                        params.set_free_mask(id, &mask);
                    }
                    id
                });
                residuals.push(Box::new(Reprojection::new(
                    pose_id,
                    point_id,
                    k_id,
                    px,
                    Loss::Cauchy { scale: REPROJ_CAUCHY_PX },
                )));
            }
        }

        // Surface terms: a cylinder of the known radius around each detected
        // instance axis. The combined weight and loss scale implement the
        // relative weight alpha exactly for the Cauchy objective.
        let mut pipe_pose_ids: Vec<Option<BlockId>> = Vec::new();
        if self.cfg.use_pipes && self.cfg.alpha > 0.0 {
            let radius = self.cfg.detect.known_radius;
            let weight = self.cfg.alpha.sqrt();
            let loss =
                Loss::Cauchy { scale: weight * SURFACE_CAUCHY_FRACTION * radius };
            let radius_id = params.add_vec(DVector::from_element(1, radius));
            params.set_fixed(radius_id, true);
            for inst in self.detector.instances() {
                let used: Vec<usize> = inst
                    .point_ids
                    .iter()
                    .filter(|id| point_ids.contains_key(id))
                    .copied()
                    .collect();
                if used.is_empty() {
                    pipe_pose_ids.push(None);
                    continue;
                }
                let pose_id = params.add_pose(*inst.shape.pose());
                if global {
                    params.set_free_mask(pose_id, &CylinderSurface::pose_mask());
                } else {
                    params.set_fixed(pose_id, true);
                }
                pipe_pose_ids.push(Some(pose_id));
                for track in used {
                    residuals.push(Box::new(CylinderSurface::new(
                        pose_id,
                        radius_id,
                        point_ids[&track],
                        weight,
                        loss,
                    )));
                }
            }
        }

        let refs: Vec<&dyn crate::ba::Residual> =
            residuals.iter().map(|r| r.as_ref()).collect();
        let opts = if global {
            SolveOptions { max_iters: 25, ftol: 1e-9, ..SolveOptions::default() }
        } else {
            SolveOptions { max_iters: 8, ftol: 1e-8, ..SolveOptions::default() }
        };
        let report = solve(&mut params, &refs, &opts);

        for (f, id) in &pose_ids {
            self.poses[*f] = Some(*params.pose(*id));
        }
        for (track, id) in &point_ids {
            self.points.insert(*track, *params.point(*id));
        }
        if self.intrinsics_free {
            let v = params.vec(k_id);
            let updated = Intrinsics::from_slice(v.as_slice());
            if updated.as_array() != self.k.as_array() {
                self.k = updated;
                self.ray_version += 1;
            }
        }
        if global {
            for (ii, maybe_id) in pipe_pose_ids.iter().enumerate() {
                if let Some(id) = maybe_id {
                    let new_pose = *params.pose(*id);
                    let inst = &mut self.detector.instances_mut()[ii];
                    match &mut inst.shape {
                        PipeShape::Cone(cone) => {
                            *cone = Cone::from_params(cone.c, new_pose);
                        }
                        PipeShape::Cylinder { pose, .. } => *pose = new_pose,
                    }
                }
            }
        }
        self.report.final_cost = report.final_cost;
        Some(report)
    }

    /// Drops observations whose angular reprojection error exceeds the prune
    /// threshold, and forgets points left with fewer than two observations.
    fn prune_outliers(&mut self) {
        let limit = PRUNE_FACTOR * self.cfg.register_thresh_rad;
        let tracks: Vec<usize> = self.points.keys().copied().collect();
        for track in tracks {
            let x = self.points[&track];
            let reg = self.registered_obs(track);
            let mut kept = 0;
            for (f, _) in &reg {
                let pred = self.poses[*f].unwrap().transform(&x);
                let bad = match self.ray(*f, track) {
                    Some(ray) => pred.z <= 0.0 || angle_between(&pred, &ray) > limit,
                    None => true,
                };
                if bad {
                    self.pruned.insert((track, *f));
                    self.report.observations_pruned += 1;
                } else {
                    kept += 1;
                }
            }
            if kept < 2 {
                self.points.remove(&track);
            }
        }
    }

    /// Runs one pipe-detection round over the registered frames of the
    /// detection interval (or all registered frames for the final sweep).
    fn detect_round(&mut self, all_frames: bool) {
        if !self.cfg.use_pipes {
            return;
        }
        let start = if all_frames { 0 } else { self.interval_start };
        let mut frame_ids: Vec<usize> = self.registered[start..].to_vec();
        frame_ids.sort_unstable();
        let frames: Vec<FrameObservations> = frame_ids
            .iter()
            .map(|&f| FrameObservations {
                frame_id: f,
                point_ids: self.obs[f]
                    .iter()
                    .map(|(t, _)| *t)
                    .filter(|t| {
                        self.points.contains_key(t) && !self.pruned.contains(&(*t, f))
                    })
                    .collect(),
            })
            .collect();
        let positions: HashMap<usize, Vector3<f64>> =
            self.points.iter().map(|(t, x)| (*t, *x)).collect();
        let had_pipes = !self.detector.instances().is_empty();
        let seed = self.next_rng().get_seed();
        let seed64 = u64::from_le_bytes(seed[..8].try_into().unwrap());
        match self.detector.run_round(&positions, &frames, seed64) {
            Ok(created) => {
                self.report.detection_rounds += 1;
                if !created.is_empty() {
                    self.pending_new_pipe = true;
                    if !had_pipes {
                        self.apply_first_pipe_scale();
                    }
                }
            }
            Err(ConicError::TooFewPoints { .. }) => {
                self.report.detection_rounds += 1;
            }
            Err(_) => {
                self.report.detection_rounds += 1;
            }
        }
        self.detect_mark = self.registered.len();
        self.interval_start = self.registered.len();
    }

    /// Rescales the whole model so the first detected surface matches the
    /// known radius, then hands the scale gauge to the surface term and
    /// unlocks the intrinsics.
    fn apply_first_pipe_scale(&mut self) {
        let mut weighted = 0.0;
        let mut count = 0usize;
        for inst in self.detector.instances() {
            let n = inst.point_ids.iter().filter(|id| self.points.contains_key(id)).count();
            if n > 0 && inst.mean_axis_distance > 0.0 {
                weighted += inst.mean_axis_distance * n as f64;
                count += n;
            }
        }
        if count == 0 || weighted <= 0.0 {
            return;
        }
        let s = self.cfg.detect.known_radius / (weighted / count as f64);
        for x in self.points.values_mut() {
            *x *= s;
        }
        for pose in self.poses.iter_mut().flatten() {
            pose.t *= s;
        }
        self.detector.rescale(s);
        self.baseline_locked = false;
        self.intrinsics_free = true;
        self.report.scale_factor = Some(s);
    }

    /// Registration plus the per-frame follow-up work: triangulation, the
    /// windowed adjustment, scheduled detection, and the growth-triggered
    /// full adjustment.
    fn register_and_grow(&mut self, f: usize) -> bool {
        if self.register_frame(f).is_err() {
            return false;
        }
        self.triangulate_new(f);
        self.local_ba();
        if self.registered.len() - self.detect_mark >= self.cfg.detect_interval {
            self.detect_round(false);
        }
        let growth_limit =
            (self.points_at_global as f64 * (1.0 + self.cfg.global_growth)).ceil() as usize;
        if self.pending_new_pipe || self.points.len() >= growth_limit.max(1) {
            self.pending_new_pipe = false;
            self.global_ba();
        }
        true
    }

    /// Processes every frame once, giving failed frames a single retry after
    /// the next successful registration.
    pub fn run_to_completion(&mut self) {
        let n = self.obs.len();
        for f in 0..n {
            if self.poses[f].is_some() {
                continue;
            }
            if self.register_and_grow(f) {
                let retry = std::mem::take(&mut self.pending_retry);
                for g in retry {
                    if !self.register_and_grow(g) {
                        self.report.dropped_frames.push(g);
                    }
                }
            } else {
                self.pending_retry.push(f);
            }
        }
        let rest = std::mem::take(&mut self.pending_retry);
        self.report.dropped_frames.extend(rest);
        self.report.dropped_frames.sort_unstable();

        // Final sweep: one detection pass over everything, then a last full
        // adjustment to settle the model.
        self.detect_round(true);
        self.global_ba();
        self.report.registered_frames = self.registered.len();
        self.report.points = self.points.len();
    }

    /// Packages the final model.
    pub fn into_result(self) -> SfmResult {
        let mut pipe_of: BTreeMap<usize, usize> = BTreeMap::new();
        for (ii, inst) in self.detector.instances().iter().enumerate() {
            for &id in &inst.point_ids {
                pipe_of.insert(id, ii);
            }
        }
        let mut report = self.report;
        report.registered_frames = self.registered.len();
        report.points = self.points.len();
        let points = self
            .points
            .iter()
            .map(|(&track, &position)| PointEntry {
                track,
                position,
                frames: self.registered_obs(track).iter().map(|(f, _)| *f).collect(),
                pipe: pipe_of.get(&track).copied(),
            })
            .collect();
        SfmResult {
            intrinsics: self.k,
            poses: self.poses,
            points,
            pipes: self.detector.instances().to_vec(),
            report,
        }
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.k
    }

    pub fn pose(&self, f: usize) -> Option<&Pose> {
        self.poses[f].as_ref()
    }

    pub fn point(&self, track: usize) -> Option<&Vector3<f64>> {
        self.points.get(&track)
    }

    pub fn points_len(&self) -> usize {
        self.points.len()
    }
}
