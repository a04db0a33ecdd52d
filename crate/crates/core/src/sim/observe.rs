//! Wall-point visibility, pixel observations and track assembly.
//!
//! For every frame the simulator projects each sampled wall point through the
//! ground-truth pose and keeps it when it lies in the usable depth band, falls
//! inside the image cone, and has a clear line of sight to the lens. Accepted
//! projections get Gaussian pixel noise and are stitched into tracks: one
//! track is a maximal run of consecutive frames seeing the same point, cut
//! into pieces no longer than the matching window, mimicking a 2D feature
//! matcher that only links detections across nearby frames.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Network, PartGeometry};
use crate::camera::Intrinsics;
use crate::geom::Pose;

/// Points closer than this to the lens are too defocused to track (mm).
pub const NEAR_LIMIT: f64 = 7.0;
/// Points further than this are too dim and small to track (mm).
pub const FAR_LIMIT: f64 = 300.0;
/// Half-angle of the usable image cone, inside the lens field of view.
const VIEW_HALF_ANGLE_DEG: f64 = 60.0;
/// Step of the line-of-sight march (mm).
const MARCH_STEP: f64 = 0.5;
/// Slack added to the tube radius when testing march samples, so grazing
/// sight lines along the wall do not flicker (mm).
const MARCH_TOL: f64 = 0.05;
/// The march skips this last stretch before the target: it hugs the very
/// wall the target sits on (mm).
const MARCH_SKIP_TAIL: f64 = 0.75;
/// Pixel noise is clamped to this many sigmas, keeping every observation
/// within a known bound of its true projection.
const NOISE_CLAMP_SIGMAS: f64 = 4.0;

/// All observations of one frame: `(track id, pixel)` pairs sorted by id.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub obs: Vec<(usize, Vector2<f64>)>,
}

/// Ground truth behind a track: which sampled wall point it sees and which
/// network part that point belongs to. Several tracks may share a point when
/// the matching window cuts a long run apart.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackTruth {
    pub point: usize,
    pub part: usize,
}

/// The full 2D measurement set of a simulated video.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSet {
    pub frames: Vec<FrameRecord>,
    pub tracks: Vec<TrackTruth>,
}

impl TrackSet {
    pub fn observation_count(&self) -> usize {
        self.frames.iter().map(|f| f.obs.len()).sum()
    }

    /// Per-frame measurement lists with the ground truth stripped, the input
    /// format the reconstruction consumes.
    pub fn measurements(&self) -> Vec<Vec<(usize, Vector2<f64>)>> {
        self.frames.iter().map(|f| f.obs.clone()).collect()
    }
}

/// Projects every sampled wall point into every pose and assembles the
/// surviving observations into window-limited tracks.
pub fn sample_observations(
    network: &Network,
    poses: &[Pose],
    k: &Intrinsics,
    sigma_px: f64,
    window: usize,
    seed: u64,
) -> TrackSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (sigma_px > 0.0).then(|| Normal::new(0.0, sigma_px).expect("positive sigma"));
    let cap = NOISE_CLAMP_SIGMAS * sigma_px;
    let view_limit = VIEW_HALF_ANGLE_DEG.to_radians();

    let centers: Vec<Vector3<f64>> = poses.iter().map(|p| p.center()).collect();
    let mut frames: Vec<FrameRecord> =
        (0..poses.len()).map(|f| FrameRecord { frame: f, obs: Vec::new() }).collect();
    let mut tracks: Vec<TrackTruth> = Vec::new();
    let mut pixels: Vec<Option<Vector2<f64>>> = vec![None; poses.len()];

    for (pi, sp) in network.points().iter().enumerate() {
        pixels.fill(None);
        for (f, pose) in poses.iter().enumerate() {
            let xc = pose.transform(&sp.position);
            if xc.z < NEAR_LIMIT || xc.z > FAR_LIMIT {
                continue;
            }
            if xc.fixed_rows::<2>(0).norm().atan2(xc.z) > view_limit {
                continue;
            }
            let Ok(mut px) = k.project(&xc) else { continue };
            if !unobstructed(network, &centers[f], sp) {
                continue;
            }
            if let Some(n) = &noise {
                px.x += n.sample(&mut rng).clamp(-cap, cap);
                px.y += n.sample(&mut rng).clamp(-cap, cap);
            }
            pixels[f] = Some(px);
        }

        // Cut each visibility run into window-sized tracks.
        let mut f = 0;
        while f < pixels.len() {
            if pixels[f].is_none() {
                f += 1;
                continue;
            }
            let start = f;
            while f < pixels.len() && pixels[f].is_some() {
                f += 1;
            }
            for (off, len) in chunk_run(f - start, window) {
                let id = tracks.len();
                tracks.push(TrackTruth { point: pi, part: sp.part });
                for g in start + off..start + off + len {
                    frames[g].obs.push((id, pixels[g].expect("inside a visibility run")));
                }
            }
        }
    }
    TrackSet { frames, tracks }
}

/// Splits a run of `run` consecutive frames into chunks of at least 2 and at
/// most `window` frames. A trailing single frame is absorbed by shortening
/// the previous chunk when possible, otherwise dropped: a feature matched in
/// only one frame constrains nothing.
fn chunk_run(run: usize, window: usize) -> Vec<(usize, usize)> {
    let w = window.max(2);
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut off = 0;
    while run - off > w {
        out.push((off, w));
        off += w;
    }
    match run - off {
        0 | 1 if out.is_empty() => {}
        1 => {
            let last = out.last_mut().expect("checked non-empty");
            if last.1 > 2 {
                last.1 -= 1;
                out.push((off - 1, 2));
            }
        }
        0 => {}
        rem => out.push((off, rem)),
    }
    out
}

/// True when the chord from the camera center to the wall point stays inside
/// the tube volume. When both endpoints sit in the same straight part, its
/// bore is convex and the chord is clear without marching.
fn unobstructed(network: &Network, camera: &Vector3<f64>, sp: &super::SurfacePoint) -> bool {
    let part = &network.parts()[sp.part];
    if let PartGeometry::Straight { start, t, length, .. } = &part.geometry {
        let q = camera - start;
        let axial = q.dot(t);
        if axial >= 0.0 && axial <= *length && (q - t * axial).norm() <= part.radius + MARCH_TOL {
            return true;
        }
    }
    let chord = sp.position - camera;
    let len = chord.norm();
    if len <= MARCH_SKIP_TAIL {
        return true;
    }
    let dir = chord / len;
    let stop = len - MARCH_SKIP_TAIL;
    let mut u = MARCH_STEP;
    while u < stop {
        if !network.inside(&(camera + dir * u), MARCH_TOL) {
            return false;
        }
        u += MARCH_STEP;
    }
    true
}
