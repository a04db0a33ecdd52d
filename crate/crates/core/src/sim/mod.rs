//! Synthetic pipe-network scenes, camera trajectories and feature tracks.
//!
//! The simulator stands in for endoscope footage and 2D feature matching: it
//! builds a tube network from a part list, threads a camera through it, and
//! emits noisy pixel tracks of points scattered over the inner walls, together
//! with the ground truth needed for evaluation. Every output is a pure
//! function of the specification and the seeds.

mod network;
mod observe;
mod trajectory;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use network::{build_network, BuiltPart, Network, PartGeometry, SurfacePoint};
pub use observe::{sample_observations, FrameRecord, TrackSet, TrackTruth};
pub use trajectory::generate_trajectory;

use crate::camera::{CameraError, Intrinsics};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid part {part}: {reason}")]
    InvalidSpec { part: usize, reason: String },
    #[error("parts {a} and {b} intersect away from their joint")]
    SelfIntersecting { a: usize, b: usize },
    #[error("invalid trajectory: {0}")]
    BadTrajectory(String),
    #[error("camera leaves the tube at frame {frame}")]
    CameraOutsideTube { frame: usize },
    #[error("intrinsics perturbation: {0}")]
    BadPerturbation(#[from] CameraError),
}

/// One piece of the network, in traversal order. Lengths and radii are in
/// millimeters, angles in degrees.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartKind {
    Straight {
        length: f64,
    },
    /// Circular bend of the centerline; `roll_deg` turns the bend plane
    /// about the incoming axis (0 keeps the network planar).
    Elbow {
        angle_deg: f64,
        bend_radius: f64,
        #[serde(default)]
        roll_deg: f64,
    },
    /// Junction piece: the camera passes straight through the main bore, the
    /// branch is a blind stub the camera never enters.
    Tee {
        stub_length: f64,
        #[serde(default)]
        roll_deg: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Part {
    #[serde(flatten)]
    pub kind: PartKind,
    /// Inner radius; falls back to the network-wide radius when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PipeNetworkSpec {
    /// Network-wide inner radius (mm) for parts without their own.
    pub radius: f64,
    pub parts: Vec<Part>,
}

/// Camera path parameters. The scope is inserted to the deep end and then
/// retracted while the camera keeps looking down the tube, the way an
/// inspection video is recorded.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrajectorySpec {
    /// Retraction speed in mm per frame.
    pub speed: f64,
    pub frames: usize,
    /// Peak lateral offset from the centerline (mm).
    #[serde(default)]
    pub wobble_mm: f64,
    /// Per-frame heading jitter in degrees.
    #[serde(default)]
    pub wobble_deg: f64,
    /// A centering attachment holds the head on the axis: the lateral wobble
    /// is suppressed, heading jitter remains.
    #[serde(default)]
    pub centering: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NoiseSpec {
    /// Gaussian pixel noise sigma added to each observation axis.
    #[serde(default)]
    pub sigma_px: f64,
}

/// The complete scenario file: network, camera path, feature texture and
/// noise. This is what the command line loads and hashes into the manifest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScenarioSpec {
    pub network: PipeNetworkSpec,
    pub trajectory: TrajectorySpec,
    /// Surface feature density in points per square millimeter.
    pub density: f64,
    #[serde(default = "NoiseSpec::default")]
    pub noise: NoiseSpec,
    /// Feature matching window: no track spans more than this many frames.
    pub window: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { sigma_px: 0.0 }
    }
}

/// Everything one simulation run produces: the geometry (with its sampled
/// surface points), the ground-truth camera path and the observed tracks.
pub struct Simulation {
    pub network: Network,
    pub poses: Vec<crate::geom::Pose>,
    pub tracks: TrackSet,
}

/// Runs the whole generator for a scenario. Sub-seeds for the independent
/// random processes are derived from the scenario seed so that one number
/// reproduces the run.
pub fn simulate(spec: &ScenarioSpec, k: &Intrinsics) -> Result<Simulation, SimError> {
    let network = build_network(&spec.network, spec.density, spec.seed)?;
    let poses = generate_trajectory(&network, &spec.trajectory)?;
    let obs_seed = spec.seed ^ 0x9e37_79b9_7f4a_7c15;
    let tracks =
        sample_observations(&network, &poses, k, spec.noise.sigma_px, spec.window, obs_seed);
    Ok(Simulation { network, poses, tracks })
}

/// Returns a copy of `k` with each field scaled by `1 + rel` of the matching
/// entry in `(fx, fy, k1, k2, u0, v0)`; used to hand the reconstruction a
/// deliberately wrong calibration.
pub fn perturb_intrinsics(k: &Intrinsics, rel: &[f64; 6]) -> Result<Intrinsics, SimError> {
    let mut a = k.as_array();
    for (v, r) in a.iter_mut().zip(rel) {
        *v *= 1.0 + r;
    }
    if a[0] <= 0.0 || a[1] <= 0.0 || !a[0].is_finite() || !a[1].is_finite() {
        return Err(SimError::BadPerturbation(CameraError::BadFocal { fx: a[0], fy: a[1] }));
    }
    Ok(Intrinsics::from_array(&a))
}

impl Part {
    pub(crate) fn radius_or(&self, fallback: f64) -> f64 {
        self.radius.unwrap_or(fallback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scenario_spec_round_trips_through_json() {
        let spec = ScenarioSpec {
            network: PipeNetworkSpec {
                radius: 8.05,
                parts: vec![
                    Part { kind: PartKind::Straight { length: 120.0 }, radius: None },
                    Part {
                        kind: PartKind::Elbow { angle_deg: 90.0, bend_radius: 24.0, roll_deg: 0.0 },
                        radius: None,
                    },
                    Part { kind: PartKind::Tee { stub_length: 30.0, roll_deg: 45.0 }, radius: Some(4.0) },
                ],
            },
            trajectory: TrajectorySpec {
                speed: 0.5,
                frames: 200,
                wobble_mm: 1.5,
                wobble_deg: 0.2,
                centering: false,
                seed: 11,
            },
            density: 0.2,
            noise: NoiseSpec { sigma_px: 0.5 },
            window: 50,
            seed: 7,
        };
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn parts_parse_from_tagged_json() {
        let text = r#"{
            "radius": 8.05,
            "parts": [
                {"kind": "straight", "length": 100.0},
                {"kind": "elbow", "angle_deg": 45.0, "bend_radius": 20.0},
                {"kind": "tee", "stub_length": 25.0, "radius": 4.0}
            ]
        }"#;
        let net: PipeNetworkSpec = serde_json::from_str(text).unwrap();
        assert_eq!(net.parts.len(), 3);
        assert!(matches!(net.parts[0].kind, PartKind::Straight { length } if length == 100.0));
        assert!(
            matches!(net.parts[1].kind, PartKind::Elbow { roll_deg, .. } if roll_deg == 0.0),
            "roll should default to zero"
        );
        assert_eq!(net.parts[2].radius, Some(4.0));
    }

    #[test]
    fn zero_perturbation_leaves_intrinsics_unchanged() {
        let k = Intrinsics::synthetic_default();
        let p = perturb_intrinsics(&k, &[0.0; 6]).unwrap();
        assert_eq!(p.as_array(), k.as_array());
    }

    #[test]
    fn single_field_perturbation_touches_only_that_field() {
        let k = Intrinsics::synthetic_default();
        let p = perturb_intrinsics(&k, &[0.0, 0.0, 0.02, 0.0, 0.0, 0.0]).unwrap();
        let (a, b) = (k.as_array(), p.as_array());
        for i in 0..6 {
            if i == 2 {
                assert_relative_eq!(b[i], a[i] * 1.02, max_relative = 1e-15);
            } else {
                assert_eq!(b[i], a[i]);
            }
        }
    }

    #[test]
    fn focal_collapse_is_rejected() {
        let k = Intrinsics::synthetic_default();
        assert!(matches!(
            perturb_intrinsics(&k, &[-1.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(SimError::BadPerturbation(_))
        ));
    }
}
