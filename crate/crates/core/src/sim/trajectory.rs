//! Camera paths through a pipe network.
//!
//! The simulated scope is inserted to the deep end of the network and then
//! pulled back at a constant speed, lens facing down the tube the way it went
//! in. Handheld operation is modeled by two independent disturbances: a slow
//! lateral drift off the centerline and a small frame-to-frame heading
//! jitter. Both are bounded, seeded, and reproducible.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Network, SimError, TrajectorySpec};
use crate::geom::Pose;

/// The first exposure happens this many tube radii short of the deep end.
const END_MARGIN_RADII: f64 = 1.0;
/// Heading jitter is a random walk clamped to this many single-frame steps,
/// so the lens never wanders far from the tube axis.
const MAX_JITTER_STEPS: f64 = 6.0;

/// One slowly varying, bounded oscillation: the sum of two seeded sinusoids
/// with amplitudes 0.6 and 0.4, so the total stays within ±1.
struct Sway {
    freq: [f64; 2],
    phase: [f64; 2],
}

impl Sway {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Sway {
            freq: [rng.random_range(0.02..0.15), rng.random_range(0.02..0.15)],
            phase: [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ],
        }
    }

    fn at(&self, frame: usize) -> f64 {
        let x = frame as f64;
        0.6 * (self.freq[0] * x + self.phase[0]).sin() + 0.4 * (self.freq[1] * x + self.phase[1]).sin()
    }
}

/// Builds the world-to-camera pose for every frame of a retraction pass.
///
/// Frame `f` sits at arclength `s0 - speed * (f + 1)`, where `s0` is one tube
/// radius short of the total length; over the whole video the camera travels
/// `speed * frames` millimeters. The optical axis follows the local tangent
/// pointing toward the deep end, so the camera backs away from what it sees.
pub fn generate_trajectory(
    network: &Network,
    spec: &TrajectorySpec,
) -> Result<Vec<Pose>, SimError> {
    if !spec.speed.is_finite() || spec.speed <= 0.0 {
        return Err(SimError::BadTrajectory(format!("speed {} mm/frame", spec.speed)));
    }
    if spec.frames < 2 {
        return Err(SimError::BadTrajectory("need at least two frames".into()));
    }
    if !spec.wobble_mm.is_finite() || spec.wobble_mm < 0.0 {
        return Err(SimError::BadTrajectory(format!("lateral wobble {} mm", spec.wobble_mm)));
    }
    if !spec.wobble_deg.is_finite() || spec.wobble_deg < 0.0 {
        return Err(SimError::BadTrajectory(format!("heading wobble {} deg", spec.wobble_deg)));
    }

    let deep_radius = network.parts().last().map_or(0.0, |p| p.radius);
    let s0 = network.total_length() - END_MARGIN_RADII * deep_radius;
    let travel = spec.speed * spec.frames as f64;
    if s0 - travel < 0.0 {
        return Err(SimError::BadTrajectory(format!(
            "retracting {travel:.1} mm overruns the usable {s0:.1} mm of the network"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sway_n = Sway::draw(&mut rng);
    let sway_b = Sway::draw(&mut rng);
    // The two axes sway independently and add in quadrature, so each gets
    // wobble/√2 to keep the radial excursion within the requested bound.
    let lateral =
        if spec.centering { 0.0 } else { spec.wobble_mm * std::f64::consts::FRAC_1_SQRT_2 };
    let rate = spec.wobble_deg.to_radians();
    let clamp = MAX_JITTER_STEPS * rate;
    let mut pitch = 0.0_f64;
    let mut yaw = 0.0_f64;

    let mut poses = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let s = s0 - spec.speed * (f + 1) as f64;
        let (p, [n, b, t]) = network.frame_at(s);
        let c = p + n * (lateral * sway_n.at(f)) + b * (lateral * sway_b.at(f));
        if !network.inside(&c, 0.0) {
            return Err(SimError::CameraOutsideTube { frame: f });
        }
        if rate > 0.0 {
            pitch = (pitch + rng.random_range(-rate..rate)).clamp(-clamp, clamp);
            yaw = (yaw + rng.random_range(-rate..rate)).clamp(-clamp, clamp);
        }
        // World-to-camera: rows are the camera axes, with the lens along the
        // tangent. Jitter is applied in the camera frame.
        let base = Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
            n.transpose(),
            b.transpose(),
            t.transpose(),
        ]));
        let jitter = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch);
        let r = jitter * base;
        let mut pose = Pose::new(r, -(r * c));
        pose.renormalize();
        poses.push(pose);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::angle_between;
    use crate::sim::{build_network, Part, PartKind, PipeNetworkSpec};
    use approx::assert_relative_eq;

    fn straight(length: f64) -> Part {
        Part { kind: PartKind::Straight { length }, radius: None }
    }

    fn elbow(angle_deg: f64, bend_radius: f64) -> Part {
        Part { kind: PartKind::Elbow { angle_deg, bend_radius, roll_deg: 0.0 }, radius: None }
    }

    fn net(radius: f64, parts: Vec<Part>) -> Network {
        build_network(&PipeNetworkSpec { radius, parts }, 0.01, 1).unwrap()
    }

    fn spec(speed: f64, frames: usize) -> TrajectorySpec {
        TrajectorySpec { speed, frames, wobble_mm: 0.0, wobble_deg: 0.0, centering: true, seed: 5 }
    }

    /// World-frame optical axis of a pose.
    fn look_dir(pose: &Pose) -> Vector3<f64> {
        pose.r.inverse() * Vector3::z()
    }

    #[test]
    fn centered_pass_retracts_along_the_axis() {
        let network = net(8.05, vec![straight(150.0)]);
        let poses = generate_trajectory(&network, &spec(0.5, 200)).unwrap();
        assert_eq!(poses.len(), 200);
        let s0 = 150.0 - 8.05;
        for (f, pose) in poses.iter().enumerate() {
            let c = pose.center();
            assert!(c.fixed_rows::<2>(0).norm() < 1e-12, "frame {f} off axis");
            assert_relative_eq!(c.z, s0 - 0.5 * (f + 1) as f64, epsilon = 1e-9);
            assert!(angle_between(&look_dir(pose), &Vector3::z()) < 1e-12);
        }
        // The camera backs up by one step per frame, covering speed*frames.
        assert_relative_eq!(poses[0].center().z - poses[199].center().z, 0.5 * 199.0, epsilon = 1e-9);
    }

    #[test]
    fn wobble_deviates_but_stays_inside() {
        let network = net(8.05, vec![straight(80.0), elbow(90.0, 24.0), straight(80.0)]);
        let mut s = spec(0.5, 300);
        s.centering = false;
        s.wobble_mm = 2.5;
        s.wobble_deg = 0.4;
        let wobbly = generate_trajectory(&network, &s).unwrap();
        let reference = generate_trajectory(&network, &spec(0.5, 300)).unwrap();
        let mut peak = 0.0_f64;
        for (w, r) in wobbly.iter().zip(&reference) {
            let lateral = (w.center() - r.center()).norm();
            assert!(lateral <= 2.5 + 1e-9);
            peak = peak.max(lateral);
            // Heading jitter is clamped to a few tenths of a degree.
            let tilt = angle_between(&look_dir(w), &look_dir(r));
            assert!(tilt <= (6.0_f64 * 0.4 * 2.0_f64.sqrt()).to_radians() + 1e-9);
            assert!(network.inside(&w.center(), 0.0));
        }
        assert!(peak > 0.5, "wobble never exceeded {peak} mm");
    }

    #[test]
    fn overrunning_the_network_is_rejected() {
        let network = net(8.05, vec![straight(50.0)]);
        assert!(matches!(
            generate_trajectory(&network, &spec(1.0, 100)),
            Err(SimError::BadTrajectory(_))
        ));
    }

    #[test]
    fn excessive_wobble_reports_the_offending_frame() {
        let network = net(8.05, vec![straight(100.0)]);
        let mut s = spec(0.2, 100);
        s.centering = false;
        s.wobble_mm = 20.0;
        s.seed = 3;
        assert!(matches!(
            generate_trajectory(&network, &s),
            Err(SimError::CameraOutsideTube { .. })
        ));
        // A centering attachment suppresses the same wobble.
        s.centering = true;
        assert!(generate_trajectory(&network, &s).is_ok());
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        let network = net(8.05, vec![straight(100.0)]);
        for bad in [
            spec(0.0, 100),
            spec(-1.0, 100),
            spec(f64::NAN, 100),
            spec(0.5, 1),
            TrajectorySpec { wobble_mm: -1.0, ..spec(0.5, 50) },
            TrajectorySpec { wobble_deg: f64::INFINITY, ..spec(0.5, 50) },
        ] {
            assert!(matches!(
                generate_trajectory(&network, &bad),
                Err(SimError::BadTrajectory(_))
            ));
        }
    }

    #[test]
    fn paths_are_deterministic_per_seed() {
        let network = net(8.05, vec![straight(80.0), elbow(60.0, 24.0), straight(80.0)]);
        let mut s = spec(0.5, 200);
        s.centering = false;
        s.wobble_mm = 1.5;
        s.wobble_deg = 0.3;
        let a = generate_trajectory(&network, &s).unwrap();
        let b = generate_trajectory(&network, &s).unwrap();
        assert_eq!(a, b);
        s.seed = 6;
        let c = generate_trajectory(&network, &s).unwrap();
        assert_ne!(a, c);
    }
}
