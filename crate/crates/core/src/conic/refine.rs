//! Locally optimized refinement of a detected cone over its supporting points.

use nalgebra::{DVector, Vector3};

use super::cone::Cone;
use super::{ConicError, MIN_INVERSE_SLOPE};
use crate::ba;

/// Polishes a cone hypothesis on its supporting points by robust LM over the
/// geometric surface distance, re-selects the support once with the improved
/// shape, and polishes again (one local-optimization round).
///
/// `tau` doubles as the Cauchy scale of the robust loss and as the
/// re-selection threshold, so the same distance that accepted the points also
/// bounds their influence. Needs at least 9 points. If the optimum drifts to
/// an effectively constant radius (drift rate `1/c` below
/// [`MIN_INVERSE_SLOPE`]) the apex is no longer observable and
/// [`ConicError::DegenerateCylinder`] is returned so the caller can fall back
/// to a direct cylinder fit.
pub fn refine_cone(cone0: &Cone, points: &[Vector3<f64>], tau: f64) -> Result<Cone, ConicError> {
    if points.len() < 9 {
        return Err(ConicError::TooFewPoints { got: points.len(), need: 9 });
    }
    let cone = solve_once(cone0, points, tau)?;
    let kept: Vec<Vector3<f64>> =
        points.iter().copied().filter(|x| cone.distance(x) <= tau).collect();
    if kept.len() >= 9 && kept.len() < points.len() {
        return solve_once(&cone, &kept, tau);
    }
    Ok(cone)
}

fn solve_once(cone0: &Cone, points: &[Vector3<f64>], tau: f64) -> Result<Cone, ConicError> {
    let mut params = ba::ParamSet::new();
    let pose_id = params.add_pose(cone0.pose);
    let shape_id = params.add_vec(DVector::from_element(1, cone0.c));
    let loss = ba::Loss::Cauchy { scale: tau };
    let mut residuals = Vec::with_capacity(points.len());
    for x in points {
        let pid = params.add_point(*x);
        params.set_fixed(pid, true);
        residuals.push(ba::ConeSurface::new(pose_id, shape_id, pid, 1.0, loss));
    }
    let refs: Vec<&dyn ba::Residual> = residuals.iter().map(|r| r as &dyn ba::Residual).collect();
    let report = ba::solve(&mut params, &refs, &ba::SolveOptions::default());
    debug_assert!(report.final_cost <= report.initial_cost + 1e-12);

    let c = params.vec(shape_id)[0];
    if !c.is_finite() || c <= 0.0 {
        return Err(ConicError::RefineFailed(format!("slope left the feasible range: {c}")));
    }
    if 1.0 / c <= MIN_INVERSE_SLOPE {
        return Err(ConicError::DegenerateCylinder { inverse_slope: 1.0 / c });
    }
    Ok(Cone::from_params(c, *params.pose(pose_id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::solver::cone_from_nine_points;
    use crate::geom::{axis_angle_between, Pose};
    use nalgebra::Rotation3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let r = Rotation3::new(axis);
        let t = Vector3::new(
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
        );
        Pose::new(r, t)
    }

    /// Points on one nappe of the cone, optionally pushed off the surface
    /// along the local surface normal by `noise` standard deviations.
    fn sample_surface(
        cone: &Cone,
        n: usize,
        z_range: (f64, f64),
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vector3<f64>> {
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let world = cone.pose.inverse();
        (0..n)
            .map(|_| {
                let z = rng.random_range(z_range.0..z_range.1);
                let rho = z / cone.c + noise * normal.sample(rng);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                world.transform(&Vector3::new(rho * phi.cos(), rho * phi.sin(), z))
            })
            .collect()
    }

    #[test]
    fn exact_support_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let truth = Cone::from_params(rng.random_range(30.0..120.0), random_pose(&mut rng));
            let r0 = 8.0 * truth.c;
            let pts = sample_surface(&truth, 60, (r0, 3.0 * r0), 0.0, &mut rng);
            let refined = refine_cone(&truth, &pts, 0.64).unwrap();
            assert!((refined.c - truth.c).abs() < 1e-8 * truth.c);
            assert!(axis_angle_between(&refined.axis_dir(), &truth.axis_dir()) < 1e-9);
            for p in &pts {
                assert!(refined.distance(p) < 1e-9);
            }
        }
    }

    #[test]
    fn too_few_points_is_rejected() {
        let cone = Cone::from_params(50.0, Pose::identity());
        let pts = vec![Vector3::new(1.0, 0.0, 50.0); 8];
        assert!(matches!(
            refine_cone(&cone, &pts, 0.5),
            Err(ConicError::TooFewPoints { got: 8, need: 9 })
        ));
    }

    #[test]
    fn refinement_beats_the_minimal_sample() {
        // Monte-Carlo: a minimal 9-point hypothesis from noisy data is
        // crude; polishing on the full support must tighten the axis almost
        // always.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut improved = 0;
        let trials = 100;
        for _ in 0..trials {
            let truth = Cone::from_params(rng.random_range(30.0..100.0), random_pose(&mut rng));
            let r0 = 8.0 * truth.c;
            let pts = sample_surface(&truth, 300, (r0, 2.5 * r0), 0.1, &mut rng);
            let cone0 = loop {
                let sample: Vec<Vector3<f64>> =
                    pts.choose_multiple(&mut rng, 9).copied().collect();
                if let Ok(c) = cone_from_nine_points(&sample) {
                    if 1.0 / c.c < 0.2 {
                        break c;
                    }
                }
            };
            let err0 = axis_angle_between(&cone0.axis_dir(), &truth.axis_dir());
            if let Ok(refined) = refine_cone(&cone0, &pts, 0.64) {
                let err1 = axis_angle_between(&refined.axis_dir(), &truth.axis_dir());
                if err1 < err0 {
                    improved += 1;
                }
            }
        }
        assert!(improved >= 95, "axis improved in only {improved}/{trials} trials");
    }

    #[test]
    fn flat_support_degenerates_to_cylinder() {
        // Points on an exact cylinder: the best cone pushes the apex to
        // infinity, which must surface as the degenerate-cylinder signal
        // rather than a huge-slope cone.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pose = random_pose(&mut rng);
        let world = pose.inverse();
        let radius = 8.0;
        let pts: Vec<Vector3<f64>> = (0..400)
            .map(|_| {
                let z = rng.random_range(500.0..900.0);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                world.transform(&Vector3::new(radius * phi.cos(), radius * phi.sin(), z))
            })
            .collect();
        // Start from a mild cone through the same region.
        let cone0 = Cone::from_params(700.0 / radius, pose);
        match refine_cone(&cone0, &pts, 0.64) {
            Err(ConicError::DegenerateCylinder { inverse_slope }) => {
                assert!(inverse_slope.abs() <= MIN_INVERSE_SLOPE);
            }
            other => panic!("expected the cylinder degeneracy, got {other:?}"),
        }
    }
}
