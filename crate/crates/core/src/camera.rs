//! Fisheye camera model.
//!
//! Projection follows the polar distortion form
//!
//! ```text
//! θ = atan2(√(x² + y²), z)          — angle off the optical axis
//! φ = atan2(y, x)                   — azimuth in the image plane
//! d(θ) = θ + k₁θ³ + k₂θ⁵            — radial distortion polynomial
//! u = f_x d(θ) cos φ + u₀
//! v = f_y d(θ) sin φ + v₀
//! ```
//!
//! Unprojection inverts `d(θ)` by bisection plus Newton polish on the bracket
//! `[0, θ_max]`; the polynomial must be strictly increasing there, which holds
//! for every calibration this crate ships and is verified on use.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound of the polar angle handled by unprojection, in radians (75°).
pub const THETA_MAX: f64 = 75.0 * std::f64::consts::PI / 180.0;

/// Convergence target for the radial root search, `|d(θ) - target|`.
pub const UNPROJECT_TOL: f64 = 1e-12;

/// Jacobian of a pixel with respect to the six intrinsic parameters,
/// ordered `(f_x, f_y, k_1, k_2, u_0, v_0)`.
pub type JacIntrinsics = nalgebra::SMatrix<f64, 2, 6>;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("point is behind the camera (z = {0:.6})")]
    BehindCamera(f64),
    #[error("pixel radius {radius:.6} exceeds d(θ_max) = {max:.6}; outside the modeled field of view")]
    OutsideFov { radius: f64, max: f64 },
    #[error("distortion polynomial is not monotonic on [0, θ_max]: d'({theta:.4}) = {slope:.4}")]
    NonMonotonic { theta: f64, slope: f64 },
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    BadFocal { fx: f64, fy: f64 },
    #[error("calibration input: {0}")]
    BadCalibrationInput(String),
    #[error("degenerate calibration geometry: {0}")]
    DegenerateCalibration(String),
}

/// Fisheye intrinsics as the flat parameter vector `(f_x, f_y, k_1, k_2, u_0, v_0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub k1: f64,
    pub k2: f64,
    pub u0: f64,
    pub v0: f64,
}

impl Intrinsics {
    /// The camera used by the synthetic bench: 1024×768 image, 120° field of
    /// view, mild barrel distortion.
    pub fn synthetic_default() -> Self {
        Intrinsics { fx: 416.0, fy: 416.0, k1: -0.12, k2: 0.01, u0: 512.0, v0: 384.0 }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.fx, self.fy, self.k1, self.k2, self.u0, self.v0]
    }

    pub fn from_array(a: &[f64; 6]) -> Self {
        Intrinsics { fx: a[0], fy: a[1], k1: a[2], k2: a[3], u0: a[4], v0: a[5] }
    }

    /// Like [`Intrinsics::from_array`] for unsized storage (optimizer blocks).
    /// Panics if `a` has fewer than 6 entries.
    pub fn from_slice(a: &[f64]) -> Self {
        Intrinsics { fx: a[0], fy: a[1], k1: a[2], k2: a[3], u0: a[4], v0: a[5] }
    }

    /// `d(θ)`.
    #[inline]
    pub fn d(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        theta * (1.0 + t2 * (self.k1 + t2 * self.k2))
    }

    /// `d'(θ)`.
    #[inline]
    pub fn d_prime(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        1.0 + t2 * (3.0 * self.k1 + 5.0 * self.k2 * t2)
    }

    /// Verifies that `d` is strictly increasing on `[0, θ_max]`.
    ///
    /// `d'` is quadratic in `s = θ²`, so the minimum over the interval is at an
    /// endpoint or at the vertex; all three are checked exactly.
    pub fn check_monotonic(&self) -> Result<(), CameraError> {
        let smax = THETA_MAX * THETA_MAX;
        let dp = |s: f64| 1.0 + 3.0 * self.k1 * s + 5.0 * self.k2 * s * s;
        let mut worst = (0.0_f64, dp(0.0));
        if dp(smax) < worst.1 {
            worst = (smax, dp(smax));
        }
        if self.k2 != 0.0 {
            let sv = -3.0 * self.k1 / (10.0 * self.k2);
            if sv > 0.0 && sv < smax && dp(sv) < worst.1 {
                worst = (sv, dp(sv));
            }
        }
        if worst.1 <= 0.0 {
            return Err(CameraError::NonMonotonic { theta: worst.0.sqrt(), slope: worst.1 });
        }
        Ok(())
    }

    /// Projects a camera-frame point to a pixel. The point must be in front of
    /// the camera; a point exactly on the optical axis maps to the principal
    /// point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        if p.z <= 0.0 {
            return Err(CameraError::BehindCamera(p.z));
        }
        let r = p.fixed_rows::<2>(0).norm();
        if r == 0.0 {
            return Ok(Vector2::new(self.u0, self.v0));
        }
        let theta = r.atan2(p.z);
        let d = self.d(theta);
        Ok(Vector2::new(self.fx * d * p.x / r + self.u0, self.fy * d * p.y / r + self.v0))
    }

    /// Projection together with its Jacobians with respect to the camera-frame
    /// point and to the intrinsics.
    pub fn project_with_jacobians(
        &self,
        p: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>, JacIntrinsics), CameraError> {
        if p.z <= 0.0 {
            return Err(CameraError::BehindCamera(p.z));
        }
        let (x, y, z) = (p.x, p.y, p.z);
        let r2 = x * x + y * y;
        let r = r2.sqrt();
        // On-axis limit: the projection degenerates to a pinhole with focal
        // f/z and the distortion coefficients drop out to first order.
        if r < 1e-12 * z {
            let pix = Vector2::new(self.u0, self.v0);
            let mut jp = Matrix2x3::zeros();
            jp[(0, 0)] = self.fx / z;
            jp[(1, 1)] = self.fy / z;
            let mut jk = JacIntrinsics::zeros();
            jk[(0, 4)] = 1.0;
            jk[(1, 5)] = 1.0;
            return Ok((pix, jp, jk));
        }
        let big_r2 = r2 + z * z;
        let theta = r.atan2(z);
        let d = self.d(theta);
        let dp = self.d_prime(theta);
        let g = d / r;
        let a = dp * z / big_r2;
        let q = (a - g) / r2;
        let pix = Vector2::new(self.fx * g * x + self.u0, self.fy * g * y + self.v0);

        let mut jp = Matrix2x3::zeros();
        jp[(0, 0)] = self.fx * (g + x * x * q);
        jp[(0, 1)] = self.fx * x * y * q;
        jp[(0, 2)] = -self.fx * x * dp / big_r2;
        jp[(1, 0)] = self.fy * x * y * q;
        jp[(1, 1)] = self.fy * (g + y * y * q);
        jp[(1, 2)] = -self.fy * y * dp / big_r2;

        let t3 = theta * theta * theta;
        let t5 = t3 * theta * theta;
        let (cphi, sphi) = (x / r, y / r);
        let mut jk = JacIntrinsics::zeros();
        jk[(0, 0)] = d * cphi;
        jk[(0, 2)] = self.fx * t3 * cphi;
        jk[(0, 3)] = self.fx * t5 * cphi;
        jk[(0, 4)] = 1.0;
        jk[(1, 1)] = d * sphi;
        jk[(1, 2)] = self.fy * t3 * sphi;
        jk[(1, 3)] = self.fy * t5 * sphi;
        jk[(1, 5)] = 1.0;
        Ok((pix, jp, jk))
    }

    /// Unprojects a pixel to a unit ray in the camera frame.
    pub fn unproject(&self, q: &Vector2<f64>) -> Result<Vector3<f64>, CameraError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::BadFocal { fx: self.fx, fy: self.fy });
        }
        self.check_monotonic()?;
        let mx = (q.x - self.u0) / self.fx;
        let my = (q.y - self.v0) / self.fy;
        let w = (mx * mx + my * my).sqrt();
        if w < 1e-14 {
            return Ok(Vector3::z());
        }
        let dmax = self.d(THETA_MAX);
        if w > dmax * (1.0 + 1e-12) {
            return Err(CameraError::OutsideFov { radius: w, max: dmax });
        }
        let theta = self.solve_theta(w.min(dmax));
        let (s, c) = theta.sin_cos();
        let phi_c = mx / w;
        let phi_s = my / w;
        Ok(Vector3::new(s * phi_c, s * phi_s, c))
    }

    /// Solves `d(θ) = w` on `[0, θ_max]` by bisection followed by Newton
    /// polish; the caller guarantees `0 ≤ w ≤ d(θ_max)` and monotonicity.
    fn solve_theta(&self, w: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, THETA_MAX);
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if self.d(mid) < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut theta = 0.5 * (lo + hi);
        for _ in 0..4 {
            let f = self.d(theta) - w;
            if f.abs() < UNPROJECT_TOL {
                break;
            }
            theta = (theta - f / self.d_prime(theta)).clamp(0.0, THETA_MAX);
        }
        theta
    }
}

/// One calibration image: an initial pose guess plus the grid points it sees.
#[derive(Clone, Debug)]
pub struct CalibrationView {
    /// World-to-camera pose guess, refined jointly with the intrinsics.
    pub pose: crate::geom::Pose,
    /// `(grid point in world coordinates, observed pixel)` pairs.
    pub points: Vec<(Vector3<f64>, Vector2<f64>)>,
}

/// Ratio `λ_min/λ_max` of the calibration normal matrix below which the
/// geometry is declared rank deficient.
const CALIBRATION_RANK_TOL: f64 = 1e-12;

/// Joint refinement of the intrinsics and the view poses by minimizing the
/// sum of squared reprojection errors of known grid points.
///
/// Requires at least 3 views with 6 points each, and an initial guess whose
/// distortion polynomial is monotonic. Degenerate geometry (for example grid
/// points that are collinear, leaving a rotation unobservable) is detected
/// from the rank of the normal equations at the initial guess.
pub fn calibrate(
    views: &[CalibrationView],
    k0: &Intrinsics,
) -> Result<(Intrinsics, Vec<crate::geom::Pose>), CameraError> {
    use crate::ba;

    if views.len() < 3 {
        return Err(CameraError::BadCalibrationInput(format!(
            "need at least 3 views, got {}",
            views.len()
        )));
    }
    if let Some((i, v)) = views.iter().enumerate().find(|(_, v)| v.points.len() < 6) {
        return Err(CameraError::BadCalibrationInput(format!(
            "view {i} has {} grid points, need at least 6",
            v.points.len()
        )));
    }
    if !k0.as_array().iter().all(|x| x.is_finite()) {
        return Err(CameraError::BadCalibrationInput(format!("non-finite initial guess {k0:?}")));
    }
    k0.check_monotonic()?;

    let mut params = ba::ParamSet::new();
    let kid = params.add_vec(nalgebra::DVector::from_column_slice(&k0.as_array()));
    let mut residuals: Vec<ba::Reprojection> = Vec::new();
    let mut pose_ids = Vec::new();
    for view in views {
        let pid = params.add_pose(view.pose);
        pose_ids.push(pid);
        for (world, pixel) in &view.points {
            let xid = params.add_point(*world);
            params.set_fixed(xid, true);
            residuals.push(ba::Reprojection::new(pid, xid, kid, *pixel, ba::Loss::Squared));
        }
    }
    let refs: Vec<&dyn ba::Residual> = residuals.iter().map(|r| r as &dyn ba::Residual).collect();

    let h = ba::normal_matrix(&params, &refs);
    let eigen = h.symmetric_eigen();
    let lmax = eigen.eigenvalues.amax();
    let lmin = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !lmax.is_finite() || lmax <= 0.0 || lmin < CALIBRATION_RANK_TOL * lmax {
        return Err(CameraError::DegenerateCalibration(format!(
            "normal equations are rank deficient (eigenvalue ratio {:.3e}); \
             the views do not constrain all intrinsic and pose parameters",
            lmin / lmax.max(f64::MIN_POSITIVE)
        )));
    }

    let report = ba::solve(
        &mut params,
        &refs,
        &ba::SolveOptions { max_iters: 120, ..Default::default() },
    );
    debug_assert!(report.final_cost <= report.initial_cost);
    let k = Intrinsics::from_slice(params.vec(kid).as_slice());
    k.check_monotonic()?;
    let poses = pose_ids.iter().map(|&p| *params.pose(p)).collect();
    Ok((k, poses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_intrinsics() -> Intrinsics {
        Intrinsics { fx: 416.0, fy: 409.5, k1: -0.12, k2: 0.01, u0: 512.3, v0: 383.6 }
    }

    #[test]
    fn on_axis_maps_to_principal_point() {
        let k = test_intrinsics();
        let pix = k.project(&Vector3::new(0.0, 0.0, 3.7)).unwrap();
        assert_eq!(pix, Vector2::new(k.u0, k.v0));
        let ray = k.unproject(&pix).unwrap();
        assert_relative_eq!(ray, Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let k = test_intrinsics();
        assert!(matches!(k.project(&Vector3::new(0.1, 0.2, 0.0)), Err(CameraError::BehindCamera(_))));
        assert!(matches!(k.project(&Vector3::new(0.1, 0.2, -5.0)), Err(CameraError::BehindCamera(_))));
    }

    #[test]
    fn pixel_outside_image_circle_is_rejected() {
        let k = test_intrinsics();
        let far = Vector2::new(k.u0 + k.fx * (k.d(THETA_MAX) + 0.05), k.v0);
        assert!(matches!(k.unproject(&far), Err(CameraError::OutsideFov { .. })));
    }

    #[test]
    fn strongly_negative_k1_fails_monotonicity() {
        let mut k = test_intrinsics();
        k.k1 = -0.6;
        assert!(matches!(k.check_monotonic(), Err(CameraError::NonMonotonic { .. })));
        assert!(k.unproject(&Vector2::new(600.0, 400.0)).is_err());
    }

    #[test]
    fn monotonicity_check_matches_dense_sampling() {
        // Oracle: sample d' densely and compare the verdict.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let k = Intrinsics {
                k1: rng.random_range(-0.5..0.3),
                k2: rng.random_range(-0.15..0.15),
                ..test_intrinsics()
            };
            let sampled_ok = (0..=4000)
                .map(|i| THETA_MAX * i as f64 / 4000.0)
                .all(|t| k.d_prime(t) > 1e-9);
            match k.check_monotonic() {
                Ok(()) => assert!(sampled_ok, "analytic check accepted {k:?} but sampling finds d' <= 0"),
                Err(_) => assert!(
                    (0..=4000).map(|i| THETA_MAX * i as f64 / 4000.0).any(|t| k.d_prime(t) <= 1e-6),
                    "analytic check rejected {k:?} but d' stays positive"
                ),
            }
        }
    }

    #[test]
    fn unproject_root_is_tight() {
        let k = test_intrinsics();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let theta: f64 = rng.random_range(0.0..THETA_MAX);
            let w = k.d(theta);
            let recovered = k.solve_theta(w);
            assert!((k.d(recovered) - w).abs() < UNPROJECT_TOL, "θ = {theta}");
        }
    }

    #[test]
    fn project_unproject_roundtrip_grid() {
        let k = test_intrinsics();
        for i in 0..40 {
            for j in 0..12 {
                let theta = 74.0_f64.to_radians() * (i as f64 + 0.5) / 40.0;
                let phi = std::f64::consts::TAU * j as f64 / 12.0;
                let ray = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                let p = ray * 17.3;
                let pix = k.project(&p).unwrap();
                let back = k.unproject(&pix).unwrap();
                assert!(back.cross(&ray).norm() < 1e-9, "ray mismatch at θ={theta} φ={phi}");
                let pix2 = k.project(&(back * 5.0)).unwrap();
                assert!((pix - pix2).norm() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn roundtrip_random(theta in 1e-6..1.29_f64, phi in 0.0..std::f64::consts::TAU, depth in 0.1..500.0_f64) {
            let k = test_intrinsics();
            let ray = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let pix = k.project(&(ray * depth)).unwrap();
            let back = k.unproject(&pix).unwrap();
            prop_assert!(back.cross(&ray).norm() < 1e-9);
            prop_assert!((back.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn projection_is_scale_invariant(theta in 1e-3..1.2_f64, phi in 0.0..std::f64::consts::TAU, s in 0.01..50.0_f64) {
            let k = test_intrinsics();
            let ray = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let a = k.project(&ray).unwrap();
            let b = k.project(&(ray * s)).unwrap();
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    /// Central finite-difference Jacobians; shared oracle for the analytic ones.
    pub(crate) fn fd_jacobians(k: &Intrinsics, p: &Vector3<f64>) -> (Matrix2x3<f64>, JacIntrinsics) {
        let h = 1e-6;
        let mut jp = Matrix2x3::zeros();
        for i in 0..3 {
            let mut lo = *p;
            let mut hi = *p;
            lo[i] -= h;
            hi[i] += h;
            let d = (k.project(&hi).unwrap() - k.project(&lo).unwrap()) / (2.0 * h);
            jp.set_column(i, &d);
        }
        let mut jk = JacIntrinsics::zeros();
        let base = k.as_array();
        for i in 0..6 {
            let mut lo = base;
            let mut hi = base;
            lo[i] -= h;
            hi[i] += h;
            let d = (Intrinsics::from_array(&hi).project(p).unwrap()
                - Intrinsics::from_array(&lo).project(p).unwrap())
                / (2.0 * h);
            jk.set_column(i, &d);
        }
        (jp, jk)
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..1500 {
            let k = Intrinsics {
                fx: rng.random_range(200.0..800.0),
                fy: rng.random_range(200.0..800.0),
                k1: rng.random_range(-0.2..0.1),
                k2: rng.random_range(-0.02..0.05),
                u0: rng.random_range(400.0..600.0),
                v0: rng.random_range(300.0..500.0),
            };
            let theta: f64 = rng.random_range(1e-3..1.25);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let depth: f64 = rng.random_range(0.05..200.0);
            let p = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * depth;
            let (_, jp, jk) = k.project_with_jacobians(&p).unwrap();
            let (fjp, fjk) = fd_jacobians(&k, &p);
            let rel_p = (jp - fjp).norm() / jp.norm().max(1e-9);
            let rel_k = (jk - fjk).norm() / jk.norm().max(1e-9);
            assert!(rel_p < 1e-4, "point jacobian off at trial {trial}: rel {rel_p}");
            assert!(rel_k < 1e-4, "intrinsics jacobian off at trial {trial}: rel {rel_k}");
        }
    }

    #[test]
    fn jacobian_on_axis_limit_is_continuous() {
        let k = test_intrinsics();
        let (_, jp0, jk0) = k.project_with_jacobians(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        let (_, jp1, jk1) = k.project_with_jacobians(&Vector3::new(1e-9, 1e-9, 2.0)).unwrap();
        assert!((jp0 - jp1).norm() < 1e-5);
        assert!((jk0 - jk1).norm() < 1e-5);
    }

    /// 5x4 planar grid on z = 0, viewed from three tilted positions. Returns
    /// exact projections under `k`; `noise_px` adds Gaussian pixel noise.
    fn grid_views(k: &Intrinsics, noise_px: f64, seed: u64) -> Vec<CalibrationView> {
        use crate::geom::Pose;
        use nalgebra::Rotation3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut grid = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                grid.push(Vector3::new(
                    (i as f64 - 2.0) * 14.0,
                    (j as f64 - 1.5) * 14.0,
                    0.0,
                ));
            }
        }
        let mut views = Vec::new();
        for v in 0..4 {
            let tilt = Rotation3::from_euler_angles(
                0.3 * (v as f64 - 1.5),
                0.2 * (v as f64 - 1.0),
                0.4 * v as f64,
            );
            // Close enough that the grid sweeps a wide cone of view
            // directions; otherwise the quintic distortion term is barely
            // observable and pixel noise sends it anywhere.
            let r = tilt;
            let t = Vector3::new(3.0 * v as f64 - 4.0, 2.0 - v as f64, 42.0 + 4.0 * v as f64);
            let pose = Pose::new(r, t);
            let mut points = Vec::new();
            for g in &grid {
                let mut pix = k.project(&pose.transform(g)).unwrap();
                if noise_px > 0.0 {
                    pix.x += noise_px * normal.sample(&mut rng);
                    pix.y += noise_px * normal.sample(&mut rng);
                }
                points.push((*g, pix));
            }
            views.push(CalibrationView { pose, points });
        }
        views
    }

    #[test]
    fn calibrate_leaves_exact_data_unchanged() {
        let truth = test_intrinsics();
        let views = grid_views(&truth, 0.0, 0);
        let (k, poses) = calibrate(&views, &truth).unwrap();
        for (a, b) in k.as_array().iter().zip(truth.as_array()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{k:?} vs {truth:?}");
        }
        for (refined, view) in poses.iter().zip(&views) {
            assert!(crate::geom::rotation_angle(&refined.r, &view.pose.r) < 1e-10);
            assert!((refined.t - view.pose.t).norm() < 1e-8);
        }
    }

    #[test]
    fn calibrate_recovers_from_biased_focal_guess() {
        let truth = test_intrinsics();
        let views = grid_views(&truth, 0.0, 1);
        let k0 = Intrinsics { fx: truth.fx * 1.05, ..truth };
        let (k, _) = calibrate(&views, &k0).unwrap();
        for (a, b) in k.as_array().iter().zip(truth.as_array()) {
            assert!(
                (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                "recovered {k:?}, expected {truth:?}"
            );
        }
    }

    #[test]
    fn calibrate_handles_pixel_noise() {
        let truth = test_intrinsics();
        let views = grid_views(&truth, 0.2, 2);
        let k0 = Intrinsics { fx: truth.fx * 1.02, fy: truth.fy * 0.98, ..truth };
        let (k, _) = calibrate(&views, &k0).unwrap();
        for (a, b) in k.as_array().iter().zip(truth.as_array()) {
            assert!(
                (a - b).abs() <= 0.01 * b.abs().max(1.0),
                "recovered {k:?}, expected {truth:?}"
            );
        }
    }

    #[test]
    fn calibrate_rejects_too_few_views_or_points() {
        let truth = test_intrinsics();
        let mut views = grid_views(&truth, 0.0, 3);
        views.truncate(2);
        assert!(matches!(
            calibrate(&views, &truth),
            Err(CameraError::BadCalibrationInput(_))
        ));
        let mut views = grid_views(&truth, 0.0, 3);
        views[1].points.truncate(5);
        assert!(matches!(
            calibrate(&views, &truth),
            Err(CameraError::BadCalibrationInput(_))
        ));
    }

    #[test]
    fn calibrate_detects_collinear_grid() {
        // Points along one world line cannot pin the rotation about that
        // line, so the normal equations must come out rank deficient.
        let truth = test_intrinsics();
        let mut views = grid_views(&truth, 0.0, 4);
        for view in &mut views {
            let kept: Vec<_> = (0..8)
                .map(|i| Vector3::new((i as f64 - 3.5) * 10.0, 0.0, 0.0))
                .map(|g| (g, truth.project(&view.pose.transform(&g)).unwrap()))
                .collect();
            view.points = kept;
        }
        assert!(matches!(
            calibrate(&views, &truth),
            Err(CameraError::DegenerateCalibration(_))
        ));
    }
}
