//! Absolute pose from three 2D-3D correspondences.
//!
//! Solves the perspective-three-point problem with Grunert's distance
//! formulation: the three unknown depths along the viewing rays satisfy a
//! quartic in the ratio `v = d3 / d1`, and each admissible root yields a
//! candidate camera pose via rigid alignment of the back-projected points
//! against their world coordinates. Up to four candidates are returned;
//! disambiguation is left to the caller (typically a RANSAC consensus step
//! over additional correspondences).

use nalgebra::{Complex, Matrix3, Vector3};

use crate::geom::{rotation_angle, Pose};

/// Tolerance for treating an imaginary root component as noise.
const IMAG_TOL: f64 = 1e-6;

/// Evaluate a polynomial with descending coefficients at `x`.
fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Derivative coefficients (descending order) of a descending-order polynomial.
fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    coeffs[..n - 1]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * (n - 1 - i) as f64)
        .collect()
}

/// Real roots of a polynomial given by descending coefficients.
///
/// Leading coefficients that are negligible against the largest magnitude are
/// trimmed so nearly-degenerate quartics degrade gracefully to cubics or
/// quadratics. Roots are extracted from the companion matrix spectrum and
/// polished with a few Newton iterations on the original polynomial.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let normalized: Vec<f64> = coeffs.iter().map(|c| c / scale).collect();
    let mut lead = 0;
    while lead + 1 < normalized.len() && normalized[lead].abs() < 1e-12 {
        lead += 1;
    }
    let trimmed = &normalized[lead..];
    if trimmed.len() < 2 {
        return Vec::new();
    }

    let mut roots = candidate_real_roots(trimmed);
    let deriv = poly_derivative(trimmed);
    for r in &mut roots {
        for _ in 0..3 {
            let f = poly_eval(trimmed, *r);
            let fp = poly_eval(&deriv, *r);
            if fp.abs() < 1e-300 {
                break;
            }
            let step = f / fp;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    roots.retain(|r| r.is_finite());
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + a.abs()));
    roots
}

/// Approximate real roots of a polynomial with descending coefficients
/// (degree 1 to 4). Linear and quadratic cases are closed-form; higher
/// degrees use the Durand-Kerner simultaneous iteration, which converges
/// from a fixed asymmetric start for any polynomial with finite roots and
/// needs no eigenvalue machinery. Accuracy is finished off by the Newton
/// polish in the caller.
fn candidate_real_roots(coeffs: &[f64]) -> Vec<f64> {
    let lead = coeffs[0];
    let monic: Vec<f64> = coeffs[1..].iter().map(|c| c / lead).collect();
    match monic.len() {
        1 => vec![-monic[0]],
        2 => {
            // x^2 + b x + c, solved with the numerically stable split.
            let (b, c) = (monic[0], monic[1]);
            let disc = b * b - 4.0 * c;
            if disc < 0.0 {
                Vec::new()
            } else {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                if q == 0.0 {
                    vec![0.0]
                } else {
                    vec![q, c / q]
                }
            }
        }
        _ => {
            let n = monic.len();
            let full: Vec<Complex<f64>> = std::iter::once(Complex::new(1.0, 0.0))
                .chain(monic.iter().map(|&c| Complex::new(c, 0.0)))
                .collect();
            let eval = |z: Complex<f64>| {
                full.iter().fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c)
            };
            // Cauchy bound on the root magnitudes seeds a spiral of starting
            // points with no symmetry the iteration could get stuck on.
            let radius = 1.0 + monic.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
            let seed = Complex::new(0.4, 0.9);
            let mut roots: Vec<Complex<f64>> = (0..n)
                .map(|k| seed.powu(k as u32 + 1) * radius)
                .collect();
            for _ in 0..200 {
                let mut max_step = 0.0_f64;
                for i in 0..n {
                    let mut denom = Complex::new(1.0, 0.0);
                    for j in 0..n {
                        if j != i {
                            denom *= roots[i] - roots[j];
                        }
                    }
                    if denom.norm() < 1e-300 {
                        continue;
                    }
                    let step = eval(roots[i]) / denom;
                    roots[i] -= step;
                    max_step = max_step.max(step.norm());
                }
                if max_step < 1e-14 * radius {
                    break;
                }
            }
            roots
                .into_iter()
                .filter(|z| z.im.abs() < IMAG_TOL * (1.0 + z.re.abs()))
                .map(|z| z.re)
                .collect()
        }
    }
}

/// Least-squares rigid alignment mapping `world` points onto `camera` points.
///
/// Returns the pose (rotation plus translation) minimizing the sum of squared
/// distances `|R x_w + t - x_c|^2`, computed with the SVD-based orthogonal
/// Procrustes solution and a determinant correction to exclude reflections.
fn absolute_orientation(world: &[Vector3<f64>; 3], camera: &[Vector3<f64>; 3]) -> Option<Pose> {
    let wc = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (camera[0] + camera[1] + camera[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (camera[i] - cc) * (world[i] - wc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * v_t).determinant().signum();
    let r = u * d * v_t;
    let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
    let mut pose = Pose::new(rot, cc - rot * wc);
    pose.renormalize();
    Some(pose)
}

/// Candidate camera poses consistent with three ray/point correspondences.
///
/// `rays` are viewing directions in the camera frame (need not be unit
/// length); `points` are the corresponding world coordinates. Each returned
/// pose maps world coordinates into the camera frame with all three points at
/// positive depth. The list may be empty for degenerate input (collinear
/// points, coincident rays) and contains at most four candidates.
pub fn solve_p3p(rays: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let b1 = rays[0].normalize();
    let b2 = rays[1].normalize();
    let b3 = rays[2].normalize();

    // Squared side lengths of the world triangle, named after the opposing
    // vertex: side a joins points 2 and 3, et cetera.
    let aa = (points[1] - points[2]).norm_squared();
    let bb = (points[0] - points[2]).norm_squared();
    let cc = (points[0] - points[1]).norm_squared();
    if aa <= 0.0 || bb <= 0.0 || cc <= 0.0 {
        return Vec::new();
    }

    // Cosines of the angles subtended between ray pairs, matching the side
    // naming: alpha spans rays 2-3, beta 1-3, gamma 1-2.
    let ca = b2.dot(&b3);
    let cb = b1.dot(&b3);
    let cg = b1.dot(&b2);

    let a4 = aa * aa - 2.0 * aa * bb - 2.0 * aa * cc + bb * bb - 4.0 * bb * cc * ca * ca
        + 2.0 * bb * cc
        + cc * cc;
    let a3 = -4.0
        * (aa * aa * cb - aa * bb * ca * cg - aa * bb * cb - 2.0 * aa * cc * cb
            + bb * bb * ca * cg
            - 2.0 * bb * cc * ca * ca * cb
            - bb * cc * ca * cg
            + bb * cc * cb
            + cc * cc * cb);
    let a2 = 2.0
        * (2.0 * aa * aa * cb * cb + aa * aa
            - 4.0 * aa * bb * ca * cb * cg
            - 2.0 * aa * bb * cg * cg
            - 4.0 * aa * cc * cb * cb
            - 2.0 * aa * cc
            + 2.0 * bb * bb * ca * ca
            + 2.0 * bb * bb * cg * cg
            - bb * bb
            - 2.0 * bb * cc * ca * ca
            - 4.0 * bb * cc * ca * cb * cg
            + 2.0 * cc * cc * cb * cb
            + cc * cc);
    let a1 = -4.0
        * (aa * aa * cb - aa * bb * ca * cg - 2.0 * aa * bb * cb * cg * cg + aa * bb * cb
            - 2.0 * aa * cc * cb
            + bb * bb * ca * cg
            - bb * cc * ca * cg
            - bb * cc * cb
            + cc * cc * cb);
    let a0 = aa * aa - 4.0 * aa * bb * cg * cg + 2.0 * aa * bb - 2.0 * aa * cc + bb * bb
        - 2.0 * bb * cc
        + cc * cc;

    let mut candidates = Vec::new();
    for v in real_roots(&[a4, a3, a2, a1, a0]) {
        if v <= 0.0 {
            continue;
        }
        let den = 2.0 * bb * (cg - v * ca);
        if den.abs() < 1e-14 * (1.0 + bb) {
            continue;
        }
        let u = ((aa - cc) * (1.0 + v * v - 2.0 * v * cb) - bb * (v * v - 1.0)) / den;
        if u <= 0.0 {
            continue;
        }
        let d1_sq = cc / (1.0 + u * u - 2.0 * u * cg);
        if !(d1_sq.is_finite() && d1_sq > 0.0) {
            continue;
        }
        let d1 = d1_sq.sqrt();
        let camera = [b1 * d1, b2 * (u * d1), b3 * (v * d1)];
        if let Some(pose) = absolute_orientation(points, &camera) {
            let duplicate = candidates.iter().any(|prev: &Pose| {
                rotation_angle(&prev.r, &pose.r) < 1e-7
                    && (prev.t - pose.t).norm() < 1e-7 * (1.0 + d1)
            });
            if !duplicate {
                candidates.push(pose);
            }
        }
    }
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..2.5);
        let r = if axis.norm() < 1e-6 {
            Rotation3::identity()
        } else {
            Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        };
        let t = Vector3::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
        );
        Pose::new(r, t)
    }

    fn random_camera_point(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        // A direction within roughly 55 degrees of the optical axis, at a
        // depth between 4 and 40 units.
        loop {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.3..1.0),
            );
            if dir.norm() < 1e-3 {
                continue;
            }
            let dir = dir.normalize();
            if dir.z < 0.55 {
                continue;
            }
            return dir * rng.random_range(4.0..40.0);
        }
    }

    #[test]
    fn recovers_exact_poses_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let trials = 300;
        for trial in 0..trials {
            let pose = random_pose(&mut rng);
            let (rays, world) = loop {
                let in_cam = [
                    random_camera_point(&mut rng),
                    random_camera_point(&mut rng),
                    random_camera_point(&mut rng),
                ];
                let spread = (in_cam[1] - in_cam[0])
                    .cross(&(in_cam[2] - in_cam[0]))
                    .norm();
                if spread < 5.0 {
                    continue;
                }
                let inv = pose.inverse();
                break (
                    [in_cam[0], in_cam[1], in_cam[2]],
                    [
                        inv.transform(&in_cam[0]),
                        inv.transform(&in_cam[1]),
                        inv.transform(&in_cam[2]),
                    ],
                );
            };
            let candidates = solve_p3p(&rays, &world);
            let hit = candidates.iter().any(|cand| {
                rotation_angle(&cand.r, &pose.r) < 1e-6
                    && (cand.t - pose.t).norm() < 1e-6 * (1.0 + pose.t.norm())
            });
            assert!(
                hit,
                "trial {trial}: true pose missing from {} candidates",
                candidates.len()
            );
        }
    }

    #[test]
    fn candidates_reproject_the_input_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let in_cam = [
                random_camera_point(&mut rng),
                random_camera_point(&mut rng),
                random_camera_point(&mut rng),
            ];
            let inv = pose.inverse();
            let world = [
                inv.transform(&in_cam[0]),
                inv.transform(&in_cam[1]),
                inv.transform(&in_cam[2]),
            ];
            for cand in solve_p3p(&in_cam, &world) {
                for i in 0..3 {
                    let mapped = cand.transform(&world[i]);
                    assert!(mapped.z > 0.0, "candidate places point behind camera");
                    let angle = crate::geom::angle_between(&mapped, &in_cam[i]);
                    assert!(angle < 1e-5, "ray misaligned by {angle}");
                }
            }
        }
    }

    #[test]
    fn collinear_points_yield_no_spurious_exact_candidates() {
        // Collinear world points make the problem degenerate; the solver may
        // return candidates but must not panic and must keep depths positive.
        let rays = [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.1, 0.0, 1.0),
            Vector3::new(0.2, 0.0, 1.0),
        ];
        let points = [
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(1.0, 0.0, 10.0),
            Vector3::new(2.0, 0.0, 10.0),
        ];
        let candidates = solve_p3p(&rays, &points);
        for cand in candidates {
            for p in &points {
                assert!(cand.transform(p).z > 0.0);
            }
        }
    }

    #[test]
    fn coincident_world_points_are_rejected() {
        let rays = [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.1, 0.0, 1.0),
            Vector3::new(0.0, 0.1, 1.0),
        ];
        let points = [
            Vector3::new(1.0, 2.0, 10.0),
            Vector3::new(1.0, 2.0, 10.0),
            Vector3::new(2.0, 3.0, 12.0),
        ];
        assert!(solve_p3p(&rays, &points).is_empty());
    }

    #[test]
    fn quartic_roots_match_known_factorizations() {
        // (x - 1)(x - 2)(x - 3)(x - 4)
        let roots = real_roots(&[1.0, -10.0, 35.0, -50.0, 24.0]);
        assert_eq!(roots.len(), 4);
        for (root, expected) in roots.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((root - expected).abs() < 1e-9, "{root} vs {expected}");
        }

        // (x - 1)^2 (x^2 + 1): double real root at 1, two complex roots.
        let roots = real_roots(&[1.0, -2.0, 2.0, -2.0, 1.0]);
        assert!(!roots.is_empty());
        for root in &roots {
            assert!((root - 1.0).abs() < 1e-4, "unexpected root {root}");
        }

        // x^4 + 1 has no real roots.
        assert!(real_roots(&[1.0, 0.0, 0.0, 0.0, 1.0]).is_empty());

        // Vanishing leading coefficient degrades to a cubic.
        let roots = real_roots(&[0.0, 1.0, -6.0, 11.0, -6.0]);
        assert_eq!(roots.len(), 3);
        for (root, expected) in roots.iter().zip([1.0, 2.0, 3.0]) {
            assert!((root - expected).abs() < 1e-9);
        }
    }
}
