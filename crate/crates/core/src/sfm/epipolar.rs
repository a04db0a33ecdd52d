//! Two-view relative pose from ray correspondences.
//!
//! Works entirely with unprojected viewing rays, so the fisheye projection
//! never appears here: a pair of rays `(r_a, r_b)` observing the same point
//! satisfies the coplanarity constraint `r_b · (t × R r_a) = 0`, where the
//! recovered pose maps frame-a coordinates into frame b. The essential matrix
//! is estimated linearly from eight or more pairs, projected onto the
//! essential manifold, and decomposed into the four rotation/translation
//! candidates; triangulation depth signs pick the physical one.

use nalgebra::{Matrix3, Rotation3, SMatrix, Vector3};
use rand_chacha::ChaCha8Rng;

use crate::geom::Pose;
use crate::ransac::{ransac, RansacParams};

use super::triangulate::triangulate_midpoint;

/// Minimum pair count for the linear essential-matrix estimate.
pub const MIN_PAIRS: usize = 8;

/// Linear least-squares essential matrix from ray pairs, in the convention
/// `r_b^T E r_a = 0`. Requires at least [`MIN_PAIRS`] correspondences.
///
/// The nullspace of the stacked constraint rows is taken from the smallest
/// eigenvector of the 9x9 normal matrix, then projected onto the essential
/// manifold (two equal singular values, one zero).
pub fn essential_from_ray_pairs(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Option<Matrix3<f64>> {
    if pairs.len() < MIN_PAIRS {
        return None;
    }
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (ra, rb) in pairs {
        let ra = ra.normalize();
        let rb = rb.normalize();
        let mut row = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                row[3 * i + j] = rb[i] * ra[j];
            }
        }
        for i in 0..9 {
            for j in 0..9 {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    let eig = ata.symmetric_eigen();
    let mut imin = 0;
    for i in 1..9 {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
    }
    let v = eig.eigenvectors.column(imin);
    let e = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);

    // Project to the essential manifold.
    let svd = e.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    Some(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t)
}

/// Symmetric angular distance of a ray pair from the epipolar constraint.
///
/// `E r_a` is the epipolar plane normal expressed in frame b (and `E^T r_b`
/// the same plane in frame a); the residual is the larger of the two angles
/// between a ray and its plane. Rays need not be unit length.
pub fn epipolar_residual(
    e: &Matrix3<f64>,
    ra: &Vector3<f64>,
    rb: &Vector3<f64>,
) -> f64 {
    let na = e.transpose() * rb;
    let nb = e * ra;
    let sa = na.norm() * ra.norm();
    let sb = nb.norm() * rb.norm();
    if sa < 1e-15 || sb < 1e-15 {
        return std::f64::consts::FRAC_PI_2;
    }
    let angle_a = (ra.dot(&na).abs() / sa).min(1.0).asin();
    let angle_b = (rb.dot(&nb).abs() / sb).min(1.0).asin();
    angle_a.max(angle_b)
}

/// The four rotation/translation candidates of an essential matrix, each a
/// pose mapping frame-a coordinates into frame b with unit translation.
pub fn decompose_essential(e: &Matrix3<f64>) -> Vec<Pose> {
    let svd = e.svd(true, true);
    let (Some(mut u), Some(mut v_t)) = (svd.u, svd.v_t) else {
        return Vec::new();
    };
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = Rotation3::from_matrix_unchecked(u * w * v_t);
    let r2 = Rotation3::from_matrix_unchecked(u * w.transpose() * v_t);
    let t: Vector3<f64> = u.column(2).into_owned();
    let mut out = vec![
        Pose::new(r1, t),
        Pose::new(r1, -t),
        Pose::new(r2, t),
        Pose::new(r2, -t),
    ];
    for p in &mut out {
        p.renormalize();
    }
    out
}

/// A consensus relative pose between two views.
#[derive(Clone, Debug)]
pub struct RelativePose {
    /// Maps frame-a coordinates into frame b; translation has unit length.
    pub pose: Pose,
    /// Indices into the input pair list supporting the essential matrix.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

/// Robust relative pose from ray correspondences.
///
/// RANSAC over eight-pair samples selects the essential matrix with the most
/// support at the given angular threshold; the matrix is refit on its
/// inliers, decomposed, and the candidate placing the most inlier
/// triangulations at positive depth in both views wins. Returns `None` when
/// no candidate gathers a positive-depth majority.
pub fn relative_pose_ransac(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    thresh_rad: f64,
    params: &RansacParams,
    rng: &mut ChaCha8Rng,
) -> Option<RelativePose> {
    let unit: Vec<(Vector3<f64>, Vector3<f64>)> = pairs
        .iter()
        .map(|(a, b)| (a.normalize(), b.normalize()))
        .collect();
    let result = ransac(
        rng,
        unit.len(),
        MIN_PAIRS,
        params,
        |idx| {
            let sample: Vec<_> = idx.iter().map(|&i| unit[i]).collect();
            essential_from_ray_pairs(&sample).into_iter().collect()
        },
        |e| {
            (0..unit.len())
                .filter(|&i| epipolar_residual(e, &unit[i].0, &unit[i].1) < thresh_rad)
                .collect()
        },
    )?;

    // Refit on the consensus set, then once more after trimming stragglers:
    // an outlier pair that lands under the threshold by accident still sits
    // far above the residual level of the true inliers and would bias the
    // least-squares estimate.
    let consensus: Vec<_> = result.inliers.iter().map(|&i| unit[i]).collect();
    let mut e = essential_from_ray_pairs(&consensus).unwrap_or(result.model);
    let mut inliers: Vec<usize> = (0..unit.len())
        .filter(|&i| epipolar_residual(&e, &unit[i].0, &unit[i].1) < thresh_rad)
        .collect();
    if inliers.len() < MIN_PAIRS {
        return None;
    }
    let mut residuals: Vec<f64> = inliers
        .iter()
        .map(|&i| epipolar_residual(&e, &unit[i].0, &unit[i].1))
        .collect();
    residuals.sort_by(f64::total_cmp);
    let strict = (5.0 * residuals[residuals.len() / 2]).max(1e-8);
    let trimmed: Vec<_> = inliers
        .iter()
        .filter(|&&i| epipolar_residual(&e, &unit[i].0, &unit[i].1) < strict)
        .map(|&i| unit[i])
        .collect();
    if trimmed.len() >= MIN_PAIRS {
        if let Some(refit) = essential_from_ray_pairs(&trimmed) {
            e = refit;
            inliers = (0..unit.len())
                .filter(|&i| epipolar_residual(&e, &unit[i].0, &unit[i].1) < thresh_rad)
                .collect();
            if inliers.len() < MIN_PAIRS {
                return None;
            }
        }
    }

    let identity = Pose::identity();
    let mut best: Option<(usize, Pose)> = None;
    for cand in decompose_essential(&e) {
        let count = inliers
            .iter()
            .filter(|&&i| {
                triangulate_midpoint(&identity, &unit[i].0, &cand, &unit[i].1).is_some()
            })
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, cand));
        }
    }
    let (count, mut pose) = best?;
    if count * 2 <= inliers.len() {
        return None;
    }
    let norm = pose.t.norm();
    if norm > 1e-12 {
        pose.t /= norm;
    }
    Some(RelativePose { pose, inliers, iterations: result.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{angle_between, rotation_angle, skew};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type RayPairs = Vec<(Vector3<f64>, Vector3<f64>)>;

    /// Random relative pose with unit baseline and ray pairs seeing common
    /// points at positive depth in both frames.
    fn synthetic_pairs(rng: &mut ChaCha8Rng, n: usize) -> (Pose, RayPairs) {
        let r = Rotation3::from_euler_angles(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let t = loop {
            let t = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if t.norm() > 0.3 {
                break t.normalize();
            }
        };
        let pose = Pose::new(r, t);
        let mut pairs = Vec::with_capacity(n);
        while pairs.len() < n {
            let x = Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(3.0..25.0),
            );
            let xb = pose.transform(&x);
            if xb.z < 0.5 {
                continue;
            }
            pairs.push((x.normalize(), xb.normalize()));
        }
        (pose, pairs)
    }

    #[test]
    fn essential_satisfies_the_epipolar_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (pose, pairs) = synthetic_pairs(&mut rng, 40);
            let e = essential_from_ray_pairs(&pairs).unwrap();
            for (ra, rb) in &pairs {
                assert!(epipolar_residual(&e, ra, rb) < 1e-9);
            }
            // E matches [t]x R up to scale and sign.
            let reference = skew(&pose.t) * pose.r.matrix();
            let a = e / e.norm();
            let b = reference / reference.norm();
            let diff = (a - b).norm().min((a + b).norm());
            assert!(diff < 1e-8, "essential off by {diff}");
        }
    }

    #[test]
    fn decomposition_contains_the_true_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (pose, _) = synthetic_pairs(&mut rng, 8);
            let e = skew(&pose.t) * pose.r.matrix();
            let found = decompose_essential(&e).into_iter().any(|cand| {
                rotation_angle(&cand.r, &pose.r) < 1e-9
                    && angle_between(&cand.t, &pose.t) < 1e-9
            });
            assert!(found);
        }
    }

    #[test]
    fn exact_pairs_recover_the_relative_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let (pose, pairs) = synthetic_pairs(&mut rng, 60);
            let got = relative_pose_ransac(
                &pairs,
                2e-3,
                &RansacParams::default(),
                &mut ChaCha8Rng::seed_from_u64(1),
            )
            .expect("exact data must yield a pose");
            assert_eq!(got.inliers.len(), pairs.len());
            assert!(rotation_angle(&got.pose.r, &pose.r) < 1e-7);
            assert!(angle_between(&got.pose.t, &pose.t) < 1e-7);
            assert!((got.pose.t.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..10 {
            let (pose, mut pairs) = synthetic_pairs(&mut rng, 80);
            let clean = pairs.len();
            for _ in 0..24 {
                pairs.push((
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.2..1.0),
                    )
                    .normalize(),
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.2..1.0),
                    )
                    .normalize(),
                ));
            }
            let got = relative_pose_ransac(
                &pairs,
                2e-3,
                &RansacParams::default(),
                &mut ChaCha8Rng::seed_from_u64(trial),
            )
            .expect("25% outliers must not break consensus");
            assert!(got.inliers.len() >= clean);
            let rot_err = rotation_angle(&got.pose.r, &pose.r);
            let dir_err = angle_between(&got.pose.t, &pose.t);
            assert!(rot_err < 1e-6, "trial {trial}: rotation error {rot_err:.3e}");
            assert!(dir_err < 1e-6, "trial {trial}: direction error {dir_err:.3e}");
        }
    }

    #[test]
    fn too_few_pairs_yield_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, pairs) = synthetic_pairs(&mut rng, 7);
        assert!(essential_from_ray_pairs(&pairs).is_none());
        assert!(relative_pose_ransac(
            &pairs,
            2e-3,
            &RansacParams::default(),
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_none());
    }
}
