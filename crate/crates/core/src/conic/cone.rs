//! Cone quadric algebra: vech packing, composition, decomposition, distance.

use super::{ConicError, MIN_INVERSE_SLOPE};
use crate::geom::Pose;
use nalgebra::{Matrix3, Matrix4, Rotation3, SVector, Vector3, Vector4};

/// Lower-triangular column stacking of a symmetric 4×4 matrix:
/// `(C00, C10, C20, C30, C11, C21, C31, C22, C32, C33)`.
pub fn vech(m: &Matrix4<f64>) -> SVector<f64, 10> {
    SVector::<f64, 10>::from([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(3, 0)],
        m[(1, 1)],
        m[(2, 1)],
        m[(3, 1)],
        m[(2, 2)],
        m[(3, 2)],
        m[(3, 3)],
    ])
}

/// Inverse of [`vech`].
pub fn unvech(v: &SVector<f64, 10>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    let idx = [(0, 0), (1, 0), (2, 0), (3, 0), (1, 1), (2, 1), (3, 1), (2, 2), (3, 2), (3, 3)];
    for (k, &(i, j)) in idx.iter().enumerate() {
        m[(i, j)] = v[k];
        m[(j, i)] = v[k];
    }
    m
}

/// Row of the linear system `A · vech(C) = 0` for one surface point.
///
/// Off-diagonal entries of `vech(X Xᵀ)` are doubled so that
/// `design_row(X) · vech(C) = Xᵀ C X` exactly.
pub fn design_row(x: &Vector3<f64>) -> SVector<f64, 10> {
    let h = Vector4::new(x.x, x.y, x.z, 1.0);
    let mut row = SVector::<f64, 10>::zeros();
    let idx = [(0, 0), (1, 0), (2, 0), (3, 0), (1, 1), (2, 1), (3, 1), (2, 2), (3, 2), (3, 3)];
    for (k, &(i, j)) in idx.iter().enumerate() {
        row[k] = if i == j { h[i] * h[j] } else { 2.0 * h[i] * h[j] };
    }
    row
}

/// Builds the quadric of the cone `(c, pose)` and normalizes it.
pub fn compose_quadric(c: f64, pose: &Pose) -> Matrix4<f64> {
    let d = Matrix3::from_diagonal(&Vector3::new(-c * c, -c * c, 1.0));
    let r = *pose.r.matrix();
    let b = r.transpose() * d * r;
    let m = r.transpose() * d * pose.t;
    let c33 = pose.t.dot(&(d * pose.t));
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&b);
    q.fixed_view_mut::<3, 1>(0, 3).copy_from(&m);
    q.fixed_view_mut::<1, 3>(3, 0).copy_from(&m.transpose());
    q[(3, 3)] = c33;
    normalize_quadric(&mut q);
    q
}

/// Scales to unit Frobenius norm and fixes the overall sign: `C[3][3] ≥ 0`
/// when it is meaningfully nonzero, otherwise the largest-magnitude entry is
/// made positive.
pub fn normalize_quadric(q: &mut Matrix4<f64>) {
    let n = q.norm();
    if n > 0.0 {
        *q /= n;
    }
    let c33 = q[(3, 3)];
    let flip = if c33.abs() > 1e-12 {
        c33 < 0.0
    } else {
        let mut dominant = 0.0f64;
        for v in q.iter() {
            if v.abs() > dominant.abs() {
                dominant = *v;
            }
        }
        dominant < 0.0
    };
    if flip {
        *q = -*q;
    }
}

/// Splits a quadric into `(c, pose)`.
///
/// The 3×3 block must have eigenvalue signature `(-, -, +)` up to a global
/// sign flip; the two negative eigenvalues are averaged for `c`. With
/// `consistency_tol = Some(tol)` the reconstructed `tᵀDt` must match
/// `C[3][3]` within `tol` (the quadric must be an exact cone, not merely a
/// cone-signature hyperboloid); RANSAC hypotheses pass `None` and accept the
/// nearest cone interpretation.
pub fn decompose_quadric(
    q_in: &Matrix4<f64>,
    consistency_tol: Option<f64>,
) -> Result<(f64, Pose), ConicError> {
    let mut q = *q_in;
    let n = q.norm();
    if !n.is_finite() || n <= 0.0 {
        return Err(ConicError::NotACone { reason: "zero or non-finite quadric".into() });
    }
    q /= n;

    let b = q.fixed_view::<3, 3>(0, 0).into_owned();
    let se = b.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let mut lam = [se.eigenvalues[order[0]], se.eigenvalues[order[1]], se.eigenvalues[order[2]]];
    let mut vecs = [
        se.eigenvectors.column(order[0]).into_owned(),
        se.eigenvectors.column(order[1]).into_owned(),
        se.eigenvectors.column(order[2]).into_owned(),
    ];

    let eps = 1e-12 + 1e-9 * b.norm();
    let pos = lam.iter().filter(|&&l| l > eps).count();
    let neg = lam.iter().filter(|&&l| l < -eps).count();
    if pos > neg {
        // Signature (+,+,·): flip the global sign so the axis eigenvalue is
        // the positive one. Negating reverses the sort order.
        q = -q;
        lam = [-lam[2], -lam[1], -lam[0]];
        vecs.swap(0, 2);
    }

    let (l0, l1, l2) = (lam[0], lam[1], lam[2]);
    if l1 >= -eps {
        return Err(ConicError::NotACone {
            reason: format!("eigenvalue signature is not (-,-,+): ({l0:.3e}, {l1:.3e}, {l2:.3e})"),
        });
    }
    if l2 < -eps {
        // (-,-,-): definite, an (imaginary) ellipsoid.
        return Err(ConicError::NotACone {
            reason: format!("eigenvalue signature is not (-,-,+): ({l0:.3e}, {l1:.3e}, {l2:.3e})"),
        });
    }
    if l2 <= eps {
        // (-,-,0): exact cylinder quadric.
        return Err(ConicError::DegenerateCylinder {
            inverse_slope: (l2.max(0.0) / (-0.5 * (l0 + l1))).sqrt(),
        });
    }

    // The eigensolver leaves ~1e-8 of error in the axis direction; a couple
    // of Rayleigh-quotient inverse iterations on the (sign-corrected) block
    // push it back to machine precision. The axis eigenvalue is isolated so
    // the iteration is well posed.
    let bs = if pos > neg { -b } else { b };
    let mut v_axis = vecs[2].normalize();
    let mut l2 = v_axis.dot(&(bs * v_axis));
    for _ in 0..2 {
        let shifted = bs - Matrix3::identity() * l2;
        let Some(x) = shifted.full_piv_lu().solve(&v_axis) else { break };
        let n = x.norm();
        if !n.is_finite() || n <= 0.0 {
            break;
        }
        v_axis = x / n;
        l2 = v_axis.dot(&(bs * v_axis));
    }
    vecs[2] = v_axis;
    // The two negative eigenvalues enter only through their mean, which the
    // trace gives exactly.
    let neg_mean = -0.5 * (bs.trace() - l2);
    if !neg_mean.is_finite() || neg_mean <= 0.0 {
        return Err(ConicError::NotACone {
            reason: format!("negative eigenvalue pair has non-negative mean {:.3e}", -neg_mean),
        });
    }
    let c = (neg_mean / l2).sqrt();
    let inverse_slope = 1.0 / c;
    if inverse_slope < MIN_INVERSE_SLOPE {
        return Err(ConicError::DegenerateCylinder { inverse_slope });
    }

    // Deterministic eigenvector signs; rows of R are (v0, v2×v0, v2).
    let fix = |v: &Vector3<f64>| {
        let mut k = 0;
        for i in 1..3 {
            if v[i].abs() > v[k].abs() {
                k = i;
            }
        }
        if v[k] < 0.0 {
            -v
        } else {
            *v
        }
    };
    let v2 = fix(&vecs[2]).normalize();
    let mut v0 = fix(&vecs[0]);
    v0 = (v0 - v2 * v2.dot(&v0)).normalize();
    let v1 = v2.cross(&v0);
    let mut rm = Matrix3::zeros();
    rm.set_row(0, &v0.transpose());
    rm.set_row(1, &v1.transpose());
    rm.set_row(2, &v2.transpose());
    let rot = Rotation3::from_matrix_unchecked(rm);

    let m = q.fixed_view::<3, 1>(0, 3).into_owned();
    let rm_vec = rot * m;
    let s = l2;
    let t = Vector3::new(
        -rm_vec.x / (c * c) / s,
        -rm_vec.y / (c * c) / s,
        rm_vec.z / s,
    );

    if let Some(tol) = consistency_tol {
        let d = Matrix3::from_diagonal(&Vector3::new(-c * c, -c * c, 1.0));
        let predicted = s * t.dot(&(d * t));
        let actual = q[(3, 3)];
        if (predicted - actual).abs() > tol {
            return Err(ConicError::NotACone {
                reason: format!(
                    "apex term mismatch: tᵀDt predicts {predicted:.6e}, quadric carries {actual:.6e}"
                ),
            });
        }
    }

    Ok((c, Pose::new(rot, t)))
}

/// A right circular cone in canonical form.
#[derive(Clone, Debug)]
pub struct Cone {
    /// Axial slope: the surface satisfies `z' = ±c·ρ` in the cone frame.
    pub c: f64,
    /// World-to-cone transform; the apex is at the frame origin.
    pub pose: Pose,
    /// Normalized quadric, always equal to `compose_quadric(c, pose)`.
    pub quadric: Matrix4<f64>,
}

impl Cone {
    pub fn from_params(c: f64, pose: Pose) -> Cone {
        debug_assert!(c > 0.0 && c.is_finite());
        Cone { c, pose, quadric: compose_quadric(c, &pose) }
    }

    pub fn from_quadric(q: &Matrix4<f64>, consistency_tol: Option<f64>) -> Result<Cone, ConicError> {
        let (c, pose) = decompose_quadric(q, consistency_tol)?;
        Ok(Cone::from_params(c, pose))
    }

    /// Apex position in world coordinates.
    pub fn apex(&self) -> Vector3<f64> {
        self.pose.center()
    }

    /// Unit axis direction in world coordinates (sign is a convention chosen
    /// by the caller; flipping uses [`Cone::flip_axis`]).
    pub fn axis_dir(&self) -> Vector3<f64> {
        self.pose.r.inverse() * Vector3::z()
    }

    /// Reverses the axis direction without moving the surface. `diag(-c²,-c²,1)`
    /// is invariant under a 180° rotation about x, so `(F R, F t)` with
    /// `F = diag(1,-1,-1)` composes to the same quadric.
    pub fn flip_axis(&self) -> Cone {
        let f = Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
        Cone::from_params(self.c, Pose::new(f * self.pose.r, f * self.pose.t))
    }

    /// Geometric distance from a world point to the cone surface: 2-D
    /// point-to-line distance in the `(ρ, z')` half-plane where the surface
    /// is the pair of rays `z' = ±c·ρ` from the apex.
    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        let p = self.pose.transform(x);
        surface_distance(self.c, &p)
    }

    /// Distance of a world point from the cone axis.
    pub fn axis_distance(&self, x: &Vector3<f64>) -> f64 {
        let p = self.pose.transform(x);
        p.fixed_rows::<2>(0).norm()
    }
}

/// Distance in the cone frame; see [`Cone::distance`].
pub fn surface_distance(c: f64, p: &Vector3<f64>) -> f64 {
    let rho = p.fixed_rows::<2>(0).norm();
    let z = p.z;
    let norm = (1.0 + c * c).sqrt();
    let apex_dist = (rho * rho + z * z).sqrt();
    // Branch z' = +c·ρ: ray direction (1, c)/norm in the half-plane.
    let d_plus = if rho + c * z >= 0.0 { (c * rho - z).abs() / norm } else { apex_dist };
    // Branch z' = -c·ρ: ray direction (1, -c)/norm.
    let d_minus = if rho - c * z >= 0.0 { (c * rho + z).abs() / norm } else { apex_dist };
    d_plus.min(d_minus)
}

/// Signed surface residual and its gradients, used by cone refinement.
///
/// Returns `(residual, ∂/∂c, ∇_{x'})` for the branch nearest to `p`; the
/// residual is `(c·ρ - b·z') / √(1+c²)` with `b = ±1` the active branch.
pub fn surface_residual_grad(c: f64, p: &Vector3<f64>) -> (f64, f64, Vector3<f64>) {
    let rho = p.fixed_rows::<2>(0).norm().max(1e-12);
    let z = p.z;
    let norm = (1.0 + c * c).sqrt();
    let b = if (c * rho - z).abs() <= (c * rho + z).abs() { 1.0 } else { -1.0 };
    let res = (c * rho - b * z) / norm;
    let dc = (rho + b * c * z) / (norm * norm * norm);
    let grad = Vector3::new(c * p.x / rho, c * p.y / rho, -b) / norm;
    (res, dc, grad)
}
