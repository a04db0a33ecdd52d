//! Minimal and least-squares quadric fitting from surface points.

use super::cone::{design_row, unvech};
use super::{normalize_quadric, ConicError};
use nalgebra::{DMatrix, Matrix3, Matrix4, SVector, Vector3};

/// Relative gap below which the nullspace direction of the design system is
/// considered ambiguous and the sample rejected.
const DEGENERACY_GAP: f64 = 1e-6;

/// Fits a quadric `XᵀCX = 0` through the given points (at least 9).
///
/// Points are centered and isotropically scaled before building the design
/// matrix; the quadric is mapped back through the normalizing transform. The
/// solution is the right singular vector for the smallest singular value of
/// the design matrix, which is the exact least-squares null direction for an
/// overdetermined sample and the nullspace for a minimal one. (Working on the
/// design matrix itself rather than its normal equations avoids squaring the
/// condition number, which costs real digits for pipe-regime slopes.)
pub fn quadric_from_points(points: &[Vector3<f64>]) -> Result<Matrix4<f64>, ConicError> {
    if points.len() < 9 {
        return Err(ConicError::TooFewPoints { got: points.len(), need: 9 });
    }

    // Hartley-style conditioning: centroid to origin, RMS radius to √3.
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let rms = (points.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / n).sqrt();
    if !rms.is_finite() || rms <= 0.0 {
        return Err(ConicError::DegenerateSample { gap: 0.0 });
    }
    let s = 3.0f64.sqrt() / rms;

    // One padded zero row for the minimal 9-point case keeps the thin SVD's
    // V a full 10×10, so the null direction is always the last row of Vᵀ.
    let mut a = DMatrix::<f64>::zeros(points.len().max(10), 10);
    for (i, p) in points.iter().enumerate() {
        a.row_mut(i).copy_from(&design_row(&((p - centroid) * s)).transpose());
    }
    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    let gap = sv[8] / sv[0].max(1e-300);
    if gap < DEGENERACY_GAP {
        return Err(ConicError::DegenerateSample { gap });
    }
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let null: SVector<f64, 10> = SVector::from_iterator(vt.row(9).iter().copied());
    let c_norm = unvech(&null);

    // Undo the conditioning: C = TᵀC̃T with X̃ = T X, T = [sI, -s·centroid; 0, 1].
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * s));
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-s * centroid));
    let mut c = t.transpose() * c_norm * t;
    normalize_quadric(&mut c);
    Ok(c)
}

/// Convenience wrapper used by the RANSAC hypothesis stage: fits the quadric
/// and splits it into cone parameters without the strict apex-consistency
/// check (nine exact points determine the quadric, so a sample drawn from a
/// true cone decomposes cleanly anyway).
pub fn cone_from_nine_points(points: &[Vector3<f64>]) -> Result<super::Cone, ConicError> {
    let q = quadric_from_points(points)?;
    let (c, pose) = super::decompose_quadric(&q, None)?;
    Ok(super::Cone::from_params(c, pose))
}

/// Algebraic residuals `design_row(x)·vech(C)` for diagnostics and tests.
pub fn algebraic_residuals(q: &Matrix4<f64>, points: &[Vector3<f64>]) -> DMatrix<f64> {
    let v = super::cone::vech(q);
    DMatrix::from_iterator(points.len(), 1, points.iter().map(|p| design_row(p).dot(&v)))
}
