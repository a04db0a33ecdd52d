//! Direct cylinder fitting, used when the recovered cone slope is too steep
//! to distinguish from a true cylinder.

use super::ConicError;
use crate::geom::orthonormal_basis;
use nalgebra::{Matrix3, Vector2, Vector3};

/// A fitted infinite cylinder.
#[derive(Clone, Debug)]
pub struct CylinderFit {
    /// A point on the axis (the centroid's projection onto it).
    pub axis_point: Vector3<f64>,
    /// Unit axis direction.
    pub axis_dir: Vector3<f64>,
    pub radius: f64,
    /// RMS of the point-to-surface distances after refinement.
    pub rms: f64,
}

impl CylinderFit {
    /// Unsigned distance from a point to the cylinder surface.
    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        (self.axis_distance(x) - self.radius).abs()
    }

    /// Distance from a point to the axis line.
    pub fn axis_distance(&self, x: &Vector3<f64>) -> f64 {
        let q = x - self.axis_point;
        (q - self.axis_dir * self.axis_dir.dot(&q)).norm()
    }
}

/// Fits a cylinder to surface points: the dominant principal direction seeds
/// the axis, a Kåsa circle fit in the perpendicular plane seeds center and
/// radius, and Gauss-Newton over the 5 free parameters (2 axis tilt, 2 axis
/// offset, radius) minimizes geometric surface distance.
pub fn fit_cylinder(points: &[Vector3<f64>]) -> Result<CylinderFit, ConicError> {
    if points.len() < 6 {
        return Err(ConicError::TooFewPoints { got: points.len(), need: 6 });
    }
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;

    // Pipe samples extend much further along the axis than across it, so the
    // top principal direction of the scatter is the axis seed.
    let mut cov = Matrix3::zeros();
    for p in points {
        let q = p - centroid;
        cov.syger(1.0, &q, &q, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    let se = cov.symmetric_eigen();
    let mut k = 0;
    for i in 1..3 {
        if se.eigenvalues[i] > se.eigenvalues[k] {
            k = i;
        }
    }
    let mut dir = se.eigenvectors.column(k).into_owned().normalize();
    let mut point = centroid;

    let circle = kasa_circle(points, &point, &dir)?;
    let (u, v) = orthonormal_basis(&dir);
    point += u * circle.0.x + v * circle.0.y;
    let mut radius = circle.1;

    // Gauss-Newton on (tilt_u, tilt_v, off_u, off_v, r).
    for _ in 0..40 {
        let (u, v) = orthonormal_basis(&dir);
        let mut jtj = nalgebra::Matrix5::<f64>::zeros();
        let mut jtr = nalgebra::Vector5::<f64>::zeros();
        let mut sq = 0.0;
        for p in points {
            let q = p - point;
            let along = dir.dot(&q);
            let w = q - dir * along;
            let wn = w.norm();
            if wn < 1e-12 {
                continue;
            }
            let wh = w / wn;
            let res = wn - radius;
            let j = nalgebra::Vector5::new(
                -along * wh.dot(&u),
                -along * wh.dot(&v),
                -wh.dot(&u),
                -wh.dot(&v),
                -1.0,
            );
            jtj.syger(1.0, &j, &j, 1.0);
            jtr += j * res;
            sq += res * res;
        }
        jtj.fill_upper_triangle_with_lower_triangle();
        for i in 0..5 {
            jtj[(i, i)] += 1e-12;
        }
        let Some(chol) = jtj.cholesky() else {
            return Err(ConicError::DegenerateSample { gap: 0.0 });
        };
        let step = chol.solve(&(-jtr));
        dir = (dir + u * step[0] + v * step[1]).normalize();
        point += u * step[2] + v * step[3];
        radius += step[4];
        if !radius.is_finite() || radius <= 0.0 {
            return Err(ConicError::RefineFailed("cylinder radius collapsed".into()));
        }
        if step.norm() < 1e-12 * (1.0 + radius) {
            let _ = sq;
            break;
        }
    }

    // Re-anchor the axis point at the centroid's foot and report the rms.
    let q = centroid - point;
    point += dir * dir.dot(&q);
    let rms = (points
        .iter()
        .map(|p| {
            let q = p - point;
            let d = (q - dir * dir.dot(&q)).norm() - radius;
            d * d
        })
        .sum::<f64>()
        / n)
        .sqrt();

    Ok(CylinderFit { axis_point: point, axis_dir: dir, radius, rms })
}

/// Algebraic circle fit on the projections into the plane through `origin`
/// perpendicular to `dir`. Returns the in-plane center and the radius.
fn kasa_circle(
    points: &[Vector3<f64>],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Result<(Vector2<f64>, f64), ConicError> {
    let (u, v) = orthonormal_basis(dir);
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in points {
        let q = p - origin;
        let x = u.dot(&q);
        let y = v.dot(&q);
        let row = Vector3::new(x, y, 1.0);
        ata.syger(1.0, &row, &row, 1.0);
        atb += row * (x * x + y * y);
    }
    ata.fill_upper_triangle_with_lower_triangle();
    let se = ata.symmetric_eigen();
    let max_ev = se.eigenvalues.amax().max(1e-300);
    if se.eigenvalues.iter().any(|&l| l < 1e-10 * max_ev) {
        return Err(ConicError::DegenerateSample { gap: 0.0 });
    }
    let Some(chol) = ata.cholesky() else {
        return Err(ConicError::DegenerateSample { gap: 0.0 });
    };
    let sol = chol.solve(&atb);
    let center = Vector2::new(0.5 * sol.x, 0.5 * sol.y);
    let r2 = sol.z + center.norm_squared();
    if !r2.is_finite() || r2 <= 0.0 {
        return Err(ConicError::DegenerateSample { gap: 0.0 });
    }
    Ok((center, r2.sqrt()))
}
