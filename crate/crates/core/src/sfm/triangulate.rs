//! Two-view point triangulation.

use nalgebra::Vector3;

use crate::geom::{angle_between, Pose};

/// A triangulated point together with its quality measure.
#[derive(Clone, Copy, Debug)]
pub struct Triangulated {
    /// World coordinates of the midpoint of the common perpendicular.
    pub point: Vector3<f64>,
    /// Angle subtended at the point by the two camera centers, radians.
    pub parallax: f64,
}

/// Midpoint triangulation from world-frame ray origins and directions.
///
/// Returns `None` when the rays are near parallel or when either
/// intersection parameter is non-positive (the point would lie behind one of
/// the cameras).
pub fn midpoint_from_world_rays(
    ca: &Vector3<f64>,
    da: &Vector3<f64>,
    cb: &Vector3<f64>,
    db: &Vector3<f64>,
) -> Option<Triangulated> {
    let da = da.normalize();
    let db = db.normalize();
    let w = cb - ca;
    let b = da.dot(&db);
    let denom = 1.0 - b * b;
    if denom < 1e-12 {
        return None;
    }
    let sa = (da - db * b).dot(&w) / denom;
    let sb = (da * b - db).dot(&w) / denom;
    if !(sa.is_finite() && sb.is_finite()) || sa <= 0.0 || sb <= 0.0 {
        return None;
    }
    let point = ((ca + da * sa) + (cb + db * sb)) * 0.5;
    let parallax = angle_between(&(ca - point), &(cb - point));
    Some(Triangulated { point, parallax })
}

/// Midpoint triangulation from two camera poses and camera-frame rays.
pub fn triangulate_midpoint(
    pose_a: &Pose,
    ray_a: &Vector3<f64>,
    pose_b: &Pose,
    ray_b: &Vector3<f64>,
) -> Option<Triangulated> {
    let ca = pose_a.center();
    let cb = pose_b.center();
    let da = pose_a.r.inverse() * ray_a;
    let db = pose_b.r.inverse() * ray_b;
    midpoint_from_world_rays(&ca, &da, &cb, &db)
}
