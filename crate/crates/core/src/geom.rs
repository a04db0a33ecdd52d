//! Rigid transforms and small SO(3) helpers shared by all modules.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

/// World-to-camera (or world-to-cone) rigid transform: `x' = r * x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub r: Rotation3<f64>,
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { r: Rotation3::identity(), t: Vector3::zeros() }
    }

    pub fn new(r: Rotation3<f64>, t: Vector3<f64>) -> Self {
        Pose { r, t }
    }

    /// Maps a point from the source frame into the target frame.
    #[inline]
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.r.inverse();
        Pose { r: rinv, t: -(rinv * self.t) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { r: self.r * other.r, t: self.r * other.t + self.t }
    }

    /// Camera/frame origin expressed in the source frame.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.inverse() * self.t)
    }

    /// Left-multiplicative retraction used by the optimizer:
    /// `r ← exp([dw]×) r`, `t ← t + dt`.
    pub fn retract(&self, dw: &Vector3<f64>, dt: &Vector3<f64>) -> Pose {
        Pose { r: Rotation3::from_scaled_axis(*dw) * self.r, t: self.t + dt }
    }

    /// Scrubs accumulated round-off from the rotation part.
    pub fn renormalize(&mut self) {
        self.r = UnitQuaternion::from_rotation_matrix(&self.r).to_rotation_matrix();
    }
}

/// Cross-product matrix: `skew(v) * x == v × x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation angle between two rotations, in radians. Extracted through the
/// quaternion logarithm, which keeps full precision for small angles where
/// the trace formula bottoms out near √ε.
pub fn rotation_angle(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    UnitQuaternion::from_rotation_matrix(&(a * b.inverse())).scaled_axis().norm()
}

/// Angle between two directions, in radians. Uses atan2 of the cross and dot
/// products, which stays accurate near 0 and π where acos loses half the
/// significant digits.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Angle between two axes where the sign of either direction is free
/// (cone and cylinder axes are lines, not rays).
pub fn axis_angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ang = angle_between(a, b);
    ang.min(std::f64::consts::PI - ang)
}

/// Any unit vector orthogonal to `v` (`v` need not be normalized).
pub fn any_orthonormal(v: &Vector3<f64>) -> Vector3<f64> {
    let axis = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vector3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    v.cross(&axis).normalize()
}

/// A right-handed orthonormal pair `(u, w)` spanning the plane orthogonal to
/// `v`, with `u × w` pointing along `v`.
pub fn orthonormal_basis(v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u = any_orthonormal(v);
    let w = v.normalize().cross(&u);
    (u, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_undoes_transform() {
        let p = Pose::new(
            Rotation3::from_scaled_axis(Vector3::new(0.3, -0.2, 0.9)),
            Vector3::new(1.0, -2.0, 3.0),
        );
        let x = Vector3::new(0.4, 0.5, -0.6);
        let back = p.inverse().transform(&p.transform(&x));
        assert_relative_eq!(back, x, epsilon = 1e-12);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = Pose::new(Rotation3::from_scaled_axis(Vector3::new(0.1, 0.2, 0.3)), Vector3::x());
        let b = Pose::new(Rotation3::from_scaled_axis(Vector3::new(-0.4, 0.0, 0.2)), Vector3::y());
        let x = Vector3::new(0.7, -0.1, 2.0);
        assert_relative_eq!(a.compose(&b).transform(&x), a.transform(&b.transform(&x)), epsilon = 1e-12);
    }

    #[test]
    fn center_is_fixed_point_preimage() {
        let p = Pose::new(Rotation3::from_scaled_axis(Vector3::new(0.3, 0.1, -0.2)), Vector3::new(0.5, 1.5, -0.7));
        assert_relative_eq!(p.transform(&p.center()), Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn skew_matches_cross_product() {
        let v = Vector3::new(0.2, -1.3, 0.8);
        let x = Vector3::new(-0.5, 0.4, 1.1);
        assert_relative_eq!(skew(&v) * x, v.cross(&x), epsilon = 1e-15);
    }

    #[test]
    fn retract_small_step_is_first_order() {
        let p = Pose::new(Rotation3::from_scaled_axis(Vector3::new(0.4, -0.1, 0.2)), Vector3::z());
        let dw = Vector3::new(1e-6, -2e-6, 0.5e-6);
        let x = Vector3::new(1.0, 2.0, 3.0);
        let moved = p.retract(&dw, &Vector3::zeros()).transform(&x);
        let predicted = p.transform(&x) + dw.cross(&(p.r * x));
        assert_relative_eq!(moved, predicted, epsilon = 1e-11);
    }

    #[test]
    fn axis_angle_ignores_sign() {
        let a = Vector3::new(0.0, 0.0, 1.0);
        let b = Vector3::new(0.01, 0.0, -1.0).normalize();
        assert!(axis_angle_between(&a, &b) < 0.011);
    }

    #[test]
    fn any_orthonormal_is_orthogonal_unit() {
        for v in [Vector3::x(), Vector3::new(0.1, -0.9, 0.3), Vector3::new(1e-8, 2.0, 1e-8)] {
            let u = any_orthonormal(&v);
            assert!(u.dot(&v).abs() < 1e-12 * v.norm());
            assert_relative_eq!(u.norm(), 1.0, epsilon = 1e-12);
        }
    }
}
