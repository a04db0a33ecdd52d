//! Tube-network geometry: centerline construction, wall-point sampling and
//! the inside-the-tube test used for occlusion and camera containment.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{Part, PartKind, PipeNetworkSpec, SimError};

/// How far a tee's main bore runs, in radii; the junction region carries no
/// surface features (the branch opening breaks the wall there).
const TEE_HUB_RADII: f64 = 4.0;
/// Centerline sampling step (mm) for the self-intersection check.
const CLEARANCE_STEP: f64 = 1.0;

/// A feature point on the inner wall.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePoint {
    pub position: Vector3<f64>,
    /// Index of the generating part.
    pub part: usize,
}

/// Geometric realization of one part, placed in world coordinates. The local
/// frame `(n, b, t)` is right-handed with `t` the direction of travel.
#[derive(Clone, Debug)]
pub enum PartGeometry {
    Straight {
        start: Vector3<f64>,
        n: Vector3<f64>,
        b: Vector3<f64>,
        t: Vector3<f64>,
        length: f64,
    },
    Elbow {
        /// Center of the bend circle.
        center: Vector3<f64>,
        /// Unit vector from the bend center to the arc start.
        from_center: Vector3<f64>,
        /// Rotation axis of the bend (unit).
        axis: Vector3<f64>,
        bend_radius: f64,
        /// Total bend angle in radians.
        angle: f64,
        /// Entry frame, rotated along the arc by `axis`.
        n: Vector3<f64>,
        b: Vector3<f64>,
        t: Vector3<f64>,
    },
    Tee {
        start: Vector3<f64>,
        n: Vector3<f64>,
        b: Vector3<f64>,
        t: Vector3<f64>,
        hub_length: f64,
        /// Unit direction of the blind branch, from the hub midpoint.
        stub_dir: Vector3<f64>,
        stub_length: f64,
    },
}

/// One placed part with its arclength span on the main path.
#[derive(Clone, Debug)]
pub struct BuiltPart {
    pub spec: Part,
    pub radius: f64,
    /// Arclength of the main path where this part starts / ends.
    pub s0: f64,
    pub s1: f64,
    pub geometry: PartGeometry,
}

impl BuiltPart {
    pub fn is_straight(&self) -> bool {
        matches!(self.geometry, PartGeometry::Straight { .. })
    }

    /// Axis line for straight-like parts: a point on the axis and the unit
    /// direction of travel. Elbows have no single axis and return `None`.
    pub fn axis(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        match &self.geometry {
            PartGeometry::Straight { start, t, .. } => Some((*start, *t)),
            PartGeometry::Tee { start, t, .. } => Some((*start, *t)),
            PartGeometry::Elbow { .. } => None,
        }
    }

    /// Position and frame of the main centerline at arclength `s` (absolute,
    /// clamped to this part's span).
    fn frame_at(&self, s: f64) -> (Vector3<f64>, [Vector3<f64>; 3]) {
        let ds = (s - self.s0).clamp(0.0, self.s1 - self.s0);
        match &self.geometry {
            PartGeometry::Straight { start, n, b, t, .. }
            | PartGeometry::Tee { start, n, b, t, .. } => (start + t * ds, [*n, *b, *t]),
            PartGeometry::Elbow { center, from_center, axis, bend_radius, n, b, t, .. } => {
                let rot = Rotation3::from_axis_angle(
                    &Unit::new_unchecked(*axis),
                    ds / bend_radius,
                );
                (center + rot * (from_center * *bend_radius), [rot * n, rot * b, rot * t])
            }
        }
    }

    /// Distance from `x` to this part's centerline (main bore; the tee stub
    /// counts as a second centerline).
    fn centerline_distance(&self, x: &Vector3<f64>) -> f64 {
        match &self.geometry {
            PartGeometry::Straight { start, t, length, .. } => {
                segment_distance(x, start, t, *length)
            }
            PartGeometry::Tee { start, t, hub_length, stub_dir, stub_length, .. } => {
                let hub = segment_distance(x, start, t, *hub_length);
                let hub_mid = start + t * (0.5 * hub_length);
                hub.min(segment_distance(x, &hub_mid, stub_dir, *stub_length))
            }
            PartGeometry::Elbow { center, from_center, axis, bend_radius, angle, t, .. } => {
                let q = x - center;
                let in_plane = q - axis * axis.dot(&q);
                if in_plane.norm() < 1e-12 {
                    // On the bend axis: every arc point is equally far.
                    return (q.norm_squared() + bend_radius * bend_radius).sqrt();
                }
                // Angle of the projection, measured from the arc start within
                // the bend plane, clamped to the arc.
                let c = in_plane.dot(from_center);
                let s = in_plane.dot(t);
                let phi = s.atan2(c).clamp(0.0, *angle);
                let rot =
                    Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), phi);
                let nearest = center + rot * (from_center * *bend_radius);
                (x - nearest).norm()
            }
        }
    }

    /// Whether `x` lies strictly inside this part's own tube volume, taken
    /// without end caps: radially within the wall and axially (or angularly)
    /// within the part's span. Used by the self-intersection check, where
    /// merely passing an open end must not count as interpenetration.
    fn contains_proper(&self, x: &Vector3<f64>) -> bool {
        match &self.geometry {
            PartGeometry::Straight { start, t, length, .. } => {
                segment_interior(x, start, t, *length, self.radius)
            }
            PartGeometry::Tee { start, t, hub_length, stub_dir, stub_length, .. } => {
                segment_interior(x, start, t, *hub_length, self.radius) || {
                    let mid = start + t * (0.5 * hub_length);
                    segment_interior(x, &mid, stub_dir, *stub_length, self.radius)
                }
            }
            PartGeometry::Elbow { center, from_center, axis, bend_radius, angle, t, .. } => {
                let q = x - center;
                let in_plane = q - axis * axis.dot(&q);
                if in_plane.norm() < 1e-12 {
                    return false;
                }
                let phi = in_plane.dot(t).atan2(in_plane.dot(from_center));
                if phi <= 0.0 || phi >= *angle {
                    return false;
                }
                let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), phi);
                let nearest = center + rot * (from_center * *bend_radius);
                (x - nearest).norm() < self.radius
            }
        }
    }
}

fn segment_distance(x: &Vector3<f64>, start: &Vector3<f64>, dir: &Vector3<f64>, len: f64) -> f64 {
    let z = dir.dot(&(x - start)).clamp(0.0, len);
    (x - (start + dir * z)).norm()
}

fn segment_interior(
    x: &Vector3<f64>,
    start: &Vector3<f64>,
    dir: &Vector3<f64>,
    len: f64,
    radius: f64,
) -> bool {
    let z = dir.dot(&(x - start));
    z > 0.0 && z < len && (x - (start + dir * z)).norm() < radius
}

/// A placed network with its sampled wall features.
pub struct Network {
    parts: Vec<BuiltPart>,
    points: Vec<SurfacePoint>,
    total_length: f64,
}

impl Network {
    pub fn parts(&self) -> &[BuiltPart] {
        &self.parts
    }

    pub fn points(&self) -> &[SurfacePoint] {
        &self.points
    }

    /// Arclength of the main path.
    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Largest part radius (used for trajectory margins).
    pub fn max_radius(&self) -> f64 {
        self.parts.iter().map(|p| p.radius).fold(0.0, f64::max)
    }

    /// Centerline position and right-handed frame `[n, b, t]` at arclength
    /// `s`, with `t` the direction of travel.
    pub fn frame_at(&self, s: f64) -> (Vector3<f64>, [Vector3<f64>; 3]) {
        let part = self.part_at(s);
        self.parts[part].frame_at(s)
    }

    /// Index of the part covering arclength `s`.
    pub fn part_at(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.total_length);
        self.parts
            .iter()
            .position(|p| s <= p.s1)
            .unwrap_or(self.parts.len() - 1)
    }

    /// Index of the part whose tube contains `x`, if any.
    pub fn part_containing(&self, x: &Vector3<f64>, tol: f64) -> Option<usize> {
        self.parts
            .iter()
            .position(|p| p.centerline_distance(x) <= p.radius + tol)
    }

    /// Whether `x` lies inside the tube volume (within `tol` of it).
    pub fn inside(&self, x: &Vector3<f64>, tol: f64) -> bool {
        self.part_containing(x, tol).is_some()
    }

    /// Ground-truth centerline polyline sampled every `step` millimeters.
    pub fn axis_polyline(&self, step: f64) -> Vec<Vector3<f64>> {
        let n = (self.total_length / step).ceil() as usize;
        (0..=n)
            .map(|i| self.frame_at((i as f64 * step).min(self.total_length)).0)
            .collect()
    }
}

/// Places every part, samples wall features at `density` points per square
/// millimeter, and verifies that non-adjacent tubes stay clear of each other.
pub fn build_network(spec: &PipeNetworkSpec, density: f64, seed: u64) -> Result<Network, SimError> {
    if spec.parts.is_empty() {
        return Err(SimError::InvalidSpec { part: 0, reason: "network has no parts".into() });
    }
    // March the centerline, carrying a parallel-transported frame so roll is
    // well defined: start at the origin heading +z.
    let mut p = Vector3::zeros();
    let mut n = Vector3::x();
    let mut b = Vector3::y();
    let mut t = Vector3::z();
    let mut s = 0.0;
    let mut parts: Vec<BuiltPart> = Vec::with_capacity(spec.parts.len());
    for (i, part) in spec.parts.iter().enumerate() {
        let radius = part.radius_or(spec.radius);
        if !radius.is_finite() || radius <= 0.0 {
            return Err(SimError::InvalidSpec { part: i, reason: format!("radius {radius}") });
        }
        let (geometry, advance) = match &part.kind {
            PartKind::Straight { length } => {
                if !length.is_finite() || *length <= 0.0 {
                    return Err(SimError::InvalidSpec {
                        part: i,
                        reason: format!("length {length}"),
                    });
                }
                let g = PartGeometry::Straight { start: p, n, b, t, length: *length };
                p += t * *length;
                (g, *length)
            }
            PartKind::Elbow { angle_deg, bend_radius, roll_deg } => {
                if !angle_deg.is_finite() || *angle_deg <= 0.0 || *angle_deg > 90.0 {
                    return Err(SimError::InvalidSpec {
                        part: i,
                        reason: format!("elbow angle {angle_deg} outside (0, 90]"),
                    });
                }
                if !bend_radius.is_finite() || *bend_radius <= radius {
                    return Err(SimError::InvalidSpec {
                        part: i,
                        reason: format!(
                            "bend radius {bend_radius} must exceed the tube radius {radius}"
                        ),
                    });
                }
                let angle = angle_deg.to_radians();
                let roll = roll_deg.to_radians();
                // Direction from the arc toward the bend center.
                let m = n * roll.cos() + b * roll.sin();
                let axis = t.cross(&m);
                let center = p + m * *bend_radius;
                let g = PartGeometry::Elbow {
                    center,
                    from_center: -m,
                    axis,
                    bend_radius: *bend_radius,
                    angle,
                    n,
                    b,
                    t,
                };
                let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), angle);
                p = center + rot * (-m * *bend_radius);
                n = rot * n;
                b = rot * b;
                t = rot * t;
                (g, bend_radius * angle)
            }
            PartKind::Tee { stub_length, roll_deg } => {
                if !stub_length.is_finite() || *stub_length <= 0.0 {
                    return Err(SimError::InvalidSpec {
                        part: i,
                        reason: format!("stub length {stub_length}"),
                    });
                }
                let hub_length = TEE_HUB_RADII * radius;
                let roll = roll_deg.to_radians();
                let stub_dir = n * roll.cos() + b * roll.sin();
                let g = PartGeometry::Tee {
                    start: p,
                    n,
                    b,
                    t,
                    hub_length,
                    stub_dir,
                    stub_length: *stub_length,
                };
                p += t * hub_length;
                (g, hub_length)
            }
        };
        parts.push(BuiltPart {
            spec: part.clone(),
            radius,
            s0: s,
            s1: s + advance,
            geometry,
        });
        s += advance;
    }

    check_clearance(&parts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (i, part) in parts.iter().enumerate() {
        sample_part(part, i, density, &mut rng, &mut points);
    }

    Ok(Network { parts, points, total_length: s })
}

/// Non-adjacent parts must keep their tubes disjoint; adjacent parts share a
/// joint by construction, and parts one apart may legitimately come close
/// around the short connector between them. Interpenetration is detected by
/// probing each part's centerline and wall with test points and asking
/// whether any of them lies strictly inside another part's volume (taken
/// without end caps, so passing close to an open end does not count).
fn check_clearance(parts: &[BuiltPart]) -> Result<(), SimError> {
    let probes: Vec<Vec<Vector3<f64>>> = parts.iter().map(probe_points).collect();
    for i in 0..parts.len() {
        for j in i + 2..parts.len() {
            let hit = probes[i].iter().any(|x| parts[j].contains_proper(x))
                || probes[j].iter().any(|x| parts[i].contains_proper(x));
            if hit {
                return Err(SimError::SelfIntersecting { a: i, b: j });
            }
        }
    }
    Ok(())
}

/// Test points covering one part: centerline stations every `CLEARANCE_STEP`
/// millimeters, each with a ring of wall points, plus the same treatment for
/// a tee's blind stub.
fn probe_points(p: &BuiltPart) -> Vec<Vector3<f64>> {
    const RING: usize = 12;
    let mut v = Vec::new();
    let len = p.s1 - p.s0;
    let stations = (len / CLEARANCE_STEP).ceil().max(1.0) as usize;
    for k in 0..=stations {
        let (c, [n, b, _]) = p.frame_at(p.s0 + len * k as f64 / stations as f64);
        v.push(c);
        for a in 0..RING {
            let phi = std::f64::consts::TAU * a as f64 / RING as f64;
            v.push(c + (n * phi.cos() + b * phi.sin()) * p.radius);
        }
    }
    if let PartGeometry::Tee { start, t, hub_length, stub_dir, stub_length, .. } = &p.geometry {
        let mid = start + t * (0.5 * hub_length);
        let (u, w) = crate::geom::orthonormal_basis(stub_dir);
        let m = (stub_length / CLEARANCE_STEP).ceil().max(1.0) as usize;
        for k in 0..=m {
            let c = mid + stub_dir * (stub_length * k as f64 / m as f64);
            v.push(c);
            for a in 0..RING {
                let phi = std::f64::consts::TAU * a as f64 / RING as f64;
                v.push(c + (u * phi.cos() + w * phi.sin()) * p.radius);
            }
        }
    }
    v
}

fn sample_part(
    part: &BuiltPart,
    index: usize,
    density: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<SurfacePoint>,
) {
    let r = part.radius;
    match &part.geometry {
        PartGeometry::Straight { start, n, b, t, length } => {
            let count = (density * std::f64::consts::TAU * r * length).round() as usize;
            for _ in 0..count {
                let z = rng.random_range(0.0..*length);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let position = start + t * z + (n * phi.cos() + b * phi.sin()) * r;
                out.push(SurfacePoint { position, part: index });
            }
        }
        PartGeometry::Elbow { center, from_center, axis, bend_radius, angle, .. } => {
            // Area of the torus segment is 2π·r·R·θ; the element grows with
            // distance from the bend axis, so sample (arc, azimuth) uniformly
            // and accept proportionally to that distance.
            let count =
                (density * std::f64::consts::TAU * r * bend_radius * angle).round() as usize;
            let mut accepted = 0;
            while accepted < count {
                let phi = rng.random_range(0.0..*angle);
                let psi = rng.random_range(0.0..std::f64::consts::TAU);
                let u = rng.random_range(0.0..1.0);
                if u * (bend_radius + r) >= bend_radius + r * psi.cos() {
                    continue;
                }
                let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), phi);
                let radial = rot * from_center;
                let ring_center = center + radial * *bend_radius;
                // psi = 0 points away from the bend center (outer wall).
                let position = ring_center + (radial * psi.cos() + axis * psi.sin()) * r;
                out.push(SurfacePoint { position, part: index });
                accepted += 1;
            }
        }
        PartGeometry::Tee { .. } => {
            // The junction region is featureless: the branch opening breaks
            // the wall and real junctions are machined smooth.
        }
    }
}
