//! Rigid transforms and small vector helpers shared across modules.
//!
//! World frame is z-up. Camera frames follow the pinhole convention: +x right,
//! +y down, +z along the optical axis.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Rigid {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self::new(rot_z(yaw), translation)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Rigid) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Heading of the rotated +x axis in the ground plane, in [0, 2π).
    pub fn yaw(&self) -> f64 {
        wrap_angle(self.rotation[(1, 0)].atan2(self.rotation[(0, 0)]))
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.iter().all(|v| v.abs() < tol) && self.rotation.determinant() > 0.0
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Self {
        Self::new(
            Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            Vec3::new(a[9], a[10], a[11]),
        )
    }

    /// Angle of the relative rotation between two transforms, radians.
    pub fn rotation_angle_to(&self, other: &Rigid) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Smallest absolute difference between two angles.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

/// Camera-to-world transform for a camera at `eye` looking at `target` with world +z up.
pub fn look_at(eye: Vec3, target: Vec3) -> Rigid {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&Vec3::z());
    if right.norm() < 1e-9 {
        right = Vec3::x();
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    Rigid::new(Matrix3::from_columns(&[right, down, forward]), eye)
}

pub fn to_vec3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

pub fn from_vec3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Componentwise bounds of a point set; `None` when empty.
pub fn bounds(points: &[[f64; 3]]) -> Option<([f64; 3], [f64; 3])> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Some((lo, hi))
}

/// Upright object box: center, heading about world +z and full extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectState {
    pub position: [f64; 3],
    pub yaw: f64,
    pub size: [f64; 3],
}

impl ObjectState {
    /// Object-to-world transform.
    pub fn pose(&self) -> Rigid {
        Rigid::from_yaw(self.yaw, to_vec3(self.position))
    }

    /// World point to normalized box coordinates (`[0,1]^3` inside the box).
    pub fn normalize(&self, p: &[f64; 3]) -> [f64; 3] {
        let q = self.pose().inverse().apply(&to_vec3(*p));
        [0, 1, 2].map(|k| q[k] / self.size[k] + 0.5)
    }

    /// Normalized box coordinates back to world.
    pub fn denormalize(&self, u: &[f64; 3]) -> [f64; 3] {
        let q = Vec3::new(
            (u[0] - 0.5) * self.size[0],
            (u[1] - 0.5) * self.size[1],
            (u[2] - 0.5) * self.size[2],
        );
        from_vec3(&self.pose().apply(&q))
    }

    /// Whether `p` lies in the box grown by the factor `1 + inflate`.
    pub fn contains(&self, p: &[f64; 3], inflate: f64) -> bool {
        let u = self.normalize(p);
        let half = 0.5 * (1.0 + inflate);
        u.iter().all(|c| (c - 0.5).abs() <= half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let t = Rigid::new(rot_z(0.3) * rot_x(0.2), Vec3::new(1.0, -2.0, 0.5));
        let p = Vec3::new(0.1, 0.2, 0.3);
        let q = t.inverse().apply(&t.apply(&p));
        assert!((p - q).norm() < 1e-12);
        assert!(t.is_orthonormal(1e-9));
    }

    #[test]
    fn yaw_of_rot_z() {
        for a in [0.0, 0.5, 3.0, 6.0] {
            let t = Rigid::from_yaw(a, Vec3::zeros());
            assert!(angle_diff(t.yaw(), a) < 1e-12);
        }
    }

    #[test]
    fn look_at_points_forward() {
        let eye = Vec3::new(1.0, 2.0, 1.0);
        let cam = look_at(eye, Vec3::zeros());
        let f = cam.apply_vector(&Vec3::z());
        assert!((f - (-eye).normalize()).norm() < 1e-12);
        // image "down" has a negative world-z component
        assert!(cam.apply_vector(&Vec3::y()).z < 0.0);
        assert!(cam.is_orthonormal(1e-9));
    }
}
