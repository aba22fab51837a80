//! Small geometric helpers shared by the mesh, animation and rendering code.
//!
//! Quaternions are stored as `[w, x, y, z]` arrays throughout the crate.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

#[inline]
pub fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[inline]
pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[inline]
pub fn unit_quat(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

#[inline]
pub fn quat_arr(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Hamilton product `a ⊗ b` on `[w, x, y, z]` arrays.
#[inline]
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Adjoint of `b ↦ a ⊗ b`: maps a gradient on the product back onto `b`.
#[inline]
pub fn quat_left_mul_transpose(a: [f64; 4], g: [f64; 4]) -> [f64; 4] {
    // a ⊗ b = L(a) b with L(a) orthogonal for unit a; return L(a)^T g.
    let [aw, ax, ay, az] = a;
    [
        aw * g[0] + ax * g[1] + ay * g[2] + az * g[3],
        -ax * g[0] + aw * g[1] + az * g[2] - ay * g[3],
        -ay * g[0] - az * g[1] + aw * g[2] + ax * g[3],
        -az * g[0] + ay * g[1] - ax * g[2] + aw * g[3],
    ]
}

#[inline]
pub fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_mat(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `quat_to_mat` with respect to the four quaternion components,
/// given `dr = dL/dR`.
pub fn quat_to_mat_backward(q: [f64; 4], dr: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |i: usize, j: usize| dr[(i, j)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
        + z * g(2, 0)
        + w * g(2, 1)
        - 2.0 * x * g(2, 2));
    let dy = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
        - w * g(2, 0)
        + z * g(2, 1)
        - 2.0 * y * g(2, 2));
    let dz = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0)
        - 2.0 * z * g(1, 1)
        + y * g(1, 2)
        + x * g(2, 0)
        + y * g(2, 1));
    [dw, dx, dy, dz]
}

/// Normalizes a raw quaternion parameter; fails on a (near) zero norm.
pub fn normalize_quat(q: [f64; 4]) -> Option<[f64; 4]> {
    let n = quat_norm(q);
    if !(n > 1e-12) || !n.is_finite() {
        return None;
    }
    Some([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Backward of `q / |q|` for a gradient `g` on the normalized quaternion.
pub fn normalize_quat_backward(q: [f64; 4], g: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let dot = u[0] * g[0] + u[1] * g[1] + u[2] * g[2] + u[3] * g[3];
    [
        (g[0] - u[0] * dot) / n,
        (g[1] - u[1] * dot) / n,
        (g[2] - u[2] * dot) / n,
        (g[3] - u[3] * dot) / n,
    ]
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A rigid motion `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub rotation: UnitQuaternion<f64>,
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
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Rigid {
        let inv = self.rotation.inverse();
        Rigid {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds a rigid transform from a 4×4 matrix, validating that the
    /// upper-left block is orthonormal within `tol` and the last row is
    /// `[0, 0, 0, 1]`.
    pub fn from_matrix4(m: &Matrix4<f64>, tol: f64) -> Result<Rigid> {
        let r: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
        let last = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid(
                "rest transform",
                format!("last row must be [0,0,0,1], got {last:?}"),
            ));
        }
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho > tol || r.determinant() <= 0.0 {
            return Err(Error::invalid(
                "rest transform",
                format!("rotation block is not a proper rotation (error {ortho:e})"),
            ));
        }
        let rot = Rotation3::from_matrix(&r);
        Ok(Rigid::new(UnitQuaternion::from_rotation_matrix(&rot), t))
    }

    /// Pose encoding used by frame files: `[qw, qx, qy, qz, tx, ty, tz]`.
    pub fn from_array7(a: [f64; 7]) -> Result<Rigid> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rigid transform".into()));
        }
        let q = normalize_quat([a[0], a[1], a[2], a[3]])
            .ok_or_else(|| Error::invalid("rigid transform", "zero-norm quaternion"))?;
        Ok(Rigid::new(unit_quat(q), Vec3::new(a[4], a[5], a[6])))
    }

    pub fn to_array7(&self) -> [f64; 7] {
        let q = quat_arr(&self.rotation);
        let t = self.translation;
        [q[0], q[1], q[2], q[3], t.x, t.y, t.z]
    }
}

/// Serializable form of a rigid transform (`rotation` as `[w,x,y,z]`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidSpec {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Rigid> for RigidSpec {
    fn from(r: &Rigid) -> Self {
        RigidSpec {
            rotation: quat_arr(&r.rotation),
            translation: arr3(&r.translation),
        }
    }
}

impl TryFrom<&RigidSpec> for Rigid {
    type Error = Error;

    fn try_from(s: &RigidSpec) -> Result<Rigid> {
        let q = normalize_quat(s.rotation)
            .ok_or_else(|| Error::invalid("rotation", "zero-norm quaternion"))?;
        if s.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(Rigid::new(unit_quat(q), v3(s.translation)))
    }
}

/// World-to-camera transform for an OpenCV-style camera (x right, y down,
/// z forward) placed at `eye` looking at `target`, with `up` pointing up in
/// the image.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Rigid {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    // Rows of the world-to-camera rotation are the camera axes in world space.
    let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Rigid::new(rot, -(rot * eye))
}
