//! Per-triangle deformation gradients and their rotation factors.

use nalgebra::{Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::math::{quat_arr, Mat3, Vec3, IDENTITY_QUAT};
use crate::mesh::{is_degenerate, MeshBlendshapeModel};

/// Affine map `x ↦ A x + t` taking triangle `tri` of `M_0` onto the same
/// triangle of `M_k`. The local frame is the two edge vectors plus the unit
/// normal, so the map is exact on the triangle's vertices.
pub fn triangle_affine(model: &MeshBlendshapeModel, tri: usize, k: usize) -> Result<(Mat3, Vec3)> {
    if tri >= model.triangle_count() {
        return Err(Error::OutOfRange {
            what: "triangle",
            index: tri,
            limit: model.triangle_count(),
        });
    }
    if k >= model.blendshape_count() {
        return Err(Error::OutOfRange {
            what: "blendshape index",
            index: k,
            limit: model.blendshape_count(),
        });
    }
    let f = model.faces()[tri];
    let d = model.deltas(k);
    if f.iter().all(|&v| d[v as usize] == Vec3::zeros()) {
        return Ok((Mat3::identity(), Vec3::zeros()));
    }
    let [a0, b0, c0] = model.triangle(tri);
    let [a1, b1, c1] = model.expression_triangle(k, tri);
    if is_degenerate(&a1, &b1, &c1) {
        return Err(Error::DegenerateTriangle {
            triangle: tri,
            message: format!("zero area in expression mesh {k}"),
        });
    }
    let frame = |a: &Vec3, b: &Vec3, c: &Vec3| {
        let e1 = b - a;
        let e2 = c - a;
        Mat3::from_columns(&[e1, e2, e1.cross(&e2).normalize()])
    };
    let f0 = frame(&a0, &b0, &c0);
    let f1 = frame(&a1, &b1, &c1);
    let inv = f0.try_inverse().ok_or_else(|| Error::DegenerateTriangle {
        triangle: tri,
        message: "neutral frame is singular".into(),
    })?;
    let a = f1 * inv;
    Ok((a, a1 - a * a0))
}

/// Orthogonal polar factor of `a` as a unit quaternion with `w ≥ 0`.
pub fn extract_rotation(a: &Mat3) -> Result<[f64; 4]> {
    let det = a.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::NotOrientationPreserving { det });
    }
    if *a == Mat3::identity() {
        return Ok(IDENTITY_QUAT);
    }
    // Scaled Newton iteration X ← (γX + (γX)^-T) / 2 converges quadratically
    // to the polar factor for nonsingular X.
    let mut x = *a;
    for it in 0..100 {
        let inv = x.try_inverse().ok_or(Error::NotOrientationPreserving { det })?;
        let gamma = if it < 10 {
            (inv.norm() / x.norm()).sqrt()
        } else {
            1.0
        };
        let next = (x * gamma + inv.transpose() / gamma) * 0.5;
        let change = (next - x).norm();
        x = next;
        if change <= 1e-15 * x.norm() {
            break;
        }
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(x));
    let mut q = quat_arr(&q);
    if q[0] < 0.0 {
        q = q.map(|v| -v);
    }
    Ok(q)
}

/// Rotation factor of every triangle for every blendshape, `K × T`
/// blendshape-major.
pub fn triangle_rotations(model: &MeshBlendshapeModel) -> Result<Vec<[f64; 4]>> {
    use rayon::prelude::*;
    let t = model.triangle_count();
    (0..model.blendshape_count() * t)
        .into_par_iter()
        .map(|idx| {
            let (k, tri) = (idx / t, idx % t);
            let (a, _) = triangle_affine(model, tri, k)?;
            extract_rotation(&a).map_err(|e| match e {
                Error::NotOrientationPreserving { det } => Error::DegenerateTriangle {
                    triangle: tri,
                    message: format!("deformation to expression {k} flips the triangle (det {det:e})"),
                },
                e => e,
            })
        })
        .collect()
}
