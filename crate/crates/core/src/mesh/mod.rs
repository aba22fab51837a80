//! Mesh blendshape model: neutral mesh, per-expression vertex offsets,
//! skeleton and per-vertex skinning weights, plus closest-point queries.

mod bvh;
pub mod grid;
pub mod io;
pub mod skeleton;

pub use grid::{DisplacementGrid, GridSample};
pub use skeleton::Skeleton;

use bvh::Bvh;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Tolerance on per-vertex skin weight row sums.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// A point on the neutral mesh: triangle plus barycentric coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceAttachment {
    pub triangle: u32,
    pub barycentric: [f64; 3],
}

impl SurfaceAttachment {
    pub fn validate(&self, triangle_count: usize) -> Result<()> {
        if self.triangle as usize >= triangle_count {
            return Err(Error::OutOfRange {
                what: "triangle",
                index: self.triangle as usize,
                limit: triangle_count,
            });
        }
        let b = self.barycentric;
        let sum = b[0] + b[1] + b[2];
        if b.iter().any(|&x| !(-1e-9..=1.0 + 1e-9).contains(&x)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "barycentric",
                format!("{b:?} is not a convex combination"),
            ));
        }
        Ok(())
    }
}

/// Raw arrays of a mesh blendshape model, validated by
/// [`MeshBlendshapeModel::new`].
#[derive(Clone, Debug)]
pub struct MeshParts {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// `K × V` vertex offsets `M_k − M_0`, blendshape-major.
    pub deltas: Vec<[f64; 3]>,
    pub blendshape_count: usize,
    pub skeleton: Skeleton,
    /// `V × J` row-major.
    pub skin_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MeshBlendshapeModel {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    deltas: Vec<Vec3>,
    k: usize,
    skeleton: Skeleton,
    skin_weights: Vec<f64>,
    max_displacement: Vec<f64>,
    bvh: Bvh,
}

impl MeshBlendshapeModel {
    pub fn new(parts: MeshParts) -> Result<Self> {
        let MeshParts {
            vertices,
            faces,
            deltas,
            blendshape_count: k,
            skeleton,
            skin_weights,
        } = parts;
        let v = vertices.len();
        let j = skeleton.joint_count();
        if v == 0 || faces.is_empty() {
            return Err(Error::invalid("mesh", "needs at least one vertex and one face"));
        }
        if k == 0 {
            return Err(Error::invalid("K", "at least one blendshape is required"));
        }
        if deltas.len() != k * v {
            return Err(Error::Dimension(format!(
                "deltas has {} rows, expected K×V = {}",
                deltas.len(),
                k * v
            )));
        }
        if skin_weights.len() != v * j {
            return Err(Error::Dimension(format!(
                "skin_weights has {} entries, expected V×J = {}",
                skin_weights.len(),
                v * j
            )));
        }
        if vertices.iter().chain(&deltas).flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vertex positions or deltas".into()));
        }
        if let Some(&i) = faces.iter().flatten().find(|&&i| i as usize >= v) {
            return Err(Error::OutOfRange {
                what: "face vertex index",
                index: i as usize,
                limit: v,
            });
        }
        for (i, row) in skin_weights.chunks_exact(j).enumerate() {
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::invalid(
                    format!("skin_weights[{i}]"),
                    "weights must be finite and nonnegative",
                ));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::invalid(
                    format!("skin_weights[{i}]"),
                    format!("weights not normalized (sum {s})"),
                ));
            }
        }
        let vertices: Vec<Vec3> = vertices.iter().map(|p| Vec3::from(*p)).collect();
        for (t, f) in faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            if is_degenerate(&a, &b, &c) {
                return Err(Error::DegenerateTriangle {
                    triangle: t,
                    message: "zero area in the neutral mesh".into(),
                });
            }
        }
        let deltas: Vec<Vec3> = deltas.iter().map(|p| Vec3::from(*p)).collect();
        let max_displacement = deltas
            .chunks_exact(v)
            .map(|d| d.iter().map(|x| x.norm()).fold(0.0, f64::max))
            .collect();
        let bvh = Bvh::build(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            deltas,
            k,
            skeleton,
            skin_weights,
            max_displacement,
            bvh,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.faces.len()
    }

    pub fn blendshape_count(&self) -> usize {
        self.k
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn skin_weights(&self) -> &[f64] {
        &self.skin_weights
    }

    pub fn vertex_weights(&self, v: usize) -> &[f64] {
        let j = self.joint_count();
        &self.skin_weights[v * j..(v + 1) * j]
    }

    /// Offsets of blendshape `k` for all vertices.
    pub fn deltas(&self, k: usize) -> &[Vec3] {
        let v = self.vertex_count();
        &self.deltas[k * v..(k + 1) * v]
    }

    pub fn all_deltas(&self) -> &[Vec3] {
        &self.deltas
    }

    /// Vertex `v` of the expression mesh `M_k`.
    pub fn expression_vertex(&self, k: usize, v: usize) -> Vec3 {
        self.vertices[v] + self.deltas[k * self.vertex_count() + v]
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.faces[t].map(|i| self.vertices[i as usize])
    }

    pub fn expression_triangle(&self, k: usize, t: usize) -> [Vec3; 3] {
        self.faces[t].map(|i| self.expression_vertex(k, i as usize))
    }

    /// Largest vertex displacement of blendshape `k` (the normalizer `d̃_k`).
    pub fn max_displacement(&self, k: usize) -> f64 {
        self.max_displacement[k]
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangle_count())
            .map(|t| triangle_area(&self.triangle(t)))
            .sum()
    }

    /// Point of `M_0` described by an attachment.
    pub fn attachment_point(&self, att: &SurfaceAttachment) -> Vec3 {
        let [a, b, c] = self.triangle(att.triangle as usize);
        let w = att.barycentric;
        a * w[0] + b * w[1] + c * w[2]
    }

    /// Nearest point of `M_0` to `p`; ties go to the lowest triangle index.
    pub fn closest_attachment(&self, p: &Vec3) -> SurfaceAttachment {
        let hit = self
            .bvh
            .nearest(&self.vertices, &self.faces, p)
            .expect("model has at least one face");
        SurfaceAttachment {
            triangle: hit.triangle as u32,
            barycentric: hit.barycentric,
        }
    }

    /// Exhaustive scan over all triangles; reference for
    /// [`closest_attachment`](Self::closest_attachment).
    pub fn closest_attachment_brute_force(&self, p: &Vec3) -> SurfaceAttachment {
        let mut best: Option<bvh::Hit> = None;
        for t in 0..self.triangle_count() {
            let [a, b, c] = self.triangle(t);
            let (q, bary) = closest_point_on_triangle(p, &a, &b, &c);
            let hit = bvh::Hit {
                triangle: t,
                dist2: (q - p).norm_squared(),
                barycentric: bary,
            };
            if best.as_ref().map_or(true, |b| hit.better_than(b)) {
                best = Some(hit);
            }
        }
        let hit = best.expect("model has at least one face");
        SurfaceAttachment {
            triangle: hit.triangle as u32,
            barycentric: hit.barycentric,
        }
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k >= self.k {
            return Err(Error::OutOfRange {
                what: "blendshape index",
                index: k,
                limit: self.k,
            });
        }
        Ok(())
    }

    /// Barycentric interpolation of blendshape `k`'s vertex offsets.
    pub fn displacement(&self, att: &SurfaceAttachment, k: usize) -> Result<Vec3> {
        self.check_k(k)?;
        Ok(self.displacement_unchecked(att, k))
    }

    fn displacement_unchecked(&self, att: &SurfaceAttachment, k: usize) -> Vec3 {
        let d = self.deltas(k);
        let f = self.faces[att.triangle as usize];
        let w = att.barycentric;
        d[f[0] as usize] * w[0] + d[f[1] as usize] * w[1] + d[f[2] as usize] * w[2]
    }

    /// `d_{i,k}`: length of the interpolated displacement of blendshape `k`.
    pub fn displacement_magnitude(&self, att: &SurfaceAttachment, k: usize) -> Result<f64> {
        Ok(self.displacement(att, k)?.norm())
    }

    /// Displacement magnitudes for every blendshape, written into `out`.
    pub fn displacement_magnitudes_into(&self, att: &SurfaceAttachment, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.k) {
            *o = self.displacement_unchecked(att, k).norm();
        }
    }

    pub fn interpolated_skin_weights(&self, att: &SurfaceAttachment) -> Vec<f64> {
        let mut out = vec![0.0; self.joint_count()];
        self.interpolated_skin_weights_into(att, &mut out);
        out
    }

    pub fn interpolated_skin_weights_into(&self, att: &SurfaceAttachment, out: &mut [f64]) {
        let f = self.faces[att.triangle as usize];
        let w = att.barycentric;
        out.fill(0.0);
        for c in 0..3 {
            for (o, x) in out.iter_mut().zip(self.vertex_weights(f[c] as usize)) {
                *o += w[c] * x;
            }
        }
    }
}

pub fn triangle_area(t: &[Vec3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

/// A triangle is degenerate when its edges are (numerically) parallel.
pub fn is_degenerate(a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let cross = e1.cross(&e2).norm();
    !(cross > 1e-10 * e1.norm() * e2.norm()) || cross == 0.0
}

/// Closest point of triangle `abc` to `p`, with barycentric coordinates
/// `(u, v, w)` so that the point is `u·a + v·b + w·c`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    // Voronoi-region walk over vertices, edges and face.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}
