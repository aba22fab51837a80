use nalgebra::{Matrix4, UnitQuaternion};

use crate::error::{Error, Result};
use crate::math::{Rigid, Vec3};

/// Tolerance on the orthonormality of stored rest rotations. Rest
/// transforms are stored as `f32`, so exact orthonormality is not expected.
const REST_TOLERANCE: f64 = 1e-4;

/// Joint hierarchy in topological order (every parent precedes its children).
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    parents: Vec<i32>,
    /// Rest transforms as stored (row-major 4×4), kept for lossless saving.
    rest_matrices: Vec<[f64; 16]>,
    rest: Vec<Rigid>,
    names: Vec<String>,
}

impl Skeleton {
    pub fn new(parents: Vec<i32>, rest: Vec<Rigid>, names: Vec<String>) -> Result<Self> {
        let rest_matrices = rest
            .iter()
            .map(|r| {
                let m = r.to_matrix4();
                let mut a = [0.0; 16];
                for i in 0..4 {
                    for j in 0..4 {
                        a[i * 4 + j] = m[(i, j)];
                    }
                }
                a
            })
            .collect();
        Self::from_parts(parents, rest_matrices, rest, names)
    }

    /// Builds a skeleton from row-major 4×4 rest matrices.
    pub fn from_matrices(
        parents: Vec<i32>,
        rest_matrices: Vec<[f64; 16]>,
        names: Vec<String>,
    ) -> Result<Self> {
        let rest = rest_matrices
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let m = Matrix4::from_row_slice(a);
                Rigid::from_matrix4(&m, REST_TOLERANCE).map_err(|e| {
                    Error::invalid(format!("rest_transforms[{j}]"), e.to_string())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(parents, rest_matrices, rest, names)
    }

    fn from_parts(
        parents: Vec<i32>,
        rest_matrices: Vec<[f64; 16]>,
        rest: Vec<Rigid>,
        names: Vec<String>,
    ) -> Result<Self> {
        let j = parents.len();
        if j == 0 {
            return Err(Error::invalid("skeleton", "at least one joint is required"));
        }
        if rest.len() != j || names.len() != j {
            return Err(Error::Dimension(format!(
                "skeleton has {j} parents, {} rest transforms, {} names",
                rest.len(),
                names.len()
            )));
        }
        for (c, &p) in parents.iter().enumerate() {
            if p < -1 || p >= c as i32 {
                return Err(Error::invalid(
                    format!("parents[{c}]"),
                    format!("parent {p} must be -1 or a lower joint index"),
                ));
            }
        }
        Ok(Self {
            parents,
            rest_matrices,
            rest,
            names,
        })
    }

    /// Rounds the stored rest matrices to `f32`, as they are stored on disk.
    pub fn quantize_f32(&mut self) -> Result<()> {
        let m = self
            .rest_matrices
            .iter()
            .map(|a| a.map(|v| v as f32 as f64))
            .collect();
        *self = Self::from_matrices(self.parents.clone(), m, self.names.clone())?;
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self) -> &[i32] {
        &self.parents
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        let p = self.parents[j];
        (p >= 0).then_some(p as usize)
    }

    pub fn rest(&self) -> &[Rigid] {
        &self.rest
    }

    pub fn rest_matrices(&self) -> &[[f64; 16]] {
        &self.rest_matrices
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// World transforms of every joint for the given local joint rotations
    /// (axis-angle vectors), without the global transform.
    ///
    /// A joint rotates about its own rest frame:
    /// `world_j = world_parent · rest_parent⁻¹ · rest_j · Rot(θ_j)`.
    pub fn world_transforms(&self, joint_rotations: &[[f64; 3]]) -> Result<Vec<Rigid>> {
        if joint_rotations.len() != self.joint_count() {
            return Err(Error::Dimension(format!(
                "{} joint rotations for {} joints",
                joint_rotations.len(),
                self.joint_count()
            )));
        }
        let mut world: Vec<Rigid> = Vec::with_capacity(self.joint_count());
        for (j, theta) in joint_rotations.iter().enumerate() {
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("rotation of joint {j}")));
            }
            let local = Rigid::new(
                UnitQuaternion::from_scaled_axis(Vec3::new(theta[0], theta[1], theta[2])),
                Vec3::zeros(),
            );
            let posed = self.rest[j].compose(&local);
            let w = match self.parent(j) {
                Some(p) => world[p].compose(&self.rest[p].inverse()).compose(&posed),
                None => posed,
            };
            world.push(w);
        }
        Ok(world)
    }

    /// Skinning transforms `A_j = world_j · rest_j⁻¹`, mapping rest-space
    /// points to posed space. Identity for the zero pose.
    pub fn skinning_transforms(&self, joint_rotations: &[[f64; 3]]) -> Result<Vec<Rigid>> {
        let world = self.world_transforms(joint_rotations)?;
        Ok(world
            .iter()
            .zip(&self.rest)
            .map(|(w, r)| w.compose(&r.inverse()))
            .collect())
    }
}
