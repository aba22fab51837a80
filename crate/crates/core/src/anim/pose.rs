//! Linear blend skinning and activation of blended Gaussians.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, PosedGaussians};
use crate::math::{normalize_quat, quat_arr, quat_mul, sigmoid, Mat3, Rigid, Vec3};
use crate::mesh::Skeleton;

/// Raw scale and opacity parameters are clamped to `±RAW_LIMIT` before
/// activation so that extreme blends stay finite and strictly inside the
/// activation ranges.
pub const RAW_LIMIT: f64 = 30.0;

/// Global rigid transform plus one axis-angle rotation per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseSpec", into = "PoseSpec")]
pub struct Pose {
    pub global: Rigid,
    pub joints: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    /// `[qw, qx, qy, qz, tx, ty, tz]`.
    pub global: [f64; 7],
    pub joints: Vec<[f64; 3]>,
}

impl TryFrom<PoseSpec> for Pose {
    type Error = Error;

    fn try_from(s: PoseSpec) -> Result<Pose> {
        if s.joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint rotation".into()));
        }
        Ok(Pose {
            global: Rigid::from_array7(s.global)?,
            joints: s.joints,
        })
    }
}

impl From<Pose> for PoseSpec {
    fn from(p: Pose) -> PoseSpec {
        PoseSpec {
            global: p.global.to_array7(),
            joints: p.joints,
        }
    }
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Self {
            global: Rigid::identity(),
            joints: vec![[0.0; 3]; joint_count],
        }
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.joints.len() != joint_count {
            return Err(Error::Dimension(format!(
                "pose has {} joints, skeleton has {joint_count}",
                self.joints.len()
            )));
        }
        let g = self.global.to_array7();
        if g.iter().chain(self.joints.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose".into()));
        }
        Ok(())
    }
}

/// Per-joint skinning transforms with the global transform folded in.
pub(crate) struct JointTransforms {
    rot: Vec<Mat3>,
    trans: Vec<Vec3>,
    quat: Vec<[f64; 4]>,
    global_rot: Mat3,
    global_trans: Vec3,
    global_quat: [f64; 4],
}

impl JointTransforms {
    pub fn new(skeleton: &Skeleton, pose: &Pose) -> Result<Self> {
        pose.validate(skeleton.joint_count())?;
        let a = skeleton.skinning_transforms(&pose.joints)?;
        Ok(Self {
            rot: a.iter().map(|t| t.rotation_matrix()).collect(),
            trans: a.iter().map(|t| t.translation).collect(),
            quat: a.iter().map(|t| quat_arr(&t.rotation)).collect(),
            global_rot: pose.global.rotation_matrix(),
            global_trans: pose.global.translation,
            global_quat: quat_arr(&pose.global.rotation),
        })
    }

    /// Blended linear part (global included), translation and rotation
    /// factor for one row of skin weights.
    #[inline]
    pub fn blend(&self, w: &[f64]) -> (Mat3, Vec3, [f64; 4]) {
        let mut m = Mat3::zeros();
        let mut t = Vec3::zeros();
        let mut best = 0;
        for (j, &wj) in w.iter().enumerate() {
            if wj > w[best] {
                best = j;
            }
        }
        let reference = self.quat[best];
        let mut q = [0.0; 4];
        for (j, &wj) in w.iter().enumerate() {
            if wj == 0.0 {
                continue;
            }
            m += self.rot[j] * wj;
            t += self.trans[j] * wj;
            let qj = self.quat[j];
            let dot: f64 = (0..4).map(|a| qj[a] * reference[a]).sum();
            let s = if dot < 0.0 { -wj } else { wj };
            for a in 0..4 {
                q[a] += s * qj[a];
            }
        }
        let q = normalize_quat(q).unwrap_or(reference);
        (
            self.global_rot * m,
            self.global_rot * t + self.global_trans,
            quat_mul(self.global_quat, q),
        )
    }
}

/// Quantities of the forward pass reused by the backward pass.
#[derive(Clone, Debug, Default)]
pub struct PoseCache {
    /// Per-Gaussian linear part `G_R · Σ_j w_ij R_j` (row-major 3×3).
    pub linear: Vec<Mat3>,
}

/// Poses raw blended Gaussians: positions by the blended skinning transform,
/// rotations left-multiplied by its rotation factor, SH frames set to that
/// factor, scales and opacities activated.
pub fn lbs_pose(
    g: &GaussianSet,
    skin_weights: &[f64],
    skeleton: &Skeleton,
    pose: &Pose,
) -> Result<PosedGaussians> {
    lbs_pose_cached(g, skin_weights, skeleton, pose).map(|(p, _)| p)
}

pub fn lbs_pose_cached(
    g: &GaussianSet,
    skin_weights: &[f64],
    skeleton: &Skeleton,
    pose: &Pose,
) -> Result<(PosedGaussians, PoseCache)> {
    g.check_lengths()?;
    let n = g.len();
    let j = skeleton.joint_count();
    if skin_weights.len() != n * j {
        return Err(Error::Dimension(format!(
            "skin weights have {} entries, expected N×J = {}",
            skin_weights.len(),
            n * j
        )));
    }
    let jt = JointTransforms::new(skeleton, pose)?;
    let c = 3 * g.sh_coeffs();
    let mut out = PosedGaussians {
        sh_degree: g.sh_degree,
        positions: vec![0.0; n * 3],
        rotations: vec![0.0; n * 4],
        scales: vec![0.0; n * 3],
        opacities: vec![0.0; n],
        sh: g.sh.clone(),
        sh_frames: vec![0.0; n * 4],
    };
    let mut linear = vec![Mat3::zeros(); n];
    const CHUNK: usize = 1024;
    out.positions
        .par_chunks_mut(3 * CHUNK)
        .zip(out.rotations.par_chunks_mut(4 * CHUNK))
        .zip(out.scales.par_chunks_mut(3 * CHUNK))
        .zip(out.opacities.par_chunks_mut(CHUNK))
        .zip(out.sh_frames.par_chunks_mut(4 * CHUNK))
        .zip(linear.par_chunks_mut(CHUNK))
        .enumerate()
        .try_for_each(|(chunk, (((((pos, rot), scl), opa), frm), lin))| {
            for local in 0..opa.len() {
                let i = chunk * CHUNK + local;
                let (m, t, fq) = jt.blend(&skin_weights[i * j..(i + 1) * j]);
                let x = Vec3::from(g.position(i));
                let y = m * x + t;
                pos[local * 3..local * 3 + 3].copy_from_slice(y.as_slice());
                let q = normalize_quat(g.rotation(i)).ok_or_else(|| {
                    Error::invalid("rotation", format!("gaussian {i} has a zero-norm quaternion"))
                })?;
                rot[local * 4..local * 4 + 4].copy_from_slice(&quat_mul(fq, q));
                for a in 0..3 {
                    scl[local * 3 + a] = g.scales[i * 3 + a].clamp(-RAW_LIMIT, RAW_LIMIT).exp();
                }
                opa[local] = sigmoid(g.opacities[i].clamp(-RAW_LIMIT, RAW_LIMIT));
                frm[local * 4..local * 4 + 4].copy_from_slice(&fq);
                lin[local] = m;
            }
            Ok::<(), Error>(())
        })?;
    debug_assert_eq!(out.sh.len(), n * c);
    if out.positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posed positions".into()));
    }
    Ok((out, PoseCache { linear }))
}
