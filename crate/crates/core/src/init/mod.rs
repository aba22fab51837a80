//! Initialization of the neutral Gaussians, their per-expression deltas and
//! the mouth-interior Gaussians from a mesh blendshape model.

pub mod deform;
pub mod poisson;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use deform::{extract_rotation, triangle_affine, triangle_rotations};
pub use poisson::{poisson_radius, poisson_sample_surface, SurfaceSamples};

use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::math::{logit, quat_mul, quat_to_mat, v3, Vec3, IDENTITY_QUAT};
use crate::mesh::{MeshBlendshapeModel, SurfaceAttachment};
use crate::sh::{ShRotation, MAX_DEGREE};

/// A rectangle `center + a·half_u + b·half_v` for `a, b ∈ [-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Billboard {
    pub center: [f64; 3],
    pub half_u: [f64; 3],
    pub half_v: [f64; 3],
}

impl Billboard {
    pub fn area(&self) -> f64 {
        4.0 * v3(self.half_u).cross(&v3(self.half_v)).norm()
    }

    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        v3(self.center) + v3(self.half_u) * a + v3(self.half_v) * b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MouthConfig {
    pub upper: Billboard,
    pub lower: Billboard,
}

impl Default for MouthConfig {
    fn default() -> Self {
        Self {
            upper: Billboard {
                center: [0.0, -0.03, 0.05],
                half_u: [0.02, 0.0, 0.0],
                half_v: [0.0, 0.004, 0.0],
            },
            lower: Billboard {
                center: [0.0, -0.045, 0.05],
                half_u: [0.02, 0.0, 0.0],
                half_v: [0.0, 0.004, 0.0],
            },
        }
    }
}

/// Capped cylinder bounding the mouth cavity in canonical space; mouth
/// Gaussians are penalized for leaving it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MouthVolume {
    pub center: [f64; 3],
    /// Cylinder axis (normalized on use).
    pub axis: [f64; 3],
    pub radius: f64,
    pub half_length: f64,
}

impl Default for MouthVolume {
    fn default() -> Self {
        Self {
            center: [0.0, -0.0375, 0.04],
            axis: [1.0, 0.0, 0.0],
            radius: 0.02,
            half_length: 0.03,
        }
    }
}

impl MouthVolume {
    /// Signed distance to the capped cylinder (negative inside).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let (v, _) = self.sdf_with_grad(p);
        v
    }

    /// Signed distance and its gradient with respect to `p`.
    pub fn sdf_with_grad(&self, p: &Vec3) -> (f64, Vec3) {
        let axis = v3(self.axis).normalize();
        let rel = p - v3(self.center);
        let h = rel.dot(&axis);
        let radial = rel - axis * h;
        let rn = radial.norm();
        let dr = rn - self.radius;
        let dh = h.abs() - self.half_length;
        let radial_dir = if rn > 0.0 { radial / rn } else { Vec3::zeros() };
        let axial_dir = axis * h.signum();
        if dr > 0.0 && dh > 0.0 {
            let n = (dr * dr + dh * dh).sqrt();
            (n, (radial_dir * dr + axial_dir * dh) / n)
        } else if dr > dh {
            (dr, radial_dir)
        } else {
            (dh, axial_dir)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub neutral_target_count: usize,
    pub mouth_target_count: usize,
    pub sh_degree: usize,
    pub seed: u64,
    pub initial_opacity: f64,
    pub head_joint: String,
    pub jaw_joint: String,
    pub mouth: MouthConfig,
    pub mouth_volume: MouthVolume,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            neutral_target_count: 50_000,
            mouth_target_count: 14_000,
            sh_degree: 3,
            seed: 0,
            initial_opacity: 0.1,
            head_joint: "head".into(),
            jaw_joint: "jaw".into(),
            mouth: MouthConfig::default(),
            mouth_volume: MouthVolume::default(),
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neutral_target_count == 0 || self.mouth_target_count == 0 {
            return Err(Error::invalid("target counts", "must be at least 1"));
        }
        if self.sh_degree > MAX_DEGREE {
            return Err(Error::invalid(
                "sh_degree",
                format!("{} exceeds {MAX_DEGREE}", self.sh_degree),
            ));
        }
        if !(self.initial_opacity > 0.0 && self.initial_opacity < 1.0) {
            return Err(Error::invalid("initial_opacity", "must lie in (0, 1)"));
        }
        for (name, b) in [("mouth.upper", &self.mouth.upper), ("mouth.lower", &self.mouth.lower)] {
            if !(b.area() > 0.0) {
                return Err(Error::invalid(name, "billboard has zero area"));
            }
        }
        let v = &self.mouth_volume;
        if !(v.radius > 0.0 && v.half_length > 0.0) || !(v3(v.axis).norm() > 0.0) {
            return Err(Error::invalid("mouth_volume", "needs positive size and a nonzero axis"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output of [`init_avatar`].
#[derive(Clone, Debug)]
pub struct AvatarInit {
    pub b0: GaussianSet,
    /// `N × J` row-major.
    pub skin_weights: Vec<f64>,
    /// One raw-parameter delta set per blendshape.
    pub delta_init: Vec<GaussianSet>,
    pub attachments: Vec<SurfaceAttachment>,
    /// `N × K` displacement magnitudes `d_{i,k}`.
    pub d: Vec<f64>,
    /// Poisson sampling stopped short of the target count.
    pub saturated: bool,
}

pub fn init_avatar(model: &MeshBlendshapeModel, cfg: &InitConfig) -> Result<AvatarInit> {
    cfg.validate()?;
    let samples = poisson_sample_surface(model, cfg.neutral_target_count, cfg.seed)?;
    let n = samples.positions.len();
    let mut b0 = GaussianSet::zeros(n, cfg.sh_degree);
    let nn = poisson::mean_neighbor_distance(&samples.positions, samples.radius);
    let opacity = logit(cfg.initial_opacity);
    for (i, p) in samples.positions.iter().enumerate() {
        b0.positions[i * 3..i * 3 + 3].copy_from_slice(p.as_slice());
        b0.rotations[i * 4..i * 4 + 4].copy_from_slice(&IDENTITY_QUAT);
        b0.scales[i * 3..i * 3 + 3].fill(nn[i].max(1e-7).ln());
        b0.opacities[i] = opacity;
    }
    let rotations = triangle_rotations(model)?;
    let delta_init = blendshape_init_deltas(model, &b0, &samples.attachments, &rotations)?;
    let (skin_weights, d) = attachment_values(model, &samples.attachments);
    Ok(AvatarInit {
        b0,
        skin_weights,
        delta_init,
        attachments: samples.attachments,
        d,
        saturated: samples.saturated,
    })
}

/// Skin weights (`N × J`) and displacement magnitudes (`N × K`) read off
/// exact surface attachments.
pub fn attachment_values(
    model: &MeshBlendshapeModel,
    attachments: &[SurfaceAttachment],
) -> (Vec<f64>, Vec<f64>) {
    let (j, k) = (model.joint_count(), model.blendshape_count());
    let mut w = vec![0.0; attachments.len() * j];
    let mut d = vec![0.0; attachments.len() * k];
    w.par_chunks_mut(j)
        .zip(d.par_chunks_mut(k))
        .zip(attachments.par_iter())
        .for_each(|((w, d), att)| {
            model.interpolated_skin_weights_into(att, w);
            model.displacement_magnitudes_into(att, d);
        });
    (w, d)
}

/// `ΔG_init` for arbitrary Gaussians bound to `attachments`: each Gaussian
/// follows its attached surface point and is rotated about it by the
/// triangle's rotation factor `r_{i,k}` (position, rotation and SH); scale
/// and opacity deltas are zero. `rotations` is from [`triangle_rotations`].
pub fn blendshape_init_deltas(
    model: &MeshBlendshapeModel,
    b0: &GaussianSet,
    attachments: &[SurfaceAttachment],
    rotations: &[[f64; 4]],
) -> Result<Vec<GaussianSet>> {
    let n = b0.len();
    if attachments.len() != n {
        return Err(Error::Dimension(format!(
            "{} attachments for {n} gaussians",
            attachments.len()
        )));
    }
    let t = model.triangle_count();
    let deg = b0.sh_degree;
    let c = 3 * b0.sh_coeffs();
    Ok((0..model.blendshape_count())
        .into_par_iter()
        .map(|k| {
            let mut out = GaussianSet::zeros(n, deg);
            for (i, att) in attachments.iter().enumerate() {
                let r = rotations[k * t + att.triangle as usize];
                let disp = model.displacement(att, k).expect("k in range");
                let x = v3(b0.position(i));
                let pos = if r == IDENTITY_QUAT {
                    disp
                } else {
                    let o = x - model.attachment_point(att);
                    disp + (quat_to_mat(r) * o - o)
                };
                out.positions[i * 3..i * 3 + 3].copy_from_slice(pos.as_slice());
                if r != IDENTITY_QUAT {
                    let q0 = b0.rotation(i);
                    let q = quat_mul(r, q0);
                    for a in 0..4 {
                        out.rotations[i * 4 + a] = q[a] - q0[a];
                    }
                    if deg > 0 {
                        let sh0 = b0.sh_of(i);
                        let mut sh = sh0.to_vec();
                        ShRotation::from_quat(deg, r).apply(&mut sh);
                        for (o, (a, b)) in out.sh[i * c..(i + 1) * c].iter_mut().zip(sh.iter().zip(sh0)) {
                            *o = a - b;
                        }
                    }
                }
            }
            out
        })
        .collect())
}

/// Which teeth billboard a mouth Gaussian belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MouthPart {
    Upper,
    Lower,
}

#[derive(Clone, Debug)]
pub struct MouthInit {
    pub gaussians: GaussianSet,
    /// `N_mouth × J` row-major.
    pub skin_weights: Vec<f64>,
    pub labels: Vec<MouthPart>,
}

/// Samples the two teeth billboards. Upper-teeth Gaussians are bound to the
/// head joint with weight 1; lower-teeth Gaussians copy the skin weights of
/// the vertex with the largest jaw weight.
pub fn init_mouth(model: &MeshBlendshapeModel, cfg: &InitConfig) -> Result<MouthInit> {
    cfg.validate()?;
    let sk = model.skeleton();
    let jaw = sk.find(&cfg.jaw_joint).ok_or_else(|| {
        Error::invalid("skeleton", format!("missing jaw joint `{}`", cfg.jaw_joint))
    })?;
    let head = sk
        .find(&cfg.head_joint)
        .or_else(|| sk.find("neck"))
        .ok_or_else(|| {
            Error::invalid(
                "skeleton",
                format!("missing head joint `{}` (or `neck`)", cfg.head_joint),
            )
        })?;
    let j = model.joint_count();
    let mut jaw_vertex = 0;
    for v in 0..model.vertex_count() {
        if model.vertex_weights(v)[jaw] > model.vertex_weights(jaw_vertex)[jaw] {
            jaw_vertex = v;
        }
    }
    let mut head_row = vec![0.0; j];
    head_row[head] = 1.0;
    let jaw_row = model.vertex_weights(jaw_vertex).to_vec();

    let total = cfg.mouth_target_count;
    let n_upper = total.div_ceil(2);
    let n_lower = total / 2;
    let mut g = GaussianSet::zeros(total, cfg.sh_degree);
    let mut skin_weights = Vec::with_capacity(total * j);
    let mut labels = Vec::with_capacity(total);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6f_7574_68);
    let opacity = logit(cfg.initial_opacity);
    let mut i = 0;
    for (part, board, count, row) in [
        (MouthPart::Upper, &cfg.mouth.upper, n_upper, &head_row),
        (MouthPart::Lower, &cfg.mouth.lower, n_lower, &jaw_row),
    ] {
        if count == 0 {
            continue;
        }
        let spacing = (board.area() / count as f64).sqrt();
        for _ in 0..count {
            let p = board.point(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
            g.positions[i * 3..i * 3 + 3].copy_from_slice(p.as_slice());
            g.rotations[i * 4..i * 4 + 4].copy_from_slice(&IDENTITY_QUAT);
            g.scales[i * 3..i * 3 + 3].fill((0.5 * spacing).ln());
            g.opacities[i] = opacity;
            skin_weights.extend_from_slice(row);
            labels.push(part);
            i += 1;
        }
    }
    Ok(MouthInit {
        gaussians: g,
        skin_weights,
        labels,
    })
}
