//! One forward/backward evaluation of the training objective.

use rayon::prelude::*;

use super::loss::{loss_alpha, loss_mouth_reg, loss_rgb, LossBreakdown};
use super::TrainConfig;
use crate::anim::pose::RAW_LIMIT;
use crate::anim::{lbs_pose_cached, BlendshapeAvatar, PoseCache};
use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, PosedGaussians, PropertyClass};
use crate::math::{normalize_quat_backward, quat_left_mul_transpose, Vec3};
use crate::render::{render_backward, render_forward, Camera, OutputGrads, PosedGrads};
use crate::anim::Pose;

/// A training frame: parameters plus its target image and foreground mask.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub psi: Vec<f64>,
    pub pose: Pose,
    pub camera: Camera,
    /// `H × W × 3` linear RGB.
    pub image: Vec<f64>,
    /// `H × W` in `[0, 1]`.
    pub mask: Vec<f64>,
}

impl TrainFrame {
    pub fn validate(&self, avatar: &BlendshapeAvatar) -> Result<()> {
        let n = self.camera.pixel_count();
        if self.image.len() != n * 3 || self.mask.len() != n {
            return Err(Error::Dimension(format!(
                "frame image/mask ({} / {}) disagree with its {}×{} camera",
                self.image.len(),
                self.mask.len(),
                self.camera.width,
                self.camera.height
            )));
        }
        if self.psi.len() != avatar.blendshape_count() {
            return Err(Error::Dimension(format!(
                "frame psi has {} entries, avatar has K = {}",
                self.psi.len(),
                avatar.blendshape_count()
            )));
        }
        self.pose.validate(avatar.joint_count())
    }
}

/// Gradients for every trainable tensor: `B_0`, each `Δ̂G_k` and `B_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct AvatarGrads {
    pub b0: GaussianSet,
    pub hat: Vec<GaussianSet>,
    pub mouth: GaussianSet,
}

pub struct Evaluation {
    pub loss: LossBreakdown,
    pub grads: AvatarGrads,
    /// Screen-space mean gradients of the `B_0` Gaussians (pixels) and
    /// whether each was visible.
    pub screen: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
    pub rendered: Vec<f64>,
}

/// Posed avatar and mouth with the caches needed to differentiate them.
struct Posed {
    all: PosedGaussians,
    cache: PoseCache,
    mouth_cache: PoseCache,
    n: usize,
}

fn pose_all(avatar: &BlendshapeAvatar, blended: &GaussianSet, pose: &Pose) -> Result<Posed> {
    let (mut all, cache) = lbs_pose_cached(blended, &avatar.skin_weights, &avatar.skeleton, pose)?;
    let (m, mouth_cache) =
        lbs_pose_cached(&avatar.mouth, &avatar.mouth_weights, &avatar.skeleton, pose)?;
    all.extend(&m);
    Ok(Posed {
        all,
        cache,
        mouth_cache,
        n: blended.len(),
    })
}

/// Loss only (no gradients), used by finite-difference checks.
pub fn evaluate_loss(avatar: &BlendshapeAvatar, frame: &TrainFrame, cfg: &TrainConfig) -> Result<LossBreakdown> {
    evaluate(avatar, frame, cfg, false).map(|e| e.loss)
}

/// Forward pass, total loss and (optionally) gradients for all trainable
/// tensors.
pub fn evaluate(
    avatar: &BlendshapeAvatar,
    frame: &TrainFrame,
    cfg: &TrainConfig,
    with_grads: bool,
) -> Result<Evaluation> {
    frame.validate(avatar)?;
    let blended = avatar.blend(&frame.psi)?;
    let posed = pose_all(avatar, &blended, &frame.pose)?;
    let cam = &frame.camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let state = render_forward(&posed.all, cam, cfg.background, cfg.tile_size)?;
    let out = &state.output;
    let weights = &cfg.loss;
    let mut g_color = vec![0.0; w * h * 3];
    let mut g_alpha = vec![0.0; w * h];
    let mut g_reg = vec![0.0; avatar.mouth.positions.len()];
    let rgb = loss_rgb(&out.color, &frame.image, w, h, weights.lambda_dssim, &mut g_color)?;
    let alpha = loss_alpha(&out.alpha, &frame.mask, &mut g_alpha)?;
    let reg = loss_mouth_reg(&avatar.mouth.positions, &cfg.mouth_volume, &mut g_reg)?;
    let mut loss = LossBreakdown {
        rgb,
        alpha,
        reg,
        total: 0.0,
    };
    loss.total = weights.total(&loss);
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (rgb {rgb}, alpha {alpha}, reg {reg})"
        )));
    }
    let n = posed.n;
    if !with_grads {
        return Ok(Evaluation {
            loss,
            grads: AvatarGrads {
                b0: GaussianSet::empty(avatar.sh_degree()),
                hat: Vec::new(),
                mouth: GaussianSet::empty(avatar.sh_degree()),
            },
            screen: Vec::new(),
            visible: Vec::new(),
            rendered: out.color.clone(),
        });
    }
    g_color.iter_mut().for_each(|v| *v *= weights.lambda1);
    g_alpha.iter_mut().for_each(|v| *v *= weights.lambda2);
    let pg = render_backward(
        &posed.all,
        cam,
        &state,
        OutputGrads {
            color: &g_color,
            alpha: &g_alpha,
        },
    )?;
    let g_blend = lbs_backward(&blended, &posed.all, &posed.cache, &pg, 0);
    let mut g_mouth = lbs_backward(&avatar.mouth, &posed.all, &posed.mouth_cache, &pg, n);
    for (g, r) in g_mouth.positions.iter_mut().zip(&g_reg) {
        *g += weights.lambda3 * r;
    }
    let hat = blend_backward(avatar, &frame.psi, &g_blend);
    let mut visible = vec![false; n];
    for i in state.visible_indices() {
        if i < n {
            visible[i] = true;
        }
    }
    Ok(Evaluation {
        loss,
        grads: AvatarGrads {
            b0: g_blend,
            hat,
            mouth: g_mouth,
        },
        screen: pg.screen[..n].to_vec(),
        visible,
        rendered: out.color.clone(),
    })
}

/// Chains posed-space gradients back to raw (pre-activation, canonical)
/// parameters of `raw`, whose posed copies start at row `offset`.
pub(crate) fn lbs_backward(
    raw: &GaussianSet,
    posed: &PosedGaussians,
    cache: &PoseCache,
    pg: &PosedGrads,
    offset: usize,
) -> GaussianSet {
    let n = raw.len();
    let mut g = GaussianSet::zeros(n, raw.sh_degree);
    let c = 3 * raw.sh_coeffs();
    g.sh.copy_from_slice(&pg.sh[offset * c..(offset + n) * c]);
    const CHUNK: usize = 1024;
    g.positions
        .par_chunks_mut(3 * CHUNK)
        .zip(g.rotations.par_chunks_mut(4 * CHUNK))
        .zip(g.scales.par_chunks_mut(3 * CHUNK))
        .zip(g.opacities.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(chunk, (((pos, rot), scl), opa))| {
            for local in 0..opa.len() {
                let i = chunk * CHUNK + local;
                let j = offset + i;
                let gy = Vec3::from(pos_of(&pg.positions, j));
                let gx = cache.linear[i].transpose() * gy;
                pos[local * 3..local * 3 + 3].copy_from_slice(gx.as_slice());
                let gq = [
                    pg.rotations[j * 4],
                    pg.rotations[j * 4 + 1],
                    pg.rotations[j * 4 + 2],
                    pg.rotations[j * 4 + 3],
                ];
                let gu = quat_left_mul_transpose(posed.sh_frame(j), gq);
                rot[local * 4..local * 4 + 4]
                    .copy_from_slice(&normalize_quat_backward(raw.rotation(i), gu));
                for a in 0..3 {
                    let r = raw.scales[i * 3 + a];
                    scl[local * 3 + a] = if r.abs() < RAW_LIMIT {
                        pg.scales[j * 3 + a] * posed.scales[j * 3 + a]
                    } else {
                        0.0
                    };
                }
                let o = posed.opacities[j];
                opa[local] = if raw.opacities[i].abs() < RAW_LIMIT {
                    pg.opacities[j] * o * (1.0 - o)
                } else {
                    0.0
                };
            }
        });
    g
}

fn pos_of(v: &[f64], j: usize) -> [f64; 3] {
    [v[j * 3], v[j * 3 + 1], v[j * 3 + 2]]
}

/// `∂L/∂Δ̂G_{i,k} = ψ_k · f(d_{i,k}) · ∂L/∂B^ψ_i`.
pub(crate) fn blend_backward(avatar: &BlendshapeAvatar, psi: &[f64], g: &GaussianSet) -> Vec<GaussianSet> {
    let kk = avatar.blendshape_count();
    let factors = avatar.reparam.factors();
    (0..kk)
        .into_par_iter()
        .map(|k| {
            let mut out = GaussianSet::zeros(g.len(), g.sh_degree);
            if psi[k] == 0.0 {
                return out;
            }
            for class in PropertyClass::ALL {
                let w = g.width(class);
                let src = g.property(class);
                for (e, o) in out.property_mut(class).iter_mut().enumerate() {
                    let f = factors[(e / w) * kk + k];
                    if f != 0.0 {
                        *o = psi[k] * f * src[e];
                    }
                }
            }
            out
        })
        .collect()
}
