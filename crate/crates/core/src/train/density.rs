//! Adaptive density control that keeps `B_0`, every delta set and the
//! per-Gaussian rows of `d` and the skin weights in one-to-one
//! correspondence.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{OptimizerConfig, OptimizerState};
use crate::anim::BlendshapeAvatar;
use crate::error::{Error, Result};
use crate::math::{normalize_quat, quat_to_mat, sigmoid, Vec3};
use crate::mesh::{DisplacementGrid, MeshBlendshapeModel};

/// Offspring per split Gaussian.
const SPLIT_COUNT: usize = 2;

/// Accumulated screen-space positional gradient norms (NDC units).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStats {
    pub grad_accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one step's pixel-space mean gradients for visible Gaussians.
    pub fn accumulate(&mut self, screen: &[[f64; 2]], visible: &[bool], width: u32, height: u32) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for (i, (g, &v)) in screen.iter().zip(visible).enumerate() {
            if v {
                self.grad_accum[i] += (g[0] * sx).hypot(g[1] * sy);
                self.count[i] += 1;
            }
        }
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.count[i] as f64
        }
    }
}

/// Row operations of one density-control event, as indices into the
/// current avatar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityOps {
    pub clone: Vec<usize>,
    pub split: Vec<usize>,
    pub prune: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DensityReport {
    pub before: usize,
    pub after: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Chooses clone/split/prune sets from gradient statistics, as in standard
/// Gaussian splatting.
pub fn plan_density(
    avatar: &BlendshapeAvatar,
    stats: &DensityStats,
    cfg: &OptimizerConfig,
    scene_extent: f64,
) -> DensityOps {
    let n = avatar.len();
    let mut ops = DensityOps::default();
    let big = cfg.percent_dense * scene_extent;
    let mut budget = cfg.max_gaussians.saturating_sub(n);
    let faint = |i: usize| sigmoid(avatar.b0.opacities[i]) < cfg.prune_opacity;
    for i in 0..n {
        if stats.average(i) < cfg.grad_threshold || faint(i) {
            continue;
        }
        let max_scale = avatar.b0.scale(i).iter().fold(f64::MIN, |m, &s| m.max(s)).exp();
        if max_scale <= big {
            if budget >= 1 {
                ops.clone.push(i);
                budget -= 1;
            }
        } else if budget >= SPLIT_COUNT - 1 {
            ops.split.push(i);
            budget -= SPLIT_COUNT - 1;
        }
    }
    ops.prune = (0..n).filter(|&i| faint(i)).collect();
    ops
}

/// Applies `ops`: clones are exact copies, each split source is replaced by
/// offspring sampled from its own Gaussian with scales divided by
/// `split_scale_divisor`, and pruned rows are dropped. New rows copy the
/// source's `Δ̂G` and `ΔG_init`; their `d` and skin-weight rows are
/// re-read from the displacement grid. Adam moments of new rows start at
/// zero.
#[allow(clippy::too_many_arguments)]
pub fn apply_density(
    avatar: &mut BlendshapeAvatar,
    opt: &mut OptimizerState,
    ops: &DensityOps,
    cfg: &OptimizerConfig,
    model: &MeshBlendshapeModel,
    grid: &DisplacementGrid,
    rng: &mut impl Rng,
) -> Result<DensityReport> {
    let n = avatar.len();
    if let Some(&bad) = ops.clone.iter().chain(&ops.split).chain(&ops.prune).find(|&&i| i >= n) {
        return Err(Error::OutOfRange {
            what: "gaussian",
            index: bad,
            limit: n,
        });
    }
    let mut removed = vec![false; n];
    for &i in ops.split.iter().chain(&ops.prune) {
        removed[i] = true;
    }
    let mut idx: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    let kept = idx.len();
    idx.extend(&ops.clone);
    for &i in &ops.split {
        idx.extend(std::iter::repeat(i).take(SPLIT_COUNT));
    }
    let k = avatar.blendshape_count();
    let j = avatar.joint_count();

    let old_d = avatar.reparam.d().to_vec();
    let mut d = Vec::with_capacity(idx.len() * k);
    let mut weights = Vec::with_capacity(idx.len() * j);
    for &i in &idx {
        d.extend_from_slice(&old_d[i * k..(i + 1) * k]);
        weights.extend_from_slice(&avatar.skin_weights[i * j..(i + 1) * j]);
    }
    let mut b0 = avatar.b0.gather(&idx);

    // Offspring placement.
    let shrink = cfg.split_scale_divisor.ln();
    let first_split = kept + ops.clone.len();
    for r in first_split..idx.len() {
        let q = normalize_quat(b0.rotation(r))
            .ok_or_else(|| Error::invalid("rotation", format!("gaussian {} has zero norm", idx[r])))?;
        let s = b0.scale(r).map(f64::exp);
        let z = Vec3::new(
            s[0] * rng.sample::<f64, _>(StandardNormal),
            s[1] * rng.sample::<f64, _>(StandardNormal),
            s[2] * rng.sample::<f64, _>(StandardNormal),
        );
        let offset = quat_to_mat(q) * z;
        for a in 0..3 {
            b0.positions[r * 3 + a] += offset[a];
            b0.scales[r * 3 + a] -= shrink;
        }
    }
    // New rows take attachment data from the grid at their canonical position.
    for r in kept..idx.len() {
        let p = Vec3::from(b0.position(r));
        grid.query_into(
            model,
            &p,
            &mut weights[r * j..(r + 1) * j],
            &mut d[r * k..(r + 1) * k],
        );
    }

    avatar.b0 = b0;
    avatar.skin_weights = weights;
    avatar.reparam.rebuild(|s| *s = s.gather(&idx), d)?;
    opt.b0 = opt.b0.gather(&idx);
    opt.b0.reset_from(kept);
    for m in &mut opt.hat {
        *m = m.gather(&idx);
        m.reset_from(kept);
    }
    avatar.validate()?;
    Ok(DensityReport {
        before: n,
        after: avatar.len(),
        cloned: ops.clone.len(),
        split: ops.split.len(),
        pruned: ops.prune.len(),
    })
}
