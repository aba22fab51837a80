//! Central finite-difference verification of every analytic gradient path.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, evaluate_loss, TrainConfig, TrainFrame};
use crate::anim::BlendshapeAvatar;
use crate::error::Result;
use crate::gaussians::{GaussianSet, PropertyClass};

/// Largest scene the checker accepts.
pub const MAX_GAUSSIANS: usize = 64;
pub const MAX_PIXELS: usize = 32 * 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCheck {
    /// `b0`, `delta_hat` or `mouth`.
    pub tensor: String,
    pub class: String,
    pub samples: usize,
    /// Coordinates dropped because the loss is not smooth there.
    #[serde(default)]
    pub skipped: usize,
    pub max_rel_error: f64,
    pub median_rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub classes: Vec<ClassCheck>,
}

impl GradientReport {
    pub fn passes(&self, median_tol: f64, max_tol: f64) -> bool {
        self.classes
            .iter()
            .all(|c| c.median_rel_error < median_tol && c.max_rel_error < max_tol)
    }

    pub fn worst_median(&self) -> f64 {
        self.classes.iter().map(|c| c.median_rel_error).fold(0.0, f64::max)
    }

    pub fn worst_max(&self) -> f64 {
        self.classes.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy)]
enum Tensor {
    B0,
    Hat(usize),
    Mouth,
}

fn tensor_mut(a: &mut BlendshapeAvatar, t: Tensor) -> &mut GaussianSet {
    match t {
        Tensor::B0 => &mut a.b0,
        Tensor::Hat(k) => &mut a.reparam.delta_hat[k],
        Tensor::Mouth => &mut a.mouth,
    }
}

/// Compares analytic gradients of the total loss with central differences
/// (step `h`) at up to `samples` coordinates per tensor and property
/// class. Coordinates are drawn among those whose analytic gradient is
/// not negligible, so the comparison is not dominated by exact zeros.
/// Relative error is `|a − n| / max(|a|, |n|, floor)` with `floor` one
/// millionth of the largest gradient magnitude in that group.
///
/// SH coefficients are perturbed by `10·h`: color is smooth in them, and
/// the smaller step needed for geometry, which can push a footprint across
/// a cutoff, leaves their differences dominated by round-off. A `Δ̂G`
/// coordinate of Gaussian `i` in blendshape `k` is stepped by
/// `h / |ψ_k · f_ik|` (at most `100·h`) so the blended attribute moves by
/// the same amount as a `B0` coordinate would.
///
/// A coordinate whose central differences at `h` and `h/2` disagree by
/// more than 10% sits on a cutoff of the renderer (the `1/255` opacity
/// skip, the footprint bound or early termination) where the loss jumps;
/// it is counted in `skipped` and another one is drawn. The test uses
/// only loss values, never the analytic gradient.
pub fn check_gradients(
    avatar: &BlendshapeAvatar,
    frame: &TrainFrame,
    cfg: &TrainConfig,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradientReport> {
    if avatar.len() + avatar.mouth_len() > MAX_GAUSSIANS || frame.camera.pixel_count() > MAX_PIXELS {
        return Err(crate::Error::invalid(
            "scene",
            format!("gradient checks need ≤ {MAX_GAUSSIANS} gaussians and ≤ {MAX_PIXELS} pixels"),
        ));
    }
    let analytic = evaluate(avatar, frame, cfg, true)?.grads;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = vec![(Tensor::B0, "b0", &analytic.b0)];
    for (k, g) in analytic.hat.iter().enumerate() {
        tensors.push((Tensor::Hat(k), "delta_hat", g));
    }
    tensors.push((Tensor::Mouth, "mouth", &analytic.mouth));

    let mut report = GradientReport::default();
    let mut work = avatar.clone();
    for class in PropertyClass::ALL {
        // Delta-hat sets are pooled across k into one group per class.
        let mut groups: Vec<(&str, Vec<(Tensor, usize, f64)>)> = Vec::new();
        for &(t, name, g) in &tensors {
            let coords = g.property(class).iter().enumerate().map(|(e, &v)| (t, e, v));
            match groups.iter_mut().find(|(n, _)| *n == name) {
                Some((_, v)) => v.extend(coords),
                None => groups.push((name, coords.collect())),
            }
        }
        for (name, coords) in groups {
            if coords.is_empty() {
                continue;
            }
            let gmax = coords.iter().map(|c| c.2.abs()).fold(0.0, f64::max);
            let floor = (1e-6 * gmax).max(1e-12);
            let mut pool: Vec<_> = coords.iter().filter(|c| c.2.abs() > 1e-3 * gmax).copied().collect();
            if pool.is_empty() {
                pool = coords.clone();
            }
            pool.shuffle(&mut rng);
            let base = if class == PropertyClass::Sh { 10.0 * h } else { h };
            let width = avatar.b0.width(class);
            let mut errs = Vec::with_capacity(samples);
            let mut skipped = 0;
            for (t, e, a) in pool {
                if errs.len() == samples {
                    break;
                }
                let h = match t {
                    Tensor::Hat(k) => {
                        let gain = (frame.psi[k] * avatar.reparam.factor(e / width, k)).abs();
                        base / gain.max(0.01)
                    }
                    _ => base,
                };
                let n = central_difference(&mut work, t, class, e, h, frame, cfg)?;
                let half = central_difference(&mut work, t, class, e, 0.5 * h, frame, cfg)?;
                if (n - half).abs() > 0.1 * n.abs().max(half.abs()).max(floor) {
                    skipped += 1;
                    continue;
                }
                errs.push((a - n).abs() / a.abs().max(n.abs()).max(floor));
            }
            errs.sort_by(f64::total_cmp);
            report.classes.push(ClassCheck {
                tensor: name.to_string(),
                class: class.name().to_string(),
                samples: errs.len(),
                skipped,
                max_rel_error: errs.last().copied().unwrap_or(0.0),
                median_rel_error: if errs.is_empty() { 0.0 } else { errs[errs.len() / 2] },
            });
        }
    }
    Ok(report)
}

fn central_difference(
    work: &mut BlendshapeAvatar,
    t: Tensor,
    class: PropertyClass,
    e: usize,
    h: f64,
    frame: &TrainFrame,
    cfg: &TrainConfig,
) -> Result<f64> {
    let x0 = tensor_mut(work, t).property(class)[e];
    tensor_mut(work, t).property_mut(class)[e] = x0 + h;
    let lp = evaluate_loss(work, frame, cfg)?.total;
    tensor_mut(work, t).property_mut(class)[e] = x0 - h;
    let lm = evaluate_loss(work, frame, cfg)?.total;
    tensor_mut(work, t).property_mut(class)[e] = x0;
    Ok((lp - lm) / (2.0 * h))
}
