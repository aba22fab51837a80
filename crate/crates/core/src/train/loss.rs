//! Photometric, silhouette and mouth-containment losses with gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::MouthVolume;
use crate::math::Vec3;
use crate::metrics::ssim;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the D-SSIM term inside `L_rgb`.
    pub lambda_dssim: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dssim", self.lambda_dssim),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be a finite value ≥ 0")));
            }
        }
        if self.lambda_dssim > 1.0 {
            return Err(Error::invalid("lambda_dssim", "must not exceed 1"));
        }
        Ok(())
    }

    pub fn total(&self, b: &LossBreakdown) -> f64 {
        self.lambda1 * b.rgb + self.lambda2 * b.alpha + self.lambda3 * b.reg
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub alpha: f64,
    pub reg: f64,
    pub total: f64,
}

/// `(1 − λ)·mean|r − t| + λ·(1 − SSIM)/2` over an `H × W × 3` image.
/// Writes `∂L/∂rendered` into `grad`.
pub fn loss_rgb(
    rendered: &[f64],
    target: &[f64],
    width: usize,
    height: usize,
    lambda: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let n = width * height * 3;
    if rendered.len() != n || target.len() != n || grad.len() != n {
        return Err(Error::Dimension(format!(
            "loss_rgb: {} rendered, {} target, {} grad values for {width}×{height}×3",
            rendered.len(),
            target.len(),
            grad.len()
        )));
    }
    let s = ssim(rendered, target, width, height, 3, Some(grad))?;
    let inv = 1.0 / n as f64;
    let mut l1 = 0.0;
    for ((g, r), t) in grad.iter_mut().zip(rendered).zip(target) {
        let d = r - t;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = (1.0 - lambda) * sign * inv - 0.5 * lambda * *g;
    }
    Ok((1.0 - lambda) * l1 * inv + lambda * (1.0 - s) * 0.5)
}

/// `‖I_α − mask‖₂` (Frobenius norm over the frame) and its gradient.
pub fn loss_alpha(alpha: &[f64], mask: &[f64], grad: &mut [f64]) -> Result<f64> {
    if alpha.len() != mask.len() || grad.len() != alpha.len() {
        return Err(Error::Dimension(format!(
            "loss_alpha: {} alpha, {} mask values",
            alpha.len(),
            mask.len()
        )));
    }
    let norm = alpha
        .iter()
        .zip(mask)
        .map(|(a, m)| (a - m).powi(2))
        .sum::<f64>()
        .sqrt();
    for ((g, a), m) in grad.iter_mut().zip(alpha).zip(mask) {
        *g = if norm > 0.0 { (a - m) / norm } else { 0.0 };
    }
    Ok(norm)
}

/// Mean of `max(SDF(x_i), 0)²` over canonical mouth positions (`N_m × 3`),
/// with its gradient with respect to those positions.
pub fn loss_mouth_reg(positions: &[f64], vol: &MouthVolume, grad: &mut [f64]) -> Result<f64> {
    if positions.len() % 3 != 0 || grad.len() != positions.len() {
        return Err(Error::Dimension("loss_mouth_reg: positions must be N×3".into()));
    }
    let n = positions.len() / 3;
    grad.fill(0.0);
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, g) in positions.chunks_exact(3).zip(grad.chunks_exact_mut(3)) {
        let (d, dg) = vol.sdf_with_grad(&Vec3::new(p[0], p[1], p[2]));
        if d > 0.0 {
            total += d * d;
            for a in 0..3 {
                g[a] = 2.0 * d * dg[a] / n as f64;
            }
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let a = random(1, 8 * 8 * 3);
        let mut g = vec![0.0; a.len()];
        assert!(loss_rgb(&a, &a, 8, 8, 0.2, &mut g).unwrap().abs() < 1e-15);
    }

    #[test]
    fn uniform_offset_l1_term() {
        let a = random(2, 10 * 9 * 3);
        let t: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        let mut g = vec![0.0; a.len()];
        let l = loss_rgb(&a, &t, 10, 9, 0.2, &mut g).unwrap();
        let s = ssim(&a, &t, 10, 9, 3, None).unwrap();
        let l1 = a.iter().zip(&t).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        assert!((l1 - 0.1).abs() < 1e-12);
        assert!((l - (0.8 * l1 + 0.2 * (1.0 - s) / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn rgb_gradient_matches_fd() {
        let (w, h) = (16, 16);
        let a = random(3, w * h * 3);
        let t = random(4, w * h * 3);
        let mut g = vec![0.0; a.len()];
        loss_rgb(&a, &t, w, h, 0.2, &mut g).unwrap();
        let mut scratch = vec![0.0; a.len()];
        let step = 1e-6;
        for idx in [0, 5, 99, 400, 767] {
            let mut p = a.clone();
            p[idx] += step;
            let mut m = a.clone();
            m[idx] -= step;
            let num = (loss_rgb(&p, &t, w, h, 0.2, &mut scratch).unwrap()
                - loss_rgb(&m, &t, w, h, 0.2, &mut scratch).unwrap())
                / (2.0 * step);
            assert!((num - g[idx]).abs() / num.abs() < 1e-3, "{idx}: {num} vs {}", g[idx]);
        }
    }

    #[test]
    fn alpha_loss_closed_form_and_gradient() {
        let mask = random(5, 256).iter().map(|v| (*v > 0.5) as u8 as f64).collect::<Vec<_>>();
        let mut alpha = mask.clone();
        let c = 0.05;
        let m = 37;
        for a in alpha.iter_mut().take(m) {
            *a += c;
        }
        let mut g = vec![0.0; 256];
        let l = loss_alpha(&alpha, &mask, &mut g).unwrap();
        assert!((l - c * (m as f64).sqrt()).abs() < 1e-12);
        assert_eq!(loss_alpha(&mask, &mask, &mut g).unwrap(), 0.0);
        assert!(g.iter().all(|&v| v == 0.0));

        let a = random(6, 256);
        loss_alpha(&a, &mask, &mut g).unwrap();
        let mut scratch = vec![0.0; 256];
        let step = 1e-6;
        for idx in [0, 31, 255] {
            let mut p = a.clone();
            p[idx] += step;
            let mut q = a.clone();
            q[idx] -= step;
            let num = (loss_alpha(&p, &mask, &mut scratch).unwrap()
                - loss_alpha(&q, &mask, &mut scratch).unwrap())
                / (2.0 * step);
            assert!((num - g[idx]).abs() / num.abs() < 1e-3);
        }
    }

    #[test]
    fn mouth_reg_examples() {
        let vol = MouthVolume {
            center: [0.0; 3],
            axis: [1.0, 0.0, 0.0],
            radius: 0.2,
            half_length: 0.5,
        };
        let mut g = vec![0.0; 9];
        // All inside.
        let inside = [0.1, 0.0, 0.05, -0.3, 0.1, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(loss_mouth_reg(&inside, &vol, &mut g).unwrap(), 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        // One point at radius + 0.1 within the height range.
        let pts = [0.2, 0.3, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0];
        let l = loss_mouth_reg(&pts, &vol, &mut g).unwrap();
        assert!((l - 0.01 / 3.0).abs() < 1e-15);
        assert!((g[1] - 2.0 * 0.1 / 3.0).abs() < 1e-12);
        // On the boundary.
        let on = [0.0, 0.2, 0.0];
        let mut g1 = vec![0.0; 3];
        assert_eq!(loss_mouth_reg(&on, &vol, &mut g1).unwrap(), 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let w = LossWeights::default();
        let b = LossBreakdown {
            rgb: 0.123,
            alpha: 0.0456,
            reg: 7.8e-4,
            total: 0.0,
        };
        assert_eq!(w.total(&b), 1.0 * 0.123 + 10.0 * 0.0456 + 100.0 * 7.8e-4);
    }
}
