use super::OptimizerConfig;
use crate::gaussians::{GaussianSet, PropertyClass};

/// First and second moments shaped like the parameter set they track.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: GaussianSet,
    pub v: GaussianSet,
}

impl AdamMoments {
    pub fn zeros_like(g: &GaussianSet) -> Self {
        Self {
            m: GaussianSet::zeros(g.len(), g.sh_degree),
            v: GaussianSet::zeros(g.len(), g.sh_degree),
        }
    }

    pub fn gather(&self, idx: &[usize]) -> Self {
        Self {
            m: self.m.gather(idx),
            v: self.v.gather(idx),
        }
    }

    /// Zeroes the moments of rows `from..`.
    pub fn reset_from(&mut self, from: usize) {
        for s in [&mut self.m, &mut self.v] {
            for class in PropertyClass::ALL {
                let w = s.width(class);
                s.property_mut(class)[from * w..].fill(0.0);
            }
        }
    }

    /// One bias-corrected Adam update at step `t` (1-based).
    pub fn step(&mut self, params: &mut GaussianSet, grads: &GaussianSet, cfg: &OptimizerConfig, t: u64) {
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        let sc = params.sh_coeffs();
        for class in PropertyClass::ALL {
            let base_lr = cfg.learning_rates.get(class);
            let p = params.property_mut(class);
            let g = grads.property(class);
            let m = self.m.property_mut(class);
            let v = self.v.property_mut(class);
            for e in 0..p.len() {
                let ge = g[e];
                m[e] = b1 * m[e] + (1.0 - b1) * ge;
                v[e] = b2 * v[e] + (1.0 - b2) * ge * ge;
                // SH rows are [channel][coefficient]; coefficient 0 is the DC band.
                let lr = if class == PropertyClass::Sh && e % sc != 0 {
                    base_lr * cfg.sh_rest_lr_scale
                } else {
                    base_lr
                };
                p[e] -= lr * (m[e] / c1) / ((v[e] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = GaussianSet::zeros(2, 0);
        let mut g = GaussianSet::zeros(2, 0);
        g.positions[0] = 3.0;
        g.opacities[1] = -0.01;
        let cfg = OptimizerConfig::default();
        let mut a = AdamMoments::zeros_like(&p);
        a.step(&mut p, &g, &cfg, 1);
        assert!((p.positions[0] + cfg.learning_rates.position).abs() < 1e-18);
        assert!((p.opacities[1] - cfg.learning_rates.opacity).abs() < 1e-15);
        assert_eq!(p.scales[0], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = GaussianSet::zeros(1, 0);
        p.sh[0] = 1.0;
        let mut cfg = OptimizerConfig::default();
        cfg.learning_rates.sh = 0.05;
        let mut a = AdamMoments::zeros_like(&p);
        for t in 1..=500 {
            let mut g = GaussianSet::zeros(1, 0);
            g.sh[0] = 2.0 * (p.sh[0] - 0.3);
            a.step(&mut p, &g, &cfg, t);
        }
        assert!((p.sh[0] - 0.3).abs() < 1e-2);
    }
}
