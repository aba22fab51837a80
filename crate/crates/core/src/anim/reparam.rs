//! Displacement-scaled blendshape deltas:
//! `ΔG_{i,k} = ΔG^init_{i,k} + max(f(d_{i,k}), 0) · Δ̂G_{i,k}` with
//! `f(x) = (x − ε) / (d̃_k − ε)`.

use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, PropertyClass};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// `max((d − ε) / (d̃ − ε), 0)`, defined as 0 when `d̃ ≤ ε`.
#[inline]
pub fn scaling_factor(d: f64, d_max: f64, epsilon: f64) -> f64 {
    if !(d_max > epsilon) {
        return 0.0;
    }
    let f = (d - epsilon) / (d_max - epsilon);
    if f > 0.0 {
        f
    } else {
        0.0
    }
}

/// `init + factor · hat`, returning `init` unchanged (bitwise) whenever the
/// second term vanishes.
#[inline]
pub fn reparam_value(init: f64, factor: f64, hat: f64) -> f64 {
    if factor == 0.0 || hat == 0.0 {
        init
    } else {
        init + factor * hat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaReparam {
    /// Trainable `Δ̂G`, one set per blendshape.
    pub delta_hat: Vec<GaussianSet>,
    /// Frozen `ΔG_init`, one set per blendshape.
    pub delta_init: Vec<GaussianSet>,
    d: Vec<f64>,
    d_max: Vec<f64>,
    epsilon: f64,
    factors: Vec<f64>,
}

impl DeltaReparam {
    /// `d` is `N × K`, `d_max` has one entry per blendshape.
    pub fn new(
        delta_init: Vec<GaussianSet>,
        delta_hat: Vec<GaussianSet>,
        d: Vec<f64>,
        d_max: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let k = delta_init.len();
        if k == 0 {
            return Err(Error::invalid("K", "at least one blendshape is required"));
        }
        let n = delta_init[0].len();
        if delta_hat.len() != k || d_max.len() != k {
            return Err(Error::Dimension(format!(
                "{k} init sets, {} hat sets, {} d_max entries",
                delta_hat.len(),
                d_max.len()
            )));
        }
        for s in delta_init.iter().chain(&delta_hat) {
            s.check_lengths()?;
            if s.len() != n || s.sh_degree != delta_init[0].sh_degree {
                return Err(Error::Dimension("delta sets disagree on N or SH degree".into()));
            }
        }
        if d.len() != n * k {
            return Err(Error::Dimension(format!(
                "d has {} entries, expected N×K = {}",
                d.len(),
                n * k
            )));
        }
        if d.iter().chain(&d_max).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("d", "displacements must be finite and nonnegative"));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::invalid("epsilon", "must be nonnegative"));
        }
        let mut r = Self {
            delta_hat,
            delta_init,
            d,
            d_max,
            epsilon,
            factors: Vec::new(),
        };
        r.refresh_factors();
        Ok(r)
    }

    /// Zero `Δ̂G` for the given initial deltas.
    pub fn from_init(
        delta_init: Vec<GaussianSet>,
        d: Vec<f64>,
        d_max: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let hat = delta_init
            .iter()
            .map(|s| GaussianSet::zeros(s.len(), s.sh_degree))
            .collect();
        Self::new(delta_init, hat, d, d_max, epsilon)
    }

    fn refresh_factors(&mut self) {
        let k = self.blendshape_count();
        for (kk, &dm) in self.d_max.iter().enumerate() {
            if !(dm > self.epsilon) {
                log::warn!("blendshape {kk} moves at most {dm:e} (≤ ε); its learned term is disabled");
            }
        }
        self.factors = self
            .d
            .iter()
            .enumerate()
            .map(|(idx, &d)| scaling_factor(d, self.d_max[idx % k], self.epsilon))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.delta_init[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn blendshape_count(&self) -> usize {
        self.delta_init.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn d_max(&self) -> &[f64] {
        &self.d_max
    }

    /// Cached `max(f(d_{i,k}), 0)`, `N × K`.
    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    #[inline]
    pub fn factor(&self, i: usize, k: usize) -> f64 {
        self.factors[i * self.blendshape_count() + k]
    }

    /// Replaces the displacement magnitudes (after density control) and
    /// recomputes the cached factors.
    pub fn set_d(&mut self, d: Vec<f64>) -> Result<()> {
        if d.len() != self.len() * self.blendshape_count() {
            return Err(Error::Dimension(format!(
                "d has {} entries, expected {}",
                d.len(),
                self.len() * self.blendshape_count()
            )));
        }
        self.d = d;
        self.refresh_factors();
        Ok(())
    }

    /// Applies a row selection/duplication to every per-Gaussian array.
    /// `f` receives each delta set; `d` must already match the result.
    pub fn rebuild(&mut self, mut f: impl FnMut(&mut GaussianSet), d: Vec<f64>) -> Result<()> {
        for s in self.delta_init.iter_mut().chain(self.delta_hat.iter_mut()) {
            f(s);
        }
        self.set_d(d)
    }

    /// Effective delta of Gaussian `i` for blendshape `k`, as a packed row
    /// `[position, rotation, scale, opacity, sh]`.
    pub fn effective_delta(&self, i: usize, k: usize) -> Result<Vec<f64>> {
        if i >= self.len() {
            return Err(Error::OutOfRange {
                what: "gaussian",
                index: i,
                limit: self.len(),
            });
        }
        if k >= self.blendshape_count() {
            return Err(Error::OutOfRange {
                what: "blendshape index",
                index: k,
                limit: self.blendshape_count(),
            });
        }
        let p = self.delta_init[k].params_per_gaussian();
        let mut init = vec![0.0; p];
        let mut hat = vec![0.0; p];
        self.delta_init[k].pack_row(i, &mut init);
        self.delta_hat[k].pack_row(i, &mut hat);
        let f = self.factor(i, k);
        Ok(init
            .iter()
            .zip(&hat)
            .map(|(&a, &b)| reparam_value(a, f, b))
            .collect())
    }

    /// Effective delta set of blendshape `k` for all Gaussians.
    pub fn effective_set(&self, k: usize) -> GaussianSet {
        let init = &self.delta_init[k];
        let hat = &self.delta_hat[k];
        let kk = self.blendshape_count();
        let mut out = init.clone();
        for class in PropertyClass::ALL {
            let w = init.width(class);
            let h = hat.property(class);
            for (e, o) in out.property_mut(class).iter_mut().enumerate() {
                let f = self.factors[(e / w) * kk + k];
                *o = reparam_value(*o, f, h[e]);
            }
        }
        out
    }
}
