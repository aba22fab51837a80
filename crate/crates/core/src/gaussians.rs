//! Structure-of-arrays storage for raw (pre-activation) Gaussian parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::quat_norm;

/// The five Gaussian property groups, in the order learning rates are
/// listed: position, opacity, scale, rotation, SH.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyClass {
    Position,
    Opacity,
    Scale,
    Rotation,
    Sh,
}

impl PropertyClass {
    pub const ALL: [PropertyClass; 5] = [
        PropertyClass::Position,
        PropertyClass::Opacity,
        PropertyClass::Scale,
        PropertyClass::Rotation,
        PropertyClass::Sh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PropertyClass::Position => "position",
            PropertyClass::Opacity => "opacity",
            PropertyClass::Scale => "scale",
            PropertyClass::Rotation => "rotation",
            PropertyClass::Sh => "sh",
        }
    }
}

/// Number of SH coefficients per color channel for degree `l`.
#[inline]
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Raw parameters of `N` Gaussians. Positions are in model units, rotations
/// are unnormalized quaternions `[w,x,y,z]`, scales are log-scales, opacities
/// are logits and SH is laid out `[gaussian][channel][coefficient]`.
///
/// The same type stores per-Gaussian parameter deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub sh_degree: usize,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
    pub sh: Vec<f64>,
}

impl GaussianSet {
    pub fn zeros(n: usize, sh_degree: usize) -> Self {
        Self {
            sh_degree,
            positions: vec![0.0; n * 3],
            rotations: vec![0.0; n * 4],
            scales: vec![0.0; n * 3],
            opacities: vec![0.0; n],
            sh: vec![0.0; n * 3 * sh_coeff_count(sh_degree)],
        }
    }

    pub fn empty(sh_degree: usize) -> Self {
        Self::zeros(0, sh_degree)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    #[inline]
    pub fn sh_coeffs(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    /// Values per Gaussian for each property.
    pub fn width(&self, class: PropertyClass) -> usize {
        match class {
            PropertyClass::Position => 3,
            PropertyClass::Opacity => 1,
            PropertyClass::Scale => 3,
            PropertyClass::Rotation => 4,
            PropertyClass::Sh => 3 * self.sh_coeffs(),
        }
    }

    /// Total raw parameters per Gaussian.
    pub fn params_per_gaussian(&self) -> usize {
        11 + 3 * self.sh_coeffs()
    }

    pub fn property(&self, class: PropertyClass) -> &[f64] {
        match class {
            PropertyClass::Position => &self.positions,
            PropertyClass::Opacity => &self.opacities,
            PropertyClass::Scale => &self.scales,
            PropertyClass::Rotation => &self.rotations,
            PropertyClass::Sh => &self.sh,
        }
    }

    pub fn property_mut(&mut self, class: PropertyClass) -> &mut Vec<f64> {
        match class {
            PropertyClass::Position => &mut self.positions,
            PropertyClass::Opacity => &mut self.opacities,
            PropertyClass::Scale => &mut self.scales,
            PropertyClass::Rotation => &mut self.rotations,
            PropertyClass::Sh => &mut self.sh,
        }
    }

    #[inline]
    pub fn position(&self, i: usize) -> [f64; 3] {
        let p = &self.positions[i * 3..i * 3 + 3];
        [p[0], p[1], p[2]]
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let q = &self.rotations[i * 4..i * 4 + 4];
        [q[0], q[1], q[2], q[3]]
    }

    #[inline]
    pub fn scale(&self, i: usize) -> [f64; 3] {
        let s = &self.scales[i * 3..i * 3 + 3];
        [s[0], s[1], s[2]]
    }

    #[inline]
    pub fn sh_of(&self, i: usize) -> &[f64] {
        let w = 3 * self.sh_coeffs();
        &self.sh[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn sh_of_mut(&mut self, i: usize) -> &mut [f64] {
        let w = 3 * self.sh_coeffs();
        &mut self.sh[i * w..(i + 1) * w]
    }

    /// Checks array lengths, finiteness and that every raw quaternion has a
    /// usable norm.
    pub fn validate(&self) -> Result<()> {
        self.check_lengths()?;
        for class in PropertyClass::ALL {
            if self.property(class).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} parameters", class.name())));
            }
        }
        for i in 0..self.len() {
            if !(quat_norm(self.rotation(i)) > 1e-12) {
                return Err(Error::invalid(
                    "rotation",
                    format!("gaussian {i} has a zero-norm quaternion"),
                ));
            }
        }
        Ok(())
    }

    /// Checks only that all property arrays agree on `N`.
    pub fn check_lengths(&self) -> Result<()> {
        let n = self.len();
        for class in PropertyClass::ALL {
            let expected = n * self.width(class);
            if self.property(class).len() != expected {
                return Err(Error::Dimension(format!(
                    "{} array has {} values, expected {expected}",
                    class.name(),
                    self.property(class).len()
                )));
            }
        }
        Ok(())
    }

    /// Keeps the Gaussians for which `keep[i]` is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        for class in PropertyClass::ALL {
            let w = self.width(class);
            let data = self.property_mut(class);
            let mut out = 0;
            for (i, &k) in keep.iter().enumerate() {
                if k {
                    data.copy_within(i * w..(i + 1) * w, out * w);
                    out += 1;
                }
            }
            data.truncate(out * w);
        }
    }

    /// Appends a copy of Gaussian `i` and returns the new index.
    pub fn push_copy(&mut self, i: usize) -> usize {
        for class in PropertyClass::ALL {
            let w = self.width(class);
            let data = self.property_mut(class);
            data.extend_from_within(i * w..(i + 1) * w);
        }
        self.len() - 1
    }

    /// New set made of rows `idx` (repeats allowed), in that order.
    pub fn gather(&self, idx: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::empty(self.sh_degree);
        for class in PropertyClass::ALL {
            let w = self.width(class);
            let src = self.property(class);
            let dst = out.property_mut(class);
            dst.reserve(idx.len() * w);
            for &i in idx {
                dst.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        out
    }

    /// Appends all Gaussians of `other` (same SH degree).
    pub fn extend_from(&mut self, other: &GaussianSet) {
        assert_eq!(self.sh_degree, other.sh_degree);
        for class in PropertyClass::ALL {
            let src = other.property(class).to_vec();
            self.property_mut(class).extend_from_slice(&src);
        }
    }

    /// Packs Gaussian `i` as one row in file order
    /// `[position, rotation, scale, opacity, sh]`.
    pub fn pack_row(&self, i: usize, out: &mut [f64]) {
        let c = 3 * self.sh_coeffs();
        out[0..3].copy_from_slice(&self.positions[i * 3..i * 3 + 3]);
        out[3..7].copy_from_slice(&self.rotations[i * 4..i * 4 + 4]);
        out[7..10].copy_from_slice(&self.scales[i * 3..i * 3 + 3]);
        out[10] = self.opacities[i];
        out[11..11 + c].copy_from_slice(&self.sh[i * c..(i + 1) * c]);
    }

    pub fn unpack_row(&mut self, i: usize, row: &[f64]) {
        let c = 3 * self.sh_coeffs();
        self.positions[i * 3..i * 3 + 3].copy_from_slice(&row[0..3]);
        self.rotations[i * 4..i * 4 + 4].copy_from_slice(&row[3..7]);
        self.scales[i * 3..i * 3 + 3].copy_from_slice(&row[7..10]);
        self.opacities[i] = row[10];
        self.sh[i * c..(i + 1) * c].copy_from_slice(&row[11..11 + c]);
    }

    /// Rounds every parameter to `f32` precision (the on-disk precision).
    pub fn quantize_f32(&mut self) {
        for class in PropertyClass::ALL {
            for v in self.property_mut(class).iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for class in PropertyClass::ALL {
            self.property_mut(class).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Largest absolute value over all properties.
    pub fn max_abs(&self) -> f64 {
        PropertyClass::ALL
            .iter()
            .flat_map(|&c| self.property(c).iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Gaussians after blending, skinning and activation: unit rotations,
/// positive scales and opacities in (0, 1).
///
/// SH coefficients stay in the Gaussian's canonical frame; `sh_frames`
/// holds the unit quaternion `R_i` the color function has been rotated by,
/// so the posed color toward direction `d` is `SH_i(R_iᵀ d)`. This equals
/// rotating the coefficients (see [`rotated_sh`](Self::rotated_sh)).
#[derive(Clone, Debug, PartialEq)]
pub struct PosedGaussians {
    pub sh_degree: usize,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
    pub sh: Vec<f64>,
    pub sh_frames: Vec<f64>,
}

impl PosedGaussians {
    pub fn with_capacity(n: usize, sh_degree: usize) -> Self {
        let c = 3 * sh_coeff_count(sh_degree);
        Self {
            sh_degree,
            positions: Vec::with_capacity(n * 3),
            rotations: Vec::with_capacity(n * 4),
            scales: Vec::with_capacity(n * 3),
            opacities: Vec::with_capacity(n),
            sh: Vec::with_capacity(n * c),
            sh_frames: Vec::with_capacity(n * 4),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    #[inline]
    pub fn sh_coeffs(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    #[inline]
    pub fn position(&self, i: usize) -> [f64; 3] {
        let p = &self.positions[i * 3..i * 3 + 3];
        [p[0], p[1], p[2]]
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let q = &self.rotations[i * 4..i * 4 + 4];
        [q[0], q[1], q[2], q[3]]
    }

    #[inline]
    pub fn scale(&self, i: usize) -> [f64; 3] {
        let s = &self.scales[i * 3..i * 3 + 3];
        [s[0], s[1], s[2]]
    }

    #[inline]
    pub fn sh_of(&self, i: usize) -> &[f64] {
        let w = 3 * self.sh_coeffs();
        &self.sh[i * w..(i + 1) * w]
    }

    pub fn extend(&mut self, other: &PosedGaussians) {
        assert_eq!(self.sh_degree, other.sh_degree);
        self.positions.extend_from_slice(&other.positions);
        self.rotations.extend_from_slice(&other.rotations);
        self.scales.extend_from_slice(&other.scales);
        self.opacities.extend_from_slice(&other.opacities);
        self.sh.extend_from_slice(&other.sh);
        self.sh_frames.extend_from_slice(&other.sh_frames);
    }

    #[inline]
    pub fn sh_frame(&self, i: usize) -> [f64; 4] {
        let q = &self.sh_frames[i * 4..i * 4 + 4];
        [q[0], q[1], q[2], q[3]]
    }

    /// SH coefficients of Gaussian `i` expressed in world orientation.
    pub fn rotated_sh(&self, i: usize) -> Vec<f64> {
        crate::sh::rotate_sh(self.sh_of(i), self.sh_degree, self.sh_frame(i))
    }

    /// Checks the activation invariants: unit rotations, finite positive
    /// scales, opacities strictly inside (0, 1) and finite SH.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        if self.positions.len() != n * 3
            || self.rotations.len() != n * 4
            || self.scales.len() != n * 3
            || self.sh.len() != n * 3 * self.sh_coeffs()
            || self.sh_frames.len() != n * 4
        {
            return Err(Error::Dimension("posed gaussian arrays disagree".into()));
        }
        for i in 0..n {
            let qn = quat_norm(self.rotation(i));
            if (qn - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("rotation", format!("gaussian {i} norm {qn}")));
            }
            let fn_ = quat_norm(self.sh_frame(i));
            if (fn_ - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("sh frame", format!("gaussian {i} norm {fn_}")));
            }
            if self.scale(i).iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::invalid("scale", format!("gaussian {i}")));
            }
            let o = self.opacities[i];
            if !(o > 0.0 && o < 1.0) {
                return Err(Error::invalid("opacity", format!("gaussian {i} = {o}")));
            }
            if self.position(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("position of gaussian {i}")));
            }
        }
        if self.sh.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sh".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(n: usize) -> GaussianSet {
        let mut g = GaussianSet::zeros(n, 1);
        for class in PropertyClass::ALL {
            let w = g.width(class);
            for (j, v) in g.property_mut(class).iter_mut().enumerate() {
                *v = (j / w) as f64;
            }
        }
        g
    }

    #[test]
    fn retain_and_push_keep_rows_aligned() {
        let mut g = numbered(5);
        g.retain_mask(&[true, false, true, false, true]);
        assert_eq!(g.len(), 3);
        g.check_lengths().unwrap();
        assert_eq!(g.position(1), [2.0; 3]);
        assert_eq!(g.sh_of(2), &[4.0; 12][..]);
        let j = g.push_copy(0);
        assert_eq!(j, 3);
        assert_eq!(g.opacities, vec![0.0, 2.0, 4.0, 0.0]);
        g.check_lengths().unwrap();
    }

    #[test]
    fn pack_unpack_row() {
        let g = numbered(3);
        let mut row = vec![0.0; g.params_per_gaussian()];
        g.pack_row(2, &mut row);
        assert!(row.iter().all(|&v| v == 2.0));
        let mut h = GaussianSet::zeros(3, 1);
        h.unpack_row(1, &row);
        assert_eq!(h.rotation(1), [2.0; 4]);
        assert_eq!(g.params_per_gaussian(), 3 + 4 + 3 + 1 + 12);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        let g = GaussianSet::zeros(2, 0);
        assert!(g.validate().is_err());
    }
}
