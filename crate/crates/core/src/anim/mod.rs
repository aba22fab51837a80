//! Expression blending, skinning and synthesis of posed Gaussians.

pub mod frame;
pub mod gba;
pub mod pose;
pub mod reparam;
pub mod runtime;

pub use frame::{read_frames, write_frames, FrameParams};
pub use pose::{lbs_pose, lbs_pose_cached, Pose, PoseCache};
pub use reparam::{reparam_value, scaling_factor, DeltaReparam, DEFAULT_EPSILON};
pub use runtime::RuntimeAvatar;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, PosedGaussians, PropertyClass};
use crate::init::{AvatarInit, MouthInit, MouthPart};
use crate::mesh::{MeshBlendshapeModel, Skeleton};

/// Neutral Gaussians `B_0`, per-expression deltas, mouth Gaussians `B_m` and
/// the skeleton they are skinned to.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendshapeAvatar {
    pub b0: GaussianSet,
    /// `N × J` row-major.
    pub skin_weights: Vec<f64>,
    pub reparam: DeltaReparam,
    pub mouth: GaussianSet,
    /// `N_mouth × J` row-major.
    pub mouth_weights: Vec<f64>,
    pub mouth_labels: Vec<MouthPart>,
    pub skeleton: Skeleton,
}

impl BlendshapeAvatar {
    /// Assembles a freshly initialized avatar with `Δ̂G = 0`. The per-blendshape
    /// normalizer `d̃_k` is the largest vertex displacement of `M_k`.
    pub fn from_init(
        model: &MeshBlendshapeModel,
        init: AvatarInit,
        mouth: MouthInit,
        epsilon: f64,
    ) -> Result<Self> {
        let d_max = (0..model.blendshape_count())
            .map(|k| model.max_displacement(k))
            .collect();
        let reparam = DeltaReparam::from_init(init.delta_init, init.d, d_max, epsilon)?;
        let a = Self {
            b0: init.b0,
            skin_weights: init.skin_weights,
            reparam,
            mouth: mouth.gaussians,
            mouth_weights: mouth.skin_weights,
            mouth_labels: mouth.labels,
            skeleton: model.skeleton().clone(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn len(&self) -> usize {
        self.b0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b0.is_empty()
    }

    pub fn mouth_len(&self) -> usize {
        self.mouth.len()
    }

    pub fn blendshape_count(&self) -> usize {
        self.reparam.blendshape_count()
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn sh_degree(&self) -> usize {
        self.b0.sh_degree
    }

    /// Checks the one-to-one correspondence between `B_0`, every delta set
    /// and the per-Gaussian rows of `d` and the skin weights.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let j = self.joint_count();
        self.b0.check_lengths()?;
        self.mouth.check_lengths()?;
        for (k, s) in self
            .reparam
            .delta_init
            .iter()
            .chain(&self.reparam.delta_hat)
            .enumerate()
        {
            s.check_lengths()?;
            if s.len() != n || s.sh_degree != self.b0.sh_degree {
                return Err(Error::Dimension(format!(
                    "delta set {k} has {} gaussians (degree {}), B0 has {n} (degree {})",
                    s.len(),
                    s.sh_degree,
                    self.b0.sh_degree
                )));
            }
        }
        if self.reparam.d().len() != n * self.blendshape_count() {
            return Err(Error::Dimension("d rows disagree with B0".into()));
        }
        if self.skin_weights.len() != n * j {
            return Err(Error::Dimension("skin weights disagree with B0".into()));
        }
        if self.mouth_weights.len() != self.mouth_len() * j
            || self.mouth_labels.len() != self.mouth_len()
        {
            return Err(Error::Dimension("mouth arrays disagree".into()));
        }
        if self.mouth.sh_degree != self.b0.sh_degree {
            return Err(Error::Dimension("mouth SH degree differs from B0".into()));
        }
        Ok(())
    }

    fn check_psi(&self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.blendshape_count() {
            return Err(Error::Dimension(format!(
                "psi has {} entries, avatar has K = {}",
                psi.len(),
                self.blendshape_count()
            )));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("psi".into()));
        }
        Ok(())
    }

    /// `B^ψ = B_0 + Σ_k ψ_k ΔB_k` on raw parameters. Zero coefficients are
    /// skipped, so `ψ = 0` returns `B_0` bitwise.
    pub fn blend(&self, psi: &[f64]) -> Result<GaussianSet> {
        self.check_psi(psi)?;
        let mut out = self.b0.clone();
        let kk = self.blendshape_count();
        let factors = self.reparam.factors();
        for class in PropertyClass::ALL {
            let w = self.b0.width(class);
            let dst = out.property_mut(class);
            const CHUNK: usize = 4096;
            dst.par_chunks_mut(CHUNK * w)
                .enumerate()
                .for_each(|(c, block)| {
                    let base = c * CHUNK * w;
                    for (k, &p) in psi.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let init = &self.reparam.delta_init[k].property(class)[base..];
                        let hat = &self.reparam.delta_hat[k].property(class)[base..];
                        for (e, o) in block.iter_mut().enumerate() {
                            let f = factors[((base + e) / w) * kk + k];
                            *o += p * reparam_value(init[e], f, hat[e]);
                        }
                    }
                });
        }
        Ok(out)
    }

    /// Poses the mouth Gaussians; expressions have no effect on them.
    pub fn pose_mouth(&self, pose: &Pose) -> Result<PosedGaussians> {
        lbs_pose(&self.mouth, &self.mouth_weights, &self.skeleton, pose)
    }

    /// Blended, skinned avatar Gaussians followed by the posed mouth.
    pub fn synthesize(&self, psi: &[f64], pose: &Pose) -> Result<PosedGaussians> {
        let blended = self.blend(psi)?;
        let mut out = lbs_pose(&blended, &self.skin_weights, &self.skeleton, pose)?;
        out.extend(&self.pose_mouth(pose)?);
        Ok(out)
    }

    pub fn synthesize_frame(&self, frame: &FrameParams) -> Result<PosedGaussians> {
        self.synthesize(&frame.psi, &frame.theta)
    }

    /// Rounds all stored parameters to `f32`, the precision of avatar files.
    pub fn quantize_f32(&mut self) {
        fn q(v: &mut [f64]) {
            v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        self.b0.quantize_f32();
        self.mouth.quantize_f32();
        self.skeleton
            .quantize_f32()
            .expect("rounding keeps rest transforms rigid");
        q(&mut self.skin_weights);
        q(&mut self.mouth_weights);
        for s in self
            .reparam
            .delta_init
            .iter_mut()
            .chain(self.reparam.delta_hat.iter_mut())
        {
            s.quantize_f32();
        }
        let mut d = self.reparam.d().to_vec();
        q(&mut d);
        let mut d_max = self.reparam.d_max().to_vec();
        q(&mut d_max);
        let eps = self.reparam.epsilon();
        self.reparam = DeltaReparam::new(
            std::mem::take(&mut self.reparam.delta_init),
            std::mem::take(&mut self.reparam.delta_hat),
            d,
            d_max,
            eps,
        )
        .expect("quantization keeps dimensions");
    }
}

#[cfg(test)]
pub(crate) mod test_avatars {
    use super::*;
    use crate::init::{init_avatar, init_mouth, InitConfig};
    use crate::mesh::test_models::random_blob;

    pub fn small_avatar(seed: u64, k: usize, sh_degree: usize) -> (MeshBlendshapeModel, BlendshapeAvatar) {
        let m = random_blob(seed, k);
        let cfg = InitConfig {
            neutral_target_count: 120,
            mouth_target_count: 10,
            sh_degree,
            seed,
            ..Default::default()
        };
        let init = init_avatar(&m, &cfg).unwrap();
        let mouth = init_mouth(&m, &cfg).unwrap();
        let a = BlendshapeAvatar::from_init(&m, init, mouth, DEFAULT_EPSILON).unwrap();
        (m, a)
    }
}

#[cfg(test)]
mod tests {
    use super::test_avatars::small_avatar;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randomize_hat(a: &mut BlendshapeAvatar, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut a.reparam.delta_hat {
            for c in PropertyClass::ALL {
                s.property_mut(c)
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.01..0.01));
            }
        }
    }

    #[test]
    fn zero_psi_is_bitwise_b0() {
        let (_, mut a) = small_avatar(1, 3, 1);
        randomize_hat(&mut a, 2);
        assert_eq!(a.blend(&[0.0; 3]).unwrap(), a.b0);
    }

    #[test]
    fn one_hot_reproduces_initialized_blendshape() {
        let (_, a) = small_avatar(2, 3, 1);
        let b = a.blend(&[0.0, 1.0, 0.0]).unwrap();
        let mut expect = a.b0.clone();
        for c in PropertyClass::ALL {
            let d = a.reparam.delta_init[1].property(c).to_vec();
            for (o, x) in expect.property_mut(c).iter_mut().zip(d) {
                *o += x;
            }
        }
        assert_eq!(b, expect);
    }

    #[test]
    fn superposition_holds() {
        let (_, mut a) = small_avatar(3, 3, 1);
        randomize_hat(&mut a, 4);
        let (x, y) = (0.7, -1.3);
        let lhs = a.blend(&[x, 0.0, y]).unwrap();
        let bj = a.blend(&[1.0, 0.0, 0.0]).unwrap();
        let bk = a.blend(&[0.0, 0.0, 1.0]).unwrap();
        for c in PropertyClass::ALL {
            for e in 0..lhs.property(c).len() {
                let rhs = x * bj.property(c)[e] + y * bk.property(c)[e]
                    - (x + y - 1.0) * a.b0.property(c)[e];
                assert!((lhs.property(c)[e] - rhs).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nan_psi_is_rejected() {
        let (_, a) = small_avatar(4, 2, 0);
        assert!(a.blend(&[f64::NAN, 0.0]).is_err());
        assert!(a.blend(&[0.0]).is_err());
    }

    #[test]
    fn mouth_ignores_expression() {
        let (_, a) = small_avatar(5, 2, 0);
        let mut pose = Pose::identity(2);
        pose.joints[1] = [0.2, 0.0, 0.0];
        let s1 = a.synthesize(&[0.0, 0.0], &pose).unwrap();
        let s2 = a.synthesize(&[1.5, -0.7], &pose).unwrap();
        let n = a.len();
        assert_eq!(s1.len(), n + a.mouth_len());
        assert_eq!(&s1.positions[n * 3..], &s2.positions[n * 3..]);
        s2.check_invariants().unwrap();
    }
}
