//! Single-precision playback representation of an avatar.
//!
//! The effective deltas `ΔG_{i,k}` are constant between training events, so
//! they are baked once and stored with the blendshape index innermost:
//! element `(i, p, k)` lives at `(i·P + p)·K + k`. Blending one frame is
//! then one length-`K` dot product per raw parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::pose::{JointTransforms, RAW_LIMIT};
use super::{BlendshapeAvatar, Pose};
use crate::error::{Error, Result};
use crate::gaussians::{sh_coeff_count, PosedGaussians};
use crate::math::{normalize_quat, quat_mul, sigmoid, Rigid, Vec3};
use crate::mesh::Skeleton;

/// Gaussians per parallel work item.
const CHUNK: usize = 512;

#[derive(Clone, Debug)]
pub struct RuntimeAvatar {
    n: usize,
    k: usize,
    sh_degree: usize,
    /// `N × P` packed rows of `B_0`.
    b0: Vec<f32>,
    deltas: Vec<f32>,
    skin_weights: Vec<f32>,
    /// `N_mouth × P` packed rows of `B_m`.
    mouth: Vec<f32>,
    mouth_weights: Vec<f32>,
    skeleton: Skeleton,
}

impl RuntimeAvatar {
    pub fn from_avatar(a: &BlendshapeAvatar) -> Self {
        let n = a.len();
        let k = a.blendshape_count();
        let p = a.b0.params_per_gaussian();
        let mut b0 = vec![0.0f32; n * p];
        let mut row = vec![0.0; p];
        for i in 0..n {
            a.b0.pack_row(i, &mut row);
            for (o, v) in b0[i * p..(i + 1) * p].iter_mut().zip(&row) {
                *o = *v as f32;
            }
        }
        let mut deltas = vec![0.0f32; n * p * k];
        for kk in 0..k {
            let set = a.reparam.effective_set(kk);
            for i in 0..n {
                set.pack_row(i, &mut row);
                for (pp, v) in row.iter().enumerate() {
                    deltas[(i * p + pp) * k + kk] = *v as f32;
                }
            }
        }
        let nm = a.mouth_len();
        let mut mouth = vec![0.0f32; nm * p];
        for i in 0..nm {
            a.mouth.pack_row(i, &mut row);
            for (o, v) in mouth[i * p..(i + 1) * p].iter_mut().zip(&row) {
                *o = *v as f32;
            }
        }
        Self {
            n,
            k,
            sh_degree: a.sh_degree(),
            b0,
            deltas,
            skin_weights: a.skin_weights.iter().map(|&v| v as f32).collect(),
            mouth,
            mouth_weights: a.mouth_weights.iter().map(|&v| v as f32).collect(),
            skeleton: a.skeleton.clone(),
        }
    }

    /// Random avatar of arbitrary size for throughput measurements: unit
    /// quaternions, small deltas, skin weights split over up to three joints
    /// of a simple chain.
    pub fn random(n: usize, k: usize, j: usize, sh_degree: usize, seed: u64) -> Result<Self> {
        if k == 0 || j == 0 {
            return Err(Error::invalid("random avatar", "K and J must be at least 1"));
        }
        let p = 11 + 3 * sh_coeff_count(sh_degree);
        let parents = (0..j as i32).map(|x| x - 1).collect();
        let rest = (0..j)
            .map(|x| Rigid::from_translation(Vec3::new(0.0, -0.02 * x as f64, 0.0)))
            .collect();
        let names = (0..j).map(|x| format!("joint{x}")).collect();
        let skeleton = Skeleton::new(parents, rest, names)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b0 = vec![0.0f32; n * p];
        let mut skin_weights = vec![0.0f32; n * j];
        for i in 0..n {
            let r = &mut b0[i * p..(i + 1) * p];
            for v in r.iter_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
            r[3] = 1.0;
            for s in &mut r[7..10] {
                *s = rng.gen_range(-6.0..-4.0);
            }
            let w = &mut skin_weights[i * j..(i + 1) * j];
            let a = rng.gen_range(0..j);
            let b = rng.gen_range(0..j);
            let t: f32 = rng.gen();
            w[a] += t;
            w[b] += 1.0 - t;
        }
        // Deltas are filled in parallel from per-chunk streams; the values only
        // need to be nonzero and bounded.
        let mut deltas = vec![0.0f32; n * p * k];
        deltas
            .par_chunks_mut(1 << 20)
            .enumerate()
            .for_each(|(c, block)| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9e37_79b9));
                for v in block {
                    *v = r.gen_range(-1e-3..1e-3);
                }
            });
        Ok(Self {
            n,
            k,
            sh_degree,
            b0,
            deltas,
            skin_weights,
            mouth: Vec::new(),
            mouth_weights: Vec::new(),
            skeleton,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn blendshape_count(&self) -> usize {
        self.k
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn mouth_len(&self) -> usize {
        self.mouth.len() / self.params_per_gaussian()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn params_per_gaussian(&self) -> usize {
        11 + 3 * sh_coeff_count(self.sh_degree)
    }

    /// Bytes of delta storage streamed per blend.
    pub fn delta_bytes(&self) -> usize {
        self.deltas.len() * std::mem::size_of::<f32>()
    }

    /// Writes the blended raw rows (`N × P`) for expression `psi` into `out`.
    pub fn blend_into(&self, psi: &[f32], out: &mut Vec<f32>) -> Result<()> {
        if psi.len() != self.k {
            return Err(Error::Dimension(format!(
                "psi has {} entries, avatar has K = {}",
                psi.len(),
                self.k
            )));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("psi".into()));
        }
        let p = self.params_per_gaussian();
        let k = self.k;
        out.resize(self.n * p, 0.0);
        out.par_chunks_mut(CHUNK * p)
            .zip(self.b0.par_chunks(CHUNK * p))
            .zip(self.deltas.par_chunks(CHUNK * p * k))
            .for_each(|((o, b), d)| {
                for ((o, b), d) in o.iter_mut().zip(b).zip(d.chunks_exact(k)) {
                    *o = b + dot(d, psi);
                }
            });
        Ok(())
    }

    /// Skins blended rows and writes activated Gaussians into `out`.
    pub fn pose_into(&self, blended: &[f32], pose: &Pose, out: &mut PosedGaussians) -> Result<()> {
        pose_rows(
            blended,
            &self.skin_weights,
            &self.skeleton,
            self.sh_degree,
            pose,
            out,
        )
    }

    pub fn pose_mouth_into(&self, pose: &Pose, out: &mut PosedGaussians) -> Result<()> {
        pose_rows(
            &self.mouth,
            &self.mouth_weights,
            &self.skeleton,
            self.sh_degree,
            pose,
            out,
        )
    }

    /// Full synthesis (avatar then mouth), reusing `scratch` for blended rows.
    pub fn synthesize(
        &self,
        psi: &[f32],
        pose: &Pose,
        scratch: &mut Vec<f32>,
    ) -> Result<PosedGaussians> {
        self.blend_into(psi, scratch)?;
        let mut out = PosedGaussians::with_capacity(0, self.sh_degree);
        self.pose_into(scratch, pose, &mut out)?;
        let mut mouth = PosedGaussians::with_capacity(0, self.sh_degree);
        self.pose_mouth_into(pose, &mut mouth)?;
        out.extend(&mouth);
        Ok(out)
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn pose_rows(
    rows: &[f32],
    weights: &[f32],
    skeleton: &Skeleton,
    sh_degree: usize,
    pose: &Pose,
    out: &mut PosedGaussians,
) -> Result<()> {
    let jt = JointTransforms::new(skeleton, pose)?;
    let p = 11 + 3 * sh_coeff_count(sh_degree);
    let j = skeleton.joint_count();
    let n = rows.len() / p;
    let c = 3 * sh_coeff_count(sh_degree);
    out.sh_degree = sh_degree;
    out.positions.resize(n * 3, 0.0);
    out.rotations.resize(n * 4, 0.0);
    out.scales.resize(n * 3, 0.0);
    out.opacities.resize(n, 0.0);
    out.sh.resize(n * c, 0.0);
    out.sh_frames.resize(n * 4, 0.0);
    let bad = out
        .positions
        .par_chunks_mut(3 * CHUNK)
        .zip(out.rotations.par_chunks_mut(4 * CHUNK))
        .zip(out.scales.par_chunks_mut(3 * CHUNK))
        .zip(out.opacities.par_chunks_mut(CHUNK))
        .zip(out.sh.par_chunks_mut(c * CHUNK))
        .zip(out.sh_frames.par_chunks_mut(4 * CHUNK))
        .enumerate()
        .map(|(chunk, (((((pos, rot), scl), opa), sh), frm))| {
            let mut bad = None;
            let mut w = vec![0.0f64; j];
            for local in 0..opa.len() {
                let i = chunk * CHUNK + local;
                let r = &rows[i * p..(i + 1) * p];
                for (a, b) in w.iter_mut().zip(&weights[i * j..(i + 1) * j]) {
                    *a = *b as f64;
                }
                let (m, t, fq) = jt.blend(&w);
                let y = m * Vec3::new(r[0] as f64, r[1] as f64, r[2] as f64) + t;
                pos[local * 3..local * 3 + 3].copy_from_slice(y.as_slice());
                let q = [r[3] as f64, r[4] as f64, r[5] as f64, r[6] as f64];
                match normalize_quat(q) {
                    Some(q) => rot[local * 4..local * 4 + 4].copy_from_slice(&quat_mul(fq, q)),
                    None => {
                        bad.get_or_insert(i);
                        rot[local * 4..local * 4 + 4].copy_from_slice(&fq);
                    }
                }
                for a in 0..3 {
                    scl[local * 3 + a] = (r[7 + a] as f64).clamp(-RAW_LIMIT, RAW_LIMIT).exp();
                }
                opa[local] = sigmoid((r[10] as f64).clamp(-RAW_LIMIT, RAW_LIMIT));
                for (o, v) in sh[local * c..(local + 1) * c].iter_mut().zip(&r[11..]) {
                    *o = *v as f64;
                }
                frm[local * 4..local * 4 + 4].copy_from_slice(&fq);
            }
            bad
        })
        .reduce(|| None, |a, b| a.or(b));
    if let Some(i) = bad {
        return Err(Error::invalid(
            "rotation",
            format!("gaussian {i} has a zero-norm quaternion"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anim::test_avatars::small_avatar;

    #[test]
    fn runtime_matches_double_precision_synthesis() {
        let (_, mut a) = small_avatar(3, 3, 1);
        for s in &mut a.reparam.delta_hat {
            s.positions.iter_mut().enumerate().for_each(|(e, v)| *v = 1e-3 * ((e % 7) as f64 - 3.0));
        }
        let rt = RuntimeAvatar::from_avatar(&a);
        let psi = [0.4, -0.8, 1.1];
        let mut pose = Pose::identity(2);
        pose.joints[1] = [0.1, -0.05, 0.02];
        let exact = a.synthesize(&psi, &pose).unwrap();
        let psi32 = psi.map(|v| v as f32);
        let mut scratch = Vec::new();
        let fast = rt.synthesize(&psi32, &pose, &mut scratch).unwrap();
        assert_eq!(exact.len(), fast.len());
        for (x, y) in exact.positions.iter().zip(&fast.positions) {
            assert!((x - y).abs() < 1e-5);
        }
        for (x, y) in exact.rotations.iter().zip(&fast.rotations) {
            assert!((x - y).abs() < 1e-5);
        }
        fast.check_invariants().unwrap();
    }

    #[test]
    fn random_avatar_blends() {
        let rt = RuntimeAvatar::random(1000, 5, 3, 1, 1).unwrap();
        let mut out = Vec::new();
        rt.blend_into(&[0.1; 5], &mut out).unwrap();
        assert_eq!(out.len(), 1000 * rt.params_per_gaussian());
        let mut posed = PosedGaussians::with_capacity(0, 1);
        rt.pose_into(&out, &Pose::identity(3), &mut posed).unwrap();
        posed.check_invariants().unwrap();
    }
}
