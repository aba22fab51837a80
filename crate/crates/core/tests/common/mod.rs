#![allow(dead_code)]

use gaussblend::anim::{BlendshapeAvatar, Pose};
use gaussblend::gaussians::PropertyClass;
use gaussblend::init::InitConfig;
use gaussblend::math::{normalize_quat, Rigid, Vec3};
use gaussblend::mesh::MeshBlendshapeModel;
use gaussblend::render::Camera;
use gaussblend::synth::{initial_avatar, toy_head, SyntheticScenario};
use gaussblend::train::TrainFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        if let Some(q) = normalize_quat([0; 4].map(|_| rng.gen_range(-1.0..1.0))) {
            return q;
        }
    }
}

pub fn small_scenario(k: usize, sh_degree: usize, n: usize, seed: u64) -> SyntheticScenario {
    SyntheticScenario {
        seed,
        blendshape_count: k,
        subdivisions: 2,
        init: InitConfig {
            neutral_target_count: n,
            mouth_target_count: 12,
            sh_degree,
            seed,
            ..InitConfig::default()
        },
        ..SyntheticScenario::default()
    }
}

/// Toy-head model and its mesh-initialized avatar.
pub fn toy_avatar(k: usize, sh_degree: usize, n: usize, seed: u64) -> (MeshBlendshapeModel, BlendshapeAvatar) {
    let s = small_scenario(k, sh_degree, n, seed);
    let m = toy_head(&s).unwrap();
    let a = initial_avatar(&m, &s.init).unwrap();
    (m, a)
}

/// Random `Δ̂G`, SH and opacities so that every parameter matters.
pub fn randomize(a: &mut BlendshapeAvatar, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut a.reparam.delta_hat {
        for c in PropertyClass::ALL {
            s.property_mut(c).iter_mut().for_each(|v| *v = rng.gen_range(-0.02..0.02));
        }
        s.positions.iter_mut().for_each(|v| *v *= 0.05);
    }
    for s in [&mut a.b0, &mut a.mouth] {
        s.sh.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        s.opacities.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..2.0));
    }
}

/// Keeps `n` evenly spaced neutral Gaussians and the first `nm` mouth ones.
pub fn subset(a: &BlendshapeAvatar, n: usize, nm: usize) -> BlendshapeAvatar {
    let idx: Vec<usize> = (0..n).map(|i| i * a.len() / n).collect();
    let (k, j) = (a.blendshape_count(), a.joint_count());
    let mut b = a.clone();
    b.b0 = a.b0.gather(&idx);
    b.skin_weights = idx.iter().flat_map(|&i| a.skin_weights[i * j..(i + 1) * j].to_vec()).collect();
    let d = idx.iter().flat_map(|&i| a.reparam.d()[i * k..(i + 1) * k].to_vec()).collect();
    b.reparam.rebuild(|s| *s = s.gather(&idx), d).unwrap();
    let midx: Vec<usize> = (0..nm).collect();
    b.mouth = a.mouth.gather(&midx);
    b.mouth_weights = a.mouth_weights[..nm * j].to_vec();
    b.mouth_labels = a.mouth_labels[..nm].to_vec();
    b.validate().unwrap();
    b
}

pub fn random_pose(rng: &mut impl Rng, j: usize, range: f64) -> Pose {
    let mut pose = Pose::identity(j);
    for r in &mut pose.joints {
        *r = [0; 3].map(|_| rng.gen_range(-range..range));
    }
    pose
}

/// A frame with random expression, pose, target image and mask, seen by a
/// camera that frames the toy head.
pub fn random_frame(a: &BlendshapeAvatar, seed: u64, w: u32, h: u32) -> TrainFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose = random_pose(&mut rng, a.joint_count(), 0.1);
    pose.global = Rigid::from_translation(Vec3::new(0.004, -0.002, 0.0));
    let n = (w * h) as usize;
    TrainFrame {
        psi: (0..a.blendshape_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        pose,
        camera: Camera::orbit(Vec3::new(0.0, 0.0, 0.0), 0.3, 0.15, 0.4, 0.6, w, h),
        image: (0..3 * n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        mask: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}
