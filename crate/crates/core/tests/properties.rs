mod common;

use common::{random_pose, random_quat, randomize, toy_avatar};
use gaussblend::anim::gba::{from_bytes, to_bytes};
use gaussblend::anim::pose::lbs_pose;
use gaussblend::anim::reparam::{reparam_value, scaling_factor, DeltaReparam};
use gaussblend::gaussians::{sh_coeff_count, GaussianSet, PosedGaussians, PropertyClass};
use gaussblend::math::{quat_to_mat, v3};
use gaussblend::render::scenes::{camera, random_scene};
use gaussblend::render::{render_reference, render_tiled};
use gaussblend::sh;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut impl Rng, n: usize, deg: usize, scale: f64) -> GaussianSet {
    let mut s = GaussianSet::zeros(n, deg);
    for c in PropertyClass::ALL {
        s.property_mut(c).iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
    s
}

fn permuted(g: &PosedGaussians, perm: &[usize]) -> PosedGaussians {
    let mut out = PosedGaussians::with_capacity(g.len(), g.sh_degree);
    let c = 3 * g.sh_coeffs();
    for &i in perm {
        out.positions.extend_from_slice(&g.positions[i * 3..i * 3 + 3]);
        out.rotations.extend_from_slice(&g.rotations[i * 4..i * 4 + 4]);
        out.scales.extend_from_slice(&g.scales[i * 3..i * 3 + 3]);
        out.opacities.push(g.opacities[i]);
        out.sh.extend_from_slice(&g.sh[i * c..(i + 1) * c]);
        out.sh_frames.extend_from_slice(&g.sh_frames[i * 4..i * 4 + 4]);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn factor_matches_direct_arithmetic(d in 0.0f64..0.05, d_max in 0.0f64..0.05, eps in 0.0f64..1e-3) {
        let f = scaling_factor(d, d_max, eps);
        let expected = if d_max > eps { ((d - eps) / (d_max - eps)).max(0.0) } else { 0.0 };
        prop_assert!((f - expected).abs() <= 1e-12);
        prop_assert!(f >= 0.0);
        if d_max > eps {
            prop_assert_eq!(scaling_factor(d_max, d_max, eps), 1.0);
        }
        if d <= eps {
            prop_assert_eq!(f, 0.0);
        }
    }

    #[test]
    fn reparam_value_is_exact_when_the_learned_term_vanishes(init in -1.0f64..1.0, f in 0.0f64..2.0, hat in -1.0f64..1.0) {
        prop_assert_eq!(reparam_value(init, 0.0, hat).to_bits(), init.to_bits());
        prop_assert_eq!(reparam_value(init, f, 0.0).to_bits(), init.to_bits());
        prop_assert!((reparam_value(init, f, hat) - (init + f * hat)).abs() <= 1e-15);
    }

    #[test]
    fn sh_rotation_rotates_the_color_function(seed in any::<u64>(), deg in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 3 * sh_coeff_count(deg);
        let coeffs: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = random_quat(&mut rng);
        let r = quat_to_mat(q);
        let rotated = sh::rotate_sh(&coeffs, deg, q);
        for _ in 0..8 {
            let d = v3([0; 3].map(|_| rng.gen_range(-1.0..1.0)));
            if d.norm() < 1e-3 {
                continue;
            }
            let d = d.normalize();
            let a = sh::eval(&rotated, deg, (r * d).into());
            let b = sh::eval(&coeffs, deg, d.into());
            for ch in 0..3 {
                prop_assert!((a[ch] - b[ch]).abs() < 1e-10, "{a:?} vs {b:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tiled_renderer_equals_reference(seed in any::<u64>(), n in 0usize..120, tile in prop::sample::select(vec![8u32, 16, 32])) {
        let g = random_scene(seed, n, 1, 0.5);
        let cam = camera(40, 28);
        let r = render_reference(&g, &cam, [0.1, 0.2, 0.3]).unwrap();
        let t = render_tiled(&g, &cam, [0.1, 0.2, 0.3], tile).unwrap();
        prop_assert_eq!(&r.color, &t.color);
        prop_assert_eq!(&r.alpha, &t.alpha);
        prop_assert!(r.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn splat_order_does_not_matter(seed in any::<u64>(), n in 1usize..80) {
        let g = random_scene(seed, n, 2, 0.5);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let cam = camera(24, 24);
        let a = render_tiled(&g, &cam, [0.0; 3], 16).unwrap();
        let b = render_tiled(&permuted(&g, &perm), &cam, [0.0; 3], 16).unwrap();
        prop_assert_eq!(a.color, b.color);
        prop_assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn zero_learned_deltas_give_the_initial_deltas(seed in any::<u64>(), n in 1usize..30, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init: Vec<GaussianSet> = (0..k).map(|_| random_set(&mut rng, n, 1, 0.1)).collect();
        let d: Vec<f64> = (0..n * k).map(|_| rng.gen_range(0.0..0.02)).collect();
        let d_max: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..0.03)).collect();
        let r = DeltaReparam::from_init(init.clone(), d, d_max, 1e-5).unwrap();
        for (kk, set) in init.iter().enumerate() {
            let eff = r.effective_set(kk);
            for c in PropertyClass::ALL {
                let same = eff.property(c).iter().zip(set.property(c)).all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same, "{c:?}");
            }
        }
    }

    #[test]
    fn blending_is_affine_in_psi(seed in any::<u64>()) {
        let (_, mut a) = toy_avatar(3, 1, 150, 11);
        randomize(&mut a, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = p.iter().zip(&q).map(|(x, y)| x + y).collect();
        let b0 = a.blend(&[0.0; 3]).unwrap();
        prop_assert_eq!(&b0, &a.b0);
        let (bp, bq, bs) = (a.blend(&p).unwrap(), a.blend(&q).unwrap(), a.blend(&sum).unwrap());
        for c in PropertyClass::ALL {
            for i in 0..b0.property(c).len() {
                let lhs = bs.property(c)[i] - b0.property(c)[i];
                let rhs = (bp.property(c)[i] - b0.property(c)[i]) + (bq.property(c)[i] - b0.property(c)[i]);
                prop_assert!((lhs - rhs).abs() < 1e-6, "{c:?}[{i}]: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn single_joint_skinning_is_rigid(seed in any::<u64>()) {
        let (_, a) = toy_avatar(2, 0, 120, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = a.joint_count();
        let joint = rng.gen_range(0..j);
        let mut w = vec![0.0; a.len() * j];
        for i in 0..a.len() {
            w[i * j + joint] = 1.0;
        }
        let mut pose = random_pose(&mut rng, j, 0.5);
        pose.global = gaussblend::math::Rigid::from_array7({
            let q = random_quat(&mut rng);
            [q[0], q[1], q[2], q[3], 0.1, -0.2, 0.3]
        }).unwrap();
        let posed = lbs_pose(&a.b0, &w, &a.skeleton, &pose).unwrap();
        posed.check_invariants().unwrap();
        for _ in 0..50 {
            let (x, y) = (rng.gen_range(0..a.len()), rng.gen_range(0..a.len()));
            let before = (v3(a.b0.position(x)) - v3(a.b0.position(y))).norm();
            let after = (v3(posed.position(x)) - v3(posed.position(y))).norm();
            prop_assert!((before - after).abs() < 1e-6);
        }
    }
}

#[test]
fn avatar_file_round_trip_is_exact_after_quantization() {
    let (_, mut a) = toy_avatar(3, 2, 200, 3);
    randomize(&mut a, 4);
    a.quantize_f32();
    let back = from_bytes(&to_bytes(&a).unwrap()).unwrap();
    assert_eq!(back, a);
    let mut bytes = to_bytes(&a).unwrap();
    let last = bytes.len() - 1;
    bytes.truncate(last);
    assert!(from_bytes(&bytes).is_err());
}

#[test]
fn synthesized_frames_satisfy_posed_invariants() {
    let (_, mut a) = toy_avatar(4, 3, 300, 8);
    randomize(&mut a, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let psi: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let pose = random_pose(&mut rng, a.joint_count(), 0.3);
        let g = a.synthesize(&psi, &pose).unwrap();
        assert_eq!(g.len(), a.len() + a.mouth_len());
        g.check_invariants().unwrap();
    }
}
