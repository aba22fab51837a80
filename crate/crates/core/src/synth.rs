//! Procedural toy head and synthetic frame generation for round-trip tests.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anim::{BlendshapeAvatar, FrameParams, Pose, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::init::{init_avatar, init_mouth, InitConfig};
use crate::math::{Rigid, Vec3};
use crate::mesh::{MeshBlendshapeModel, MeshParts, Skeleton};
use crate::render::{render_reference, Camera, LinearImage};
use crate::sh::SH_C0;

/// Joint names of the toy skeleton, in topological order.
pub const JOINTS: [&str; 3] = ["neck", "head", "jaw"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSpec {
    pub distance: f64,
    pub fov_y: f64,
    /// Yaw and pitch are drawn uniformly from `±yaw_range`, `±pitch_range`.
    pub yaw_range: f64,
    pub pitch_range: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            distance: 0.45,
            fov_y: 0.55,
            yaw_range: 0.6,
            pitch_range: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub blendshape_count: usize,
    /// Icosphere subdivision level (4 gives 2562 vertices).
    pub subdivisions: usize,
    /// Ellipsoid semi-axes in model units (meters).
    pub semi_axes: [f64; 3],
    /// Peak displacement of each procedural expression.
    pub expression_amplitude: f64,
    pub init: InitConfig,
    pub orbit: OrbitSpec,
    /// Expression coefficients are drawn from `[psi_min, psi_max]`.
    pub psi_min: f64,
    pub psi_max: f64,
    /// Joint rotations are drawn from `±joint_range` radians per axis (the
    /// jaw only opens, in `[0, jaw_open]`).
    pub joint_range: f64,
    pub jaw_open: f64,
    /// Amplitudes of the ground-truth perturbation: the neutral color
    /// pattern, higher SH bands, and the learned delta terms.
    pub color_amplitude: f64,
    pub sh_rest_amplitude: f64,
    pub delta_position: f64,
    pub delta_scale: f64,
    pub delta_color: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            seed: 7,
            frame_count: 350,
            width: 128,
            height: 128,
            blendshape_count: 8,
            subdivisions: 4,
            semi_axes: [0.075, 0.1, 0.09],
            expression_amplitude: 0.012,
            init: InitConfig {
                neutral_target_count: 4000,
                mouth_target_count: 200,
                sh_degree: 3,
                ..InitConfig::default()
            },
            orbit: OrbitSpec::default(),
            psi_min: -0.3,
            psi_max: 1.0,
            joint_range: 0.12,
            jaw_open: 0.2,
            color_amplitude: 1.2,
            sh_rest_amplitude: 0.05,
            delta_position: 2e-4,
            delta_scale: 0.05,
            delta_color: 0.3,
        }
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(Error::invalid("resolution", "must be within 1..=4096"));
        }
        if self.blendshape_count == 0 {
            return Err(Error::invalid("blendshape_count", "must be at least 1"));
        }
        if self.subdivisions > 6 {
            return Err(Error::invalid("subdivisions", "at most 6"));
        }
        if self.semi_axes.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::invalid("semi_axes", "must be positive"));
        }
        if !(self.psi_min <= self.psi_max) {
            return Err(Error::invalid("psi_min", "must not exceed psi_max"));
        }
        self.init.validate()
    }
}

pub struct SyntheticDataset {
    pub model: MeshBlendshapeModel,
    /// Ground truth, already rounded to file precision.
    pub ground_truth: BlendshapeAvatar,
    pub frames: Vec<FrameParams>,
    /// 8-bit quantized renders, as stored on disk.
    pub images: Vec<LinearImage>,
    /// Soft foreground masks: the ground-truth alpha at 8 bits.
    pub masks: Vec<Vec<f64>>,
}

/// Subdivided icosahedron on the unit sphere.
pub fn icosphere(level: usize) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, v: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a as usize] + v[b as usize]) * 0.5).normalize());
                (v.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Toy skeleton: neck at the base of the head, head at its center, jaw
/// hinge behind the mouth.
pub fn toy_skeleton(semi_axes: [f64; 3]) -> Result<Skeleton> {
    let [_, by, bz] = semi_axes;
    Skeleton::new(
        vec![-1, 0, 1],
        vec![
            Rigid::from_translation(Vec3::new(0.0, -0.9 * by, -0.1 * bz)),
            Rigid::from_translation(Vec3::zeros()),
            Rigid::from_translation(Vec3::new(0.0, -0.2 * by, 0.1 * bz)),
        ],
        JOINTS.iter().map(|s| s.to_string()).collect(),
    )
}

/// Ellipsoid head with `k` localized expression bumps and smooth
/// neck/head/jaw skin weights.
pub fn toy_head(s: &SyntheticScenario) -> Result<MeshBlendshapeModel> {
    let (dirs, faces) = icosphere(s.subdivisions);
    let axes = Vec3::from(s.semi_axes);
    let verts: Vec<Vec3> = dirs.iter().map(|d| d.component_mul(&axes)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x746f_7968);

    // Expression k pushes a patch around a front-facing center along a
    // random direction with a Gaussian falloff.
    let k = s.blendshape_count;
    let mut deltas = Vec::with_capacity(k * verts.len());
    for _ in 0..k {
        let az: f64 = rng.gen_range(-1.0..1.0);
        let el: f64 = rng.gen_range(-0.8..0.5);
        let center = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()).component_mul(&axes);
        let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..1.0))
            .normalize();
        let width = rng.gen_range(0.25..0.45) * axes.min();
        for v in &verts {
            let w = (-(v - center).norm_squared() / (2.0 * width * width)).exp();
            let w = if w < 1e-4 { 0.0 } else { w };
            let p = dir * (s.expression_amplitude * w);
            deltas.push([p.x, p.y, p.z]);
        }
    }

    let [ax, by, bz] = s.semi_axes;
    let mut weights = Vec::with_capacity(verts.len() * 3);
    for v in &verts {
        let neck = 1.0 - smoothstep(-0.95 * by, -0.7 * by, v.y);
        let jaw_region = (1.0 - smoothstep(-0.45 * by, -0.2 * by, v.y))
            * smoothstep(-0.1 * bz, 0.4 * bz, v.z)
            * (1.0 - smoothstep(0.55 * ax, 0.85 * ax, v.x.abs()));
        let jaw = jaw_region * (1.0 - neck);
        weights.extend([neck, 1.0 - neck - jaw, jaw]);
    }
    MeshBlendshapeModel::new(MeshParts {
        vertices: verts.iter().map(|v| [v.x, v.y, v.z]).collect(),
        faces,
        deltas,
        blendshape_count: k,
        skeleton: toy_skeleton(s.semi_axes)?,
        skin_weights: weights,
    })
}

/// Neutral-face color pattern: a skin base with darker brows, lips and
/// hair, as linear RGB before the SH DC encoding.
fn albedo(p: &Vec3, axes: &Vec3, amp: f64) -> [f64; 3] {
    let q = p.component_div(axes);
    let bump = |c: [f64; 3], r: f64| (-(q - Vec3::from(c)).norm_squared() / (2.0 * r * r)).exp();
    let skin = [0.62, 0.45, 0.36];
    let brows = bump([0.3, 0.35, 0.88], 0.12) + bump([-0.3, 0.35, 0.88], 0.12);
    let eyes = bump([0.3, 0.18, 0.92], 0.09) + bump([-0.3, 0.18, 0.92], 0.09);
    let lips = bump([0.0, -0.45, 0.88], 0.13);
    let hair = smoothstep(0.45, 0.75, q.y) + smoothstep(0.2, -0.6, q.z) * smoothstep(0.0, 0.5, q.y);
    let stripe = 0.08 * (12.0 * q.x + 5.0 * q.y).sin();
    let mut c = skin;
    for (a, ch) in c.iter_mut().enumerate() {
        let dark = [0.18, 0.12, 0.1][a];
        let lip = [0.7, 0.25, 0.28][a];
        *ch = *ch * (1.0 - 0.7 * brows.min(1.0)) + dark * 0.7 * brows.min(1.0);
        *ch = *ch * (1.0 - eyes.min(1.0)) + 0.05 * eyes.min(1.0);
        *ch = *ch * (1.0 - lips) + lip * lips;
        *ch = *ch * (1.0 - hair.min(1.0)) + [0.12, 0.08, 0.05][a] * hair.min(1.0);
        *ch = (0.5 + amp * (*ch + stripe - 0.5)).clamp(0.0, 1.0);
    }
    c
}

/// The mesh-initialized avatar that training starts from.
pub fn initial_avatar(model: &MeshBlendshapeModel, init: &InitConfig) -> Result<BlendshapeAvatar> {
    let a = init_avatar(model, init)?;
    if a.saturated {
        log::warn!("surface sampling stopped short of {} gaussians", init.neutral_target_count);
    }
    let m = init_mouth(model, init)?;
    BlendshapeAvatar::from_init(model, a, m, DEFAULT_EPSILON)
}

/// Ground truth: the initialization plus a color pattern and randomized
/// learned deltas, rounded to file precision.
pub fn ground_truth(s: &SyntheticScenario, model: &MeshBlendshapeModel) -> Result<BlendshapeAvatar> {
    let mut a = initial_avatar(model, &s.init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x6774);
    let axes = Vec3::from(s.semi_axes);
    let c = a.b0.sh_coeffs();
    for i in 0..a.len() {
        let col = albedo(&Vec3::from(a.b0.position(i)), &axes, s.color_amplitude);
        let sh = a.b0.sh_of_mut(i);
        for ch in 0..3 {
            sh[ch * c] = (col[ch] - 0.5) / SH_C0;
            for v in &mut sh[ch * c + 1..(ch + 1) * c] {
                *v = rng.gen_range(-1.0..1.0) * s.sh_rest_amplitude;
            }
        }
    }
    for i in 0..a.mouth_len() {
        let sh = a.mouth.sh_of_mut(i);
        for ch in 0..3 {
            sh[ch * c] = ([0.9, 0.88, 0.8][ch] - 0.5) / SH_C0;
        }
    }
    let kk = a.blendshape_count();
    for k in 0..kk {
        let hat = &mut a.reparam.delta_hat[k];
        let tint = [0; 3].map(|_| rng.gen_range(-1.0..1.0) * s.delta_color);
        for i in 0..hat.len() {
            for ax in 0..3 {
                hat.positions[i * 3 + ax] = rng.gen_range(-1.0..1.0) * s.delta_position;
                hat.scales[i * 3 + ax] = rng.gen_range(-1.0..1.0) * s.delta_scale;
            }
            for ch in 0..3 {
                hat.sh[i * 3 * c + ch * c] = tint[ch] / SH_C0;
            }
        }
    }
    a.quantize_f32();
    a.validate()?;
    Ok(a)
}

fn random_frame(s: &SyntheticScenario, rng: &mut ChaCha8Rng, j: usize) -> FrameParams {
    let psi = (0..s.blendshape_count)
        .map(|_| rng.gen_range(s.psi_min..=s.psi_max))
        .collect();
    let mut pose = Pose::identity(j);
    for (ji, r) in pose.joints.iter_mut().enumerate() {
        *r = if JOINTS.get(ji) == Some(&"jaw") {
            [rng.gen_range(0.0..=s.jaw_open), 0.0, 0.0]
        } else {
            [0; 3].map(|_| rng.gen_range(-s.joint_range..=s.joint_range))
        };
    }
    let o = &s.orbit;
    let camera = Camera::orbit(
        Vec3::zeros(),
        rng.gen_range(-o.yaw_range..=o.yaw_range),
        rng.gen_range(-o.pitch_range..=o.pitch_range),
        o.distance,
        o.fov_y,
        s.width,
        s.height,
    );
    FrameParams {
        psi,
        theta: pose,
        camera,
        image_path: None,
        mask_path: None,
    }
}

/// Renders one frame of `avatar` like a stored dataset frame: 8-bit
/// quantized color and the 8-bit quantized alpha matte as mask.
pub fn render_frame(avatar: &BlendshapeAvatar, frame: &FrameParams) -> Result<(LinearImage, Vec<f64>)> {
    let g = avatar.synthesize_frame(frame)?;
    let r = render_reference(&g, &frame.camera, [0.0; 3])?;
    let mask = r.alpha.iter().map(|&a| (a.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    Ok((LinearImage::new(r.width, r.height, r.color)?.quantized(), mask))
}

pub fn generate_synthetic(s: &SyntheticScenario) -> Result<SyntheticDataset> {
    s.validate()?;
    let model = toy_head(s)?;
    let gt = ground_truth(s, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x6672_616d);
    let frames: Vec<FrameParams> = (0..s.frame_count)
        .map(|_| random_frame(s, &mut rng, gt.joint_count()))
        .collect();
    let mut images = Vec::with_capacity(frames.len());
    let mut masks = Vec::with_capacity(frames.len());
    for f in &frames {
        let (img, mask) = render_frame(&gt, f)?;
        images.push(img);
        masks.push(mask);
    }
    Ok(SyntheticDataset {
        model,
        ground_truth: gt,
        frames,
        images,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticScenario {
        SyntheticScenario {
            frame_count: 3,
            width: 32,
            height: 32,
            subdivisions: 2,
            init: InitConfig {
                neutral_target_count: 300,
                mouth_target_count: 20,
                sh_degree: 1,
                ..InitConfig::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn icosphere_counts_and_closure() {
        for level in 0..4 {
            let (v, f) = icosphere(level);
            assert_eq!(v.len(), 10 * 4usize.pow(level as u32) + 2);
            assert_eq!(f.len(), 20 * 4usize.pow(level as u32));
            assert!(v.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
            // Euler characteristic of a closed genus-0 surface.
            let e = f.len() * 3 / 2;
            assert_eq!(v.len() + f.len() - e, 2);
        }
    }

    #[test]
    fn toy_head_weights_are_convex() {
        let s = small();
        let m = toy_head(&s).unwrap();
        assert_eq!(m.joint_count(), 3);
        assert_eq!(m.blendshape_count(), 8);
        for v in 0..m.vertex_count() {
            let w = m.vertex_weights(v);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for k in 0..8 {
            assert!(m.max_displacement(k) > 0.5 * s.expression_amplitude);
        }
    }

    #[test]
    fn generation_is_deterministic_and_self_consistent() {
        let s = small();
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.images, b.images);
        assert_eq!(a.ground_truth, b.ground_truth);
        for (i, f) in a.frames.iter().enumerate() {
            let (img, mask) = render_frame(&a.ground_truth, f).unwrap();
            assert_eq!(img, a.images[i]);
            assert_eq!(mask, a.masks[i]);
            assert!(mask.iter().all(|&m| (0.0..=1.0).contains(&m) && (m * 255.0).fract() < 1e-9));
            assert!(mask.iter().any(|&m| m > 0.5) && mask.contains(&0.0));
        }
        let none = generate_synthetic(&SyntheticScenario { frame_count: 0, ..small() }).unwrap();
        assert!(none.frames.is_empty() && none.images.is_empty());
    }
}
