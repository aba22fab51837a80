//! Replay of random parameter streams through the runtime avatar, timing
//! the blend, pose and render stages.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anim::{Pose, RuntimeAvatar};
use crate::error::{Error, Result};
use crate::gaussians::PosedGaussians;
use crate::math::Vec3;
use crate::render::{render_tiled, Camera};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Blend,
    Pose,
    Render,
    /// Blend then pose, without rendering.
    Update,
    All,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blend" => Ok(Stage::Blend),
            "pose" => Ok(Stage::Pose),
            "render" => Ok(Stage::Render),
            "update" => Ok(Stage::Update),
            "all" => Ok(Stage::All),
            _ => Err(Error::invalid(
                "stage",
                format!("`{s}` is not blend, pose, update, render or all"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    /// `1 / mean`.
    pub per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub k: usize,
    pub j: usize,
    pub frames: usize,
    pub threads: usize,
    pub width: u32,
    pub height: u32,
    pub stages: Vec<StageTiming>,
    /// Blend followed by pose, per second.
    pub model_updates_per_second: Option<f64>,
    /// Multiply-adds per blend (`N · P · K`).
    pub blend_macs: u64,
}

impl BenchReport {
    pub fn stage(&self, s: Stage) -> Option<&StageTiming> {
        self.stages.iter().find(|t| t.stage == s)
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "N={} K={} J={} frames={} threads={}\n",
            self.n, self.k, self.j, self.frames, self.threads
        );
        for t in &self.stages {
            out += &format!(
                "{:<7} mean {:>10.1} us  p50 {:>10.1} us  p99 {:>10.1} us  {:>9.1}/s\n",
                format!("{:?}", t.stage).to_lowercase(),
                t.mean_us,
                t.p50_us,
                t.p99_us,
                t.per_second
            );
        }
        if let Some(u) = self.model_updates_per_second {
            out += &format!("model updates (blend+pose): {u:.1}/s\n");
        }
        out
    }
}

fn timing(stage: Stage, mut us: Vec<f64>) -> StageTiming {
    us.sort_by(f64::total_cmp);
    let n = us.len().max(1);
    let mean = us.iter().sum::<f64>() / n as f64;
    let pick = |q: f64| us.get(((q * (n - 1) as f64).round() as usize).min(n - 1)).copied().unwrap_or(0.0);
    StageTiming {
        stage,
        mean_us: mean,
        p50_us: pick(0.5),
        p99_us: pick(0.99),
        per_second: if mean > 0.0 { 1e6 / mean } else { f64::INFINITY },
    }
}

/// Random expression and pose stream in the ranges a tracker produces.
pub fn random_stream(k: usize, j: usize, frames: usize, seed: u64) -> Vec<(Vec<f32>, Pose)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            let psi = (0..k).map(|_| rng.gen_range(-1.0f32..1.5)).collect();
            let mut pose = Pose::identity(j);
            for r in &mut pose.joints {
                *r = [0; 3].map(|_| rng.gen_range(-0.2..0.2));
            }
            (psi, pose)
        })
        .collect()
}

/// Times `frames` updates (after one warm-up) of the selected stage(s).
/// Rendering uses an orbit camera looking at `target` from `distance`.
pub fn run_bench(
    avatar: &RuntimeAvatar,
    frames: usize,
    stage: Stage,
    seed: u64,
    (width, height): (u32, u32),
    target: Vec3,
    distance: f64,
) -> Result<BenchReport> {
    if frames == 0 {
        return Err(Error::invalid("frames", "must be at least 1"));
    }
    let stream = random_stream(avatar.blendshape_count(), avatar.joint_count(), frames + 1, seed);
    let cam = Camera::orbit(target, 0.0, 0.0, distance, 0.6, width, height);
    let (want_blend, want_pose, want_render) = match stage {
        Stage::Blend => (true, false, false),
        Stage::Pose => (false, true, false),
        Stage::Render => (false, false, true),
        Stage::Update => (true, true, false),
        Stage::All => (true, true, true),
    };
    let mut blended = Vec::new();
    let mut posed = PosedGaussians::with_capacity(avatar.len(), avatar.sh_degree());
    let mut mouth = PosedGaussians::with_capacity(avatar.mouth_len(), avatar.sh_degree());
    let (mut tb, mut tp, mut tr) = (Vec::new(), Vec::new(), Vec::new());
    let mut all = PosedGaussians::with_capacity(0, avatar.sh_degree());
    for (f, (psi, pose)) in stream.iter().enumerate() {
        let warm = f == 0;
        let t = Instant::now();
        avatar.blend_into(psi, &mut blended)?;
        let b = t.elapsed().as_secs_f64() * 1e6;
        let t = Instant::now();
        avatar.pose_into(&blended, pose, &mut posed)?;
        let p = t.elapsed().as_secs_f64() * 1e6;
        if want_render {
            avatar.pose_mouth_into(pose, &mut mouth)?;
            all.clone_from(&posed);
            all.extend(&mouth);
            let t = Instant::now();
            render_tiled(&all, &cam, [0.0; 3], crate::render::DEFAULT_TILE_SIZE)?;
            if !warm {
                tr.push(t.elapsed().as_secs_f64() * 1e6);
            }
        }
        if !warm {
            tb.push(b);
            tp.push(p);
        }
    }
    let mut stages = Vec::new();
    let mut updates = None;
    if want_blend {
        stages.push(timing(Stage::Blend, tb.clone()));
    }
    if want_pose {
        stages.push(timing(Stage::Pose, tp.clone()));
    }
    if want_blend && want_pose {
        let both: Vec<f64> = tb.iter().zip(&tp).map(|(a, b)| a + b).collect();
        updates = Some(timing(Stage::All, both).per_second);
    }
    if want_render {
        stages.push(timing(Stage::Render, tr));
    }
    Ok(BenchReport {
        n: avatar.len(),
        k: avatar.blendshape_count(),
        j: avatar.joint_count(),
        frames,
        threads: rayon::current_num_threads(),
        width,
        height,
        stages,
        model_updates_per_second: updates,
        blend_macs: (avatar.len() * avatar.params_per_gaussian() * avatar.blendshape_count()) as u64,
    })
}
