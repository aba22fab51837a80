//! Joint optimization of `B_0`, `Δ̂G` and `B_m` against posed frames.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod density;
pub mod gradcheck;
pub mod loss;
pub mod step;

pub use adam::AdamMoments;
pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
pub use config::{LearningRates, OptimizerConfig, TrainConfig};
pub use density::{apply_density, plan_density, DensityOps, DensityReport, DensityStats};
pub use gradcheck::{check_gradients, ClassCheck, GradientReport};
pub use loss::{loss_alpha, loss_mouth_reg, loss_rgb, LossBreakdown, LossWeights};
pub use step::{evaluate, evaluate_loss, AvatarGrads, Evaluation, TrainFrame};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anim::BlendshapeAvatar;
use crate::error::{Error, Result};
use crate::eval::self_reenact_eval;
use crate::mesh::{DisplacementGrid, MeshBlendshapeModel};

/// Adam moments for every trainable tensor plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub b0: AdamMoments,
    pub hat: Vec<AdamMoments>,
    pub mouth: AdamMoments,
}

impl OptimizerState {
    pub fn new(avatar: &BlendshapeAvatar) -> Self {
        Self {
            step: 0,
            b0: AdamMoments::zeros_like(&avatar.b0),
            hat: avatar
                .reparam
                .delta_hat
                .iter()
                .map(AdamMoments::zeros_like)
                .collect(),
            mouth: AdamMoments::zeros_like(&avatar.mouth),
        }
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub l_rgb: f64,
    pub l_alpha: f64,
    pub l_reg: f64,
    pub total: f64,
    /// Mean held-out PSNR, only on evaluation iterations.
    pub heldout_psnr: Option<f64>,
}

/// Radius used to decide between cloning and splitting: the half diagonal
/// of the mesh bounding box, padded by 10%.
pub fn scene_extent(model: &MeshBlendshapeModel) -> f64 {
    let (lo, hi) = model.bounding_box();
    1.1 * 0.5 * (hi - lo).norm()
}

pub struct Trainer<'m> {
    model: &'m MeshBlendshapeModel,
    grid: Option<DisplacementGrid>,
    pub avatar: BlendshapeAvatar,
    pub opt: OptimizerState,
    pub stats: DensityStats,
    pub cfg: TrainConfig,
    pub(crate) rng: ChaCha8Rng,
    pub iteration: usize,
    pub density_events: Vec<DensityReport>,
    scene_extent: f64,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m MeshBlendshapeModel, mut avatar: BlendshapeAvatar, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        avatar.validate()?;
        if avatar.joint_count() != model.joint_count()
            || avatar.blendshape_count() != model.blendshape_count()
        {
            return Err(Error::Dimension(format!(
                "avatar (K={}, J={}) does not match model (K={}, J={})",
                avatar.blendshape_count(),
                avatar.joint_count(),
                model.blendshape_count(),
                model.joint_count()
            )));
        }
        // Checkpoints store the skeleton as f32; start from that precision so
        // resumed runs continue bit-identically.
        avatar.skeleton.quantize_f32()?;
        Ok(Self {
            model,
            grid: None,
            opt: OptimizerState::new(&avatar),
            stats: DensityStats::new(avatar.len()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            iteration: 0,
            density_events: Vec::new(),
            scene_extent: scene_extent(model),
            avatar,
            cfg,
        })
    }

    pub fn model(&self) -> &MeshBlendshapeModel {
        self.model
    }

    fn grid(&mut self) -> Result<&DisplacementGrid> {
        if self.grid.is_none() {
            self.grid = Some(DisplacementGrid::build(self.model, self.cfg.grid_resolution)?);
        }
        Ok(self.grid.as_ref().expect("built above"))
    }

    /// Samples one frame uniformly, applies one Adam update to all
    /// trainable tensors and runs density control when scheduled.
    pub fn step(&mut self, frames: &[TrainFrame]) -> Result<LossBreakdown> {
        if frames.is_empty() {
            return Err(Error::invalid("frames", "training needs at least one frame"));
        }
        let frame = &frames[self.rng.gen_range(0..frames.len())];
        let ev = evaluate(&self.avatar, frame, &self.cfg, true)?;
        self.opt.step += 1;
        let t = self.opt.step;
        let oc = &self.cfg.optimizer;
        self.opt.b0.step(&mut self.avatar.b0, &ev.grads.b0, oc, t);
        for ((m, p), g) in self
            .opt
            .hat
            .iter_mut()
            .zip(self.avatar.reparam.delta_hat.iter_mut())
            .zip(&ev.grads.hat)
        {
            m.step(p, g, oc, t);
        }
        self.opt.mouth.step(&mut self.avatar.mouth, &ev.grads.mouth, oc, t);
        self.stats
            .accumulate(&ev.screen, &ev.visible, frame.camera.width, frame.camera.height);
        self.iteration += 1;
        let it = self.iteration;
        if it >= oc.densify_from && it <= oc.densify_until() && it % oc.densify_interval == 0 {
            self.densify()?;
        }
        Ok(ev.loss)
    }

    /// Runs one density-control event from the accumulated statistics and
    /// resets them.
    pub fn densify(&mut self) -> Result<DensityReport> {
        let ops = plan_density(&self.avatar, &self.stats, &self.cfg.optimizer, self.scene_extent);
        self.apply_ops(&ops)
    }

    /// Applies explicit clone/split/prune operations.
    pub fn apply_ops(&mut self, ops: &DensityOps) -> Result<DensityReport> {
        self.grid()?;
        let grid = self.grid.as_ref().expect("built above");
        let report = apply_density(
            &mut self.avatar,
            &mut self.opt,
            ops,
            &self.cfg.optimizer,
            self.model,
            grid,
            &mut self.rng,
        )?;
        if report.after != report.before || report.pruned > 0 {
            log::info!(
                "iteration {}: density control {} -> {} gaussians (clone {}, split {}, prune {})",
                self.iteration,
                report.before,
                report.after,
                report.cloned,
                report.split,
                report.pruned
            );
        }
        self.stats = DensityStats::new(self.avatar.len());
        self.density_events.push(report);
        Ok(report)
    }

    /// Mean PSNR over the first `eval_frames` held-out frames.
    pub fn heldout_psnr(&self, heldout: &[TrainFrame]) -> Result<f64> {
        let n = self.cfg.eval_frames.min(heldout.len());
        let r = self_reenact_eval(&self.avatar, &heldout[..n], self.cfg.background, self.cfg.tile_size)?;
        Ok(r.mean_psnr)
    }

    /// Trains until `optimizer.iterations`, reporting one [`LogRow`] per
    /// step. With a checkpoint path, a checkpoint is written every
    /// `checkpoint_interval` steps and at the end.
    pub fn run(
        &mut self,
        frames: &[TrainFrame],
        heldout: &[TrainFrame],
        checkpoint: Option<&Path>,
        mut on_row: impl FnMut(&LogRow) -> Result<()>,
    ) -> Result<()> {
        let total = self.cfg.optimizer.iterations;
        while self.iteration < total {
            let loss = self.step(frames)?;
            let it = self.iteration;
            let eval_now = !heldout.is_empty()
                && self.cfg.eval_interval > 0
                && (it % self.cfg.eval_interval == 0 || it == total);
            let heldout_psnr = if eval_now {
                Some(self.heldout_psnr(heldout)?)
            } else {
                None
            };
            on_row(&LogRow {
                iteration: it,
                l_rgb: loss.rgb,
                l_alpha: loss.alpha,
                l_reg: loss.reg,
                total: loss.total,
                heldout_psnr,
            })?;
            if let Some(path) = checkpoint {
                let every = self.cfg.checkpoint_interval;
                if it == total || (every > 0 && it % every == 0) {
                    save_checkpoint(self, path)?;
                }
            }
        }
        Ok(())
    }

    /// Restores a trainer from a checkpoint written by [`save_checkpoint`].
    pub fn resume(model: &'m MeshBlendshapeModel, path: &Path, cfg: TrainConfig) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let mut t = Self::new(model, ck.avatar, cfg)?;
        t.opt = ck.opt;
        t.stats = ck.stats;
        t.iteration = ck.iteration;
        t.rng = ck.rng;
        t.opt_check()?;
        Ok(t)
    }

    fn opt_check(&self) -> Result<()> {
        let n = self.avatar.len();
        let ok = self.opt.b0.m.len() == n
            && self.opt.hat.len() == self.avatar.blendshape_count()
            && self.opt.hat.iter().all(|h| h.m.len() == n)
            && self.opt.mouth.m.len() == self.avatar.mouth_len()
            && self.stats.count.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("optimizer state disagrees with avatar".into()))
        }
    }
}

/// Columns of the metrics log.
pub const LOG_HEADER: [&str; 6] = ["iteration", "l_rgb", "l_alpha", "l_reg", "total", "heldout_psnr"];

/// Writes the metrics log as CSV; the header is written even without rows.
pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(LOG_HEADER).map_err(|e| Error::invalid("csv", e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid("csv", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    crate::container::write_atomic(path, &bytes)
}
