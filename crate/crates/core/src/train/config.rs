use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LossWeights;
use crate::error::{Error, Result};
use crate::gaussians::PropertyClass;
use crate::init::MouthVolume;
use crate::render::raster::TILE_SIZES;

/// One Adam step size per property class; delta parameters use the rate of
/// the class they modify.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 3.2e-7,
            opacity: 5e-5,
            scale: 5e-4,
            rotation: 1e-4,
            sh: 1.25e-3,
        }
    }
}

impl LearningRates {
    pub fn get(&self, class: PropertyClass) -> f64 {
        match class {
            PropertyClass::Position => self.position,
            PropertyClass::Opacity => self.opacity,
            PropertyClass::Scale => self.scale,
            PropertyClass::Rotation => self.rotation,
            PropertyClass::Sh => self.sh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rates: LearningRates,
    /// Multiplier on the SH rate for bands above 0 (1 keeps a single rate).
    pub sh_rest_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    /// Density control runs every `densify_interval` steps from
    /// `densify_from` until `densify_until_fraction · iterations`.
    pub densify_interval: usize,
    pub densify_from: usize,
    pub densify_until_fraction: f64,
    /// Average screen-space positional gradient (NDC units) above which a
    /// Gaussian is cloned or split.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Gaussians whose largest scale exceeds this fraction of the scene
    /// extent are split rather than cloned.
    pub percent_dense: f64,
    /// Offspring scale divisor for splits.
    pub split_scale_divisor: f64,
    /// Density control never grows the avatar beyond this many Gaussians.
    pub max_gaussians: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rates: LearningRates::default(),
            sh_rest_lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            iterations: 20_000,
            densify_interval: 100,
            densify_from: 500,
            densify_until_fraction: 0.5,
            grad_threshold: 0.65,
            prune_opacity: 0.005,
            percent_dense: 0.01,
            split_scale_divisor: 1.6,
            max_gaussians: 200_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.learning_rates;
        for (name, v) in [
            ("learning_rates.position", lr.position),
            ("learning_rates.opacity", lr.opacity),
            ("learning_rates.scale", lr.scale),
            ("learning_rates.rotation", lr.rotation),
            ("learning_rates.sh", lr.sh),
            ("sh_rest_lr_scale", self.sh_rest_lr_scale),
            ("eps", self.eps),
            ("split_scale_divisor", self.split_scale_divisor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta", "Adam betas must lie in [0, 1)"));
        }
        if self.densify_interval == 0 {
            return Err(Error::invalid("densify_interval", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.densify_until_fraction) {
            return Err(Error::invalid("densify_until_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn densify_until(&self) -> usize {
        (self.densify_until_fraction * self.iterations as f64) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub mouth_volume: MouthVolume,
    pub seed: u64,
    pub tile_size: u32,
    /// Composite background (black: the masked-frame convention).
    pub background: [f64; 3],
    /// Steps between checkpoints (0 disables periodic checkpoints).
    pub checkpoint_interval: usize,
    /// Steps between held-out PSNR evaluations (0 disables them).
    pub eval_interval: usize,
    /// Held-out frames used by each periodic evaluation.
    pub eval_frames: usize,
    /// The last `holdout_frames` frames of a dataset are never trained on.
    pub holdout_frames: usize,
    /// Resolution of the displacement grid used by density control.
    pub grid_resolution: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            loss: LossWeights::default(),
            mouth_volume: MouthVolume::default(),
            seed: 0,
            tile_size: 16,
            background: [0.0; 3],
            checkpoint_interval: 5000,
            eval_interval: 1000,
            eval_frames: 10,
            holdout_frames: 0,
            grid_resolution: crate::mesh::grid::DEFAULT_RESOLUTION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.loss.validate()?;
        if !TILE_SIZES.contains(&self.tile_size) {
            return Err(Error::invalid(
                "tile_size",
                format!("{} is not one of {TILE_SIZES:?}", self.tile_size),
            ));
        }
        if !(self.mouth_volume.radius > 0.0 && self.mouth_volume.half_length > 0.0) {
            return Err(Error::invalid("mouth_volume", "radius and half_length must be positive"));
        }
        if self.background.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("background".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig =
            serde_json::from_str(r#"{"optimizer": {"iterations": 10}}"#).unwrap();
        assert_eq!(partial.optimizer.iterations, 10);
        assert_eq!(partial.optimizer.learning_rates.sh, 1.25e-3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.optimizer.learning_rates.scale = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.tile_size = 7;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.loss.lambda2 = -1.0;
        assert!(c.validate().is_err());
    }
}
