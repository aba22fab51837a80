//! Dataset directories:
//!
//! ```text
//! model.gbm            mesh blendshape model
//! frames.jsonl         one FrameParams per line
//! images/%06d.png      8-bit sRGB targets
//! masks/%06d.png       8-bit foreground masks
//! gt_avatar.gba        ground truth (synthetic datasets only)
//! scenario.json        generator settings (synthetic datasets only)
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::anim::gba::save_avatar;
use crate::anim::{read_frames, write_frames, FrameParams};
use crate::error::{Error, Result};
use crate::mesh::io::{load_mesh_model, save_mesh_model};
use crate::mesh::MeshBlendshapeModel;
use crate::render::image::{load_mask, load_png, save_mask, save_png};
use crate::synth::{SyntheticDataset, SyntheticScenario};
use crate::train::TrainFrame;

pub const MODEL_FILE: &str = "model.gbm";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const GT_AVATAR_FILE: &str = "gt_avatar.gba";
pub const SCENARIO_FILE: &str = "scenario.json";

pub fn image_name(i: usize) -> String {
    format!("images/{i:06}.png")
}

pub fn mask_name(i: usize) -> String {
    format!("masks/{i:06}.png")
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes a generated dataset into `dir` (created if missing).
pub fn write_synthetic(dir: &Path, scenario: &SyntheticScenario, data: &SyntheticDataset) -> Result<()> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("masks"))?;
    save_mesh_model(&data.model, &dir.join(MODEL_FILE))?;
    save_avatar(&data.ground_truth, &dir.join(GT_AVATAR_FILE))?;
    let spec = serde_json::to_string_pretty(scenario)?;
    let p = dir.join(SCENARIO_FILE);
    std::fs::write(&p, spec).map_err(|e| Error::io(&p, e))?;
    let frames: Vec<FrameParams> = data
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| FrameParams {
            image_path: Some(image_name(i)),
            mask_path: Some(mask_name(i)),
            ..f.clone()
        })
        .collect();
    data.images
        .par_iter()
        .zip(&data.masks)
        .enumerate()
        .try_for_each(|(i, (img, mask))| {
            save_png(&dir.join(image_name(i)), img.width, img.height, &img.data)?;
            save_mask(&dir.join(mask_name(i)), img.width, img.height, mask)
        })?;
    write_frames(&dir.join(FRAMES_FILE), &frames)
}

pub struct Dataset {
    pub dir: PathBuf,
    pub model: MeshBlendshapeModel,
    pub frames: Vec<FrameParams>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let model = load_mesh_model(&dir.join(MODEL_FILE))?;
        let frames = read_frames(&dir.join(FRAMES_FILE))?;
        for (i, f) in frames.iter().enumerate() {
            f.validate(model.blendshape_count(), model.joint_count())
                .map_err(|e| Error::invalid(format!("{FRAMES_FILE}:{}", i + 1), e.to_string()))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            model,
            frames,
        })
    }

    /// Loads targets for `range` of the frames. A frame without a mask
    /// path gets an all-foreground mask.
    pub fn load_targets(&self, range: std::ops::Range<usize>) -> Result<Vec<TrainFrame>> {
        self.frames[range]
            .par_iter()
            .map(|f| {
                let rel = f
                    .image_path
                    .as_ref()
                    .ok_or_else(|| Error::invalid("image_path", "frame has no target image"))?;
                let img = load_png(&self.dir.join(rel))?;
                let (w, h) = (f.camera.width, f.camera.height);
                if (img.width, img.height) != (w, h) {
                    return Err(Error::Dimension(format!(
                        "{rel} is {}×{}, its camera is {w}×{h}",
                        img.width, img.height
                    )));
                }
                let mask = match &f.mask_path {
                    Some(m) => {
                        let (mw, mh, data) = load_mask(&self.dir.join(m))?;
                        if (mw, mh) != (w, h) {
                            return Err(Error::Dimension(format!("{m} is {mw}×{mh}, expected {w}×{h}")));
                        }
                        data
                    }
                    None => vec![1.0; (w * h) as usize],
                };
                Ok(TrainFrame {
                    psi: f.psi.clone(),
                    pose: f.theta.clone(),
                    camera: f.camera.clone(),
                    image: img.data,
                    mask,
                })
            })
            .collect()
    }
}
