//! Self-reenactment evaluation: render frames with their parameters and
//! compare against the stored images.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anim::BlendshapeAvatar;
use crate::error::Result;
use crate::metrics::{psnr, ssim};
use crate::render::{render_tiled, LinearImage};
use crate::train::TrainFrame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub frame_count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// SHA-256 over the evaluation settings, for comparing reports.
    pub config_digest: String,
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for f in &self.frames {
            w.serialize(f).map_err(|e| crate::Error::invalid("csv", e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::invalid("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Renders each frame (composited over `background`), rounds it to 8-bit
/// sRGB like a stored image, and scores it against the frame's image.
pub fn self_reenact_eval(
    avatar: &BlendshapeAvatar,
    frames: &[TrainFrame],
    background: [f64; 3],
    tile_size: u32,
) -> Result<EvalReport> {
    let mut out = Vec::with_capacity(frames.len());
    let mut hasher = Sha256::new();
    hasher.update(format!("bg={background:?};tile={tile_size};n={}", frames.len()));
    for (index, f) in frames.iter().enumerate() {
        f.validate(avatar)?;
        let g = avatar.synthesize(&f.psi, &f.pose)?;
        let r = render_tiled(&g, &f.camera, background, tile_size)?;
        let img = LinearImage::new(r.width, r.height, r.color)?.quantized();
        let (w, h) = (r.width as usize, r.height as usize);
        out.push(FrameMetrics {
            index,
            psnr: psnr(&img.data, &f.image)?,
            ssim: ssim(&img.data, &f.image, w, h, 3, None)?,
        });
        hasher.update(serde_json::to_vec(&f.camera)?);
    }
    let n = out.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: out.iter().map(|m| m.psnr).sum::<f64>() / n,
        mean_ssim: out.iter().map(|m| m.ssim).sum::<f64>() / n,
        frame_count: out.len(),
        frames: out,
        config_digest: hex::encode(hasher.finalize()),
    })
}
