//! Per-frame animation parameters and their JSON-lines streams.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Pose;
use crate::error::{Error, Result};
use crate::render::Camera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameParams {
    pub psi: Vec<f64>,
    pub theta: Pose,
    pub camera: Camera,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

impl FrameParams {
    pub fn validate(&self, k: usize, j: usize) -> Result<()> {
        if self.psi.len() != k {
            return Err(Error::Dimension(format!(
                "psi has {} entries, expected K = {k}",
                self.psi.len()
            )));
        }
        if self.psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("psi".into()));
        }
        self.theta.validate(j)?;
        self.camera.validate()
    }
}

/// Reads one [`FrameParams`] per non-empty line.
pub fn read_frames(path: &Path) -> Result<Vec<FrameParams>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameParams = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}", path.display(), n + 1), e.to_string())
        })?;
        out.push(frame);
    }
    Ok(out)
}

pub fn write_frames(path: &Path, frames: &[FrameParams]) -> Result<()> {
    let mut buf = Vec::new();
    for f in frames {
        serde_json::to_writer(&mut buf, f)?;
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
