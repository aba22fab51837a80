//! Image boundary: linear RGB in memory, 8-bit sRGB PNG and `f32` `.npy`
//! on disk.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use npyz::WriterBuilder;

use crate::error::{Error, Result};

/// Linear RGB image, `H × W × 3` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl LinearImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::Dimension(format!(
                "{} values for a {width}×{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Round trip through 8-bit sRGB, the precision of stored images.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| srgb_to_linear(linear_to_srgb8(v) as f64 / 255.0))
                .collect(),
        }
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb8(v: f64) -> u8 {
    (linear_to_srgb(v) * 255.0).round() as u8
}

fn rgb_buffer(width: u32, height: u32, rgb: &[f64]) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    if rgb.len() != width as usize * height as usize * 3 {
        return Err(Error::Dimension(format!(
            "{} values for a {width}×{height} RGB image",
            rgb.len()
        )));
    }
    let bytes = rgb.iter().map(|&v| linear_to_srgb8(v)).collect();
    Ok(ImageBuffer::from_raw(width, height, bytes).expect("length checked"))
}

pub fn save_png(path: &Path, width: u32, height: u32, rgb: &[f64]) -> Result<()> {
    rgb_buffer(width, height, rgb)?
        .save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// PNG bytes of a linear RGB image.
pub fn encode_png(width: u32, height: u32, rgb: &[f64]) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    rgb_buffer(width, height, rgb)?
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn load_png(path: &Path) -> Result<LinearImage> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| srgb_to_linear(b as f64 / 255.0))
        .collect();
    LinearImage::new(w, h, data)
}

/// Grayscale mask in `[0, 1]` (no transfer curve).
pub fn load_mask(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect()))
}

pub fn save_mask(path: &Path, width: u32, height: u32, mask: &[f64]) -> Result<()> {
    if mask.len() != width as usize * height as usize {
        return Err(Error::Dimension("mask size".into()));
    }
    let bytes = mask
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(width, height, bytes)
        .expect("length checked")
        .save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn write_npy(path: &Path, shape: &[u64], data: &[f64]) -> Result<()> {
    if shape.iter().product::<u64>() as usize != data.len() {
        return Err(Error::Dimension(format!("shape {shape:?} for {} values", data.len())));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(shape)
        .writer(BufWriter::new(f))
        .begin_nd()
        .map_err(|e| Error::io(path, e))?;
    w.extend(data.iter().map(|&v| v as f32))
        .map_err(|e| Error::io(path, e))?;
    w.finish().map_err(|e| Error::io(path, e))
}

pub fn read_npy(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let npy = npyz::NpyFile::new(std::io::BufReader::new(f)).map_err(|e| Error::io(path, e))?;
    let shape = npy.shape().to_vec();
    let data: Vec<f32> = npy.into_vec().map_err(|e| Error::io(path, e))?;
    Ok((shape, data.into_iter().map(f64::from).collect()))
}
