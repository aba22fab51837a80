//! Front-to-back compositing: a brute-force per-pixel reference and a
//! tile-binned fast path that share one per-pixel kernel.

use rayon::prelude::*;

use super::project::{project, Projection, Splat2D, MAX_ALPHA, MIN_ALPHA, MIN_TRANSMITTANCE};
use super::Camera;
use crate::error::{Error, Result};
use crate::gaussians::PosedGaussians;

pub const TILE_SIZES: [u32; 3] = [8, 16, 32];
pub const DEFAULT_TILE_SIZE: u32 = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// `H × W × 3` linear RGB.
    pub color: Vec<f64>,
    /// `H × W` accumulated opacity.
    pub alpha: Vec<f64>,
    /// Splats composited at each pixel.
    pub contributors: Vec<u32>,
}

impl RenderOutput {
    fn blank(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            color: vec![0.0; n * 3],
            alpha: vec![0.0; n],
            contributors: vec![0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.alpha.len()
    }
}

/// Per-pixel contribution of one splat: `(α, G)` or `None` when skipped.
#[inline]
pub(crate) fn splat_alpha(s: &Splat2D, px: f64, py: f64) -> Option<(f64, f64)> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
    if power < s.power_cut || power > 0.0 {
        return None;
    }
    let g = power.exp();
    let alpha = (s.opacity * g).min(MAX_ALPHA);
    if alpha < MIN_ALPHA {
        return None;
    }
    Some((alpha, g))
}

/// Composites `splats` (front to back) at pixel center `(px, py)`.
/// Returns color before the background term, final transmittance and the
/// number of contributing splats.
#[inline]
pub(crate) fn composite_pixel<'a>(
    splats: impl Iterator<Item = &'a Splat2D>,
    px: f64,
    py: f64,
) -> ([f64; 3], f64, u32) {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    let mut n = 0;
    for s in splats {
        let Some((alpha, _)) = splat_alpha(s, px, py) else {
            continue;
        };
        let w = alpha * t;
        for ch in 0..3 {
            c[ch] += w * s.color[ch];
        }
        t *= 1.0 - alpha;
        n += 1;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    (c, t, n)
}

fn check_background(background: [f64; 3]) -> Result<()> {
    if background.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("background".into()));
    }
    Ok(())
}

/// Brute force: every pixel walks the full depth-sorted splat list.
pub fn render_reference(
    g: &PosedGaussians,
    cam: &Camera,
    background: [f64; 3],
) -> Result<RenderOutput> {
    cam.validate()?;
    check_background(background)?;
    let proj = project(g, cam);
    Ok(composite_reference(&proj, cam, background))
}

pub(crate) fn composite_reference(
    proj: &Projection,
    cam: &Camera,
    background: [f64; 3],
) -> RenderOutput {
    let w = cam.width as usize;
    let mut out = RenderOutput::blank(cam.width, cam.height);
    out.color
        .par_chunks_mut(w * 3)
        .zip(out.alpha.par_chunks_mut(w))
        .zip(out.contributors.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((color, alpha), count))| {
            for x in 0..w {
                let (c, t, n) = composite_pixel(proj.splats.iter(), x as f64 + 0.5, y as f64 + 0.5);
                for ch in 0..3 {
                    color[x * 3 + ch] = c[ch] + t * background[ch];
                }
                alpha[x] = 1.0 - t;
                count[x] = n;
            }
        });
    out
}

/// Splat lists per screen tile, each in compositing order.
#[derive(Clone, Debug)]
pub struct TileBins {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    offsets: Vec<usize>,
    /// Positions into the projection's splat list.
    entries: Vec<u32>,
}

impl TileBins {
    /// Bins every splat into the tiles its cutoff ellipse's bounding box
    /// overlaps. Splats arrive sorted, so each tile list stays sorted.
    pub fn build(proj: &Projection, cam: &Camera, tile_size: u32) -> Result<Self> {
        if !TILE_SIZES.contains(&tile_size) {
            return Err(Error::invalid(
                "tile_size",
                format!("{tile_size} is not one of {TILE_SIZES:?}"),
            ));
        }
        let ts = tile_size as i64;
        let tiles_x = cam.width.div_ceil(tile_size);
        let tiles_y = cam.height.div_ceil(tile_size);
        let ranges: Vec<Option<[i64; 4]>> = proj
            .splats
            .par_iter()
            .map(|s| {
                let [ex, ey] = s.extent();
                // Pixel x is sampled at x + 0.5.
                let x0 = ((s.mean[0] - ex - 0.5).ceil() as i64).max(0);
                let x1 = ((s.mean[0] + ex - 0.5).floor() as i64).min(cam.width as i64 - 1);
                let y0 = ((s.mean[1] - ey - 0.5).ceil() as i64).max(0);
                let y1 = ((s.mean[1] + ey - 0.5).floor() as i64).min(cam.height as i64 - 1);
                (x0 <= x1 && y0 <= y1).then(|| [x0 / ts, x1 / ts, y0 / ts, y1 / ts])
            })
            .collect();
        let n_tiles = (tiles_x * tiles_y) as usize;
        let mut counts = vec![0usize; n_tiles + 1];
        for r in ranges.iter().flatten() {
            for ty in r[2]..=r[3] {
                for tx in r[0]..=r[1] {
                    counts[(ty * tiles_x as i64 + tx) as usize + 1] += 1;
                }
            }
        }
        for t in 0..n_tiles {
            counts[t + 1] += counts[t];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut entries = vec![0u32; offsets[n_tiles]];
        for (si, r) in ranges.iter().enumerate() {
            let Some(r) = r else { continue };
            for ty in r[2]..=r[3] {
                for tx in r[0]..=r[1] {
                    let t = (ty * tiles_x as i64 + tx) as usize;
                    entries[fill[t]] = si as u32;
                    fill[t] += 1;
                }
            }
        }
        Ok(Self {
            tile_size,
            tiles_x,
            tiles_y,
            offsets,
            entries,
        })
    }

    pub fn tile_count(&self) -> usize {
        (self.tiles_x * self.tiles_y) as usize
    }

    /// Splat positions (into the projection) binned to tile `t`.
    pub fn tile(&self, t: usize) -> &[u32] {
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Number of splats each tile processes.
    pub fn counts(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of tile `t`.
    pub fn tile_rect(&self, t: usize, cam: &Camera) -> [usize; 4] {
        let ts = self.tile_size as usize;
        let (tx, ty) = (t % self.tiles_x as usize, t / self.tiles_x as usize);
        [
            tx * ts,
            ((tx + 1) * ts).min(cam.width as usize),
            ty * ts,
            ((ty + 1) * ts).min(cam.height as usize),
        ]
    }
}

pub fn render_tiled(
    g: &PosedGaussians,
    cam: &Camera,
    background: [f64; 3],
    tile_size: u32,
) -> Result<RenderOutput> {
    cam.validate()?;
    check_background(background)?;
    let proj = project(g, cam);
    let bins = TileBins::build(&proj, cam, tile_size)?;
    Ok(composite_tiled(&proj, &bins, cam, background))
}

pub(crate) fn composite_tiled(
    proj: &Projection,
    bins: &TileBins,
    cam: &Camera,
    background: [f64; 3],
) -> RenderOutput {
    let w = cam.width as usize;
    let ts = bins.tile_size as usize;
    let mut out = RenderOutput::blank(cam.width, cam.height);
    // One band of tile rows per work item; bands own disjoint image rows.
    out.color
        .par_chunks_mut(ts * w * 3)
        .zip(out.alpha.par_chunks_mut(ts * w))
        .zip(out.contributors.par_chunks_mut(ts * w))
        .enumerate()
        .for_each(|(ty, ((color, alpha), count))| {
            for tx in 0..bins.tiles_x as usize {
                let t = ty * bins.tiles_x as usize + tx;
                let [x0, x1, y0, y1] = bins.tile_rect(t, cam);
                let list = bins.tile(t);
                for y in y0..y1 {
                    let row = (y - y0) * w;
                    for x in x0..x1 {
                        let (c, tr, n) = composite_pixel(
                            list.iter().map(|&si| &proj.splats[si as usize]),
                            x as f64 + 0.5,
                            y as f64 + 0.5,
                        );
                        let p = row + x;
                        for ch in 0..3 {
                            color[p * 3 + ch] = c[ch] + tr * background[ch];
                        }
                        alpha[p] = 1.0 - tr;
                        count[p] = n;
                    }
                }
            }
        });
    out
}
