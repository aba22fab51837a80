//! Regular grid of precomputed closest-surface attachments.
//!
//! Each grid point stores the attachment of its nearest point on `M_0`
//! (16 bytes per point). Skin weights and displacement magnitudes are
//! derived from the attachments at query time and blended trilinearly.

use rayon::prelude::*;

use super::{MeshBlendshapeModel, SurfaceAttachment};
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const DEFAULT_RESOLUTION: usize = 64;
pub const MIN_RESOLUTION: usize = 8;

/// Margin added on each side of the mesh bounding box, as a fraction of
/// the largest box extent.
const MARGIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cell {
    triangle: u32,
    barycentric: [f32; 3],
}

#[derive(Clone, Debug)]
pub struct DisplacementGrid {
    resolution: usize,
    lo: Vec3,
    hi: Vec3,
    cells: Vec<Cell>,
}

/// Interpolated per-point values returned by [`DisplacementGrid::query`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSample {
    pub weights: Vec<f64>,
    pub d: Vec<f64>,
}

impl DisplacementGrid {
    pub fn build(model: &MeshBlendshapeModel, resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::invalid(
                "grid resolution",
                format!("{resolution} is below the minimum of {MIN_RESOLUTION}"),
            ));
        }
        let (blo, bhi) = model.bounding_box();
        let margin = (bhi - blo).max() * MARGIN;
        let lo = blo - Vec3::repeat(margin);
        let hi = bhi + Vec3::repeat(margin);
        let r = resolution;
        let mut grid = Self {
            resolution: r,
            lo,
            hi,
            cells: Vec::new(),
        };
        let mut cells = vec![
            Cell {
                triangle: 0,
                barycentric: [0.0; 3]
            };
            r * r * r
        ];
        cells
            .par_chunks_mut(r * r)
            .enumerate()
            .for_each(|(iz, slab)| {
                for iy in 0..r {
                    for ix in 0..r {
                        let p = grid.point(ix, iy, iz);
                        let a = model.closest_attachment(&p);
                        slab[iy * r + ix] = Cell {
                            triangle: a.triangle,
                            barycentric: a.barycentric.map(|b| b as f32),
                        };
                    }
                }
            });
        grid.cells = cells;
        Ok(grid)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.lo, self.hi)
    }

    /// Position of grid point `(ix, iy, iz)`.
    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let s = (self.resolution - 1) as f64;
        let t = Vec3::new(ix as f64 / s, iy as f64 / s, iz as f64 / s);
        self.lo + (self.hi - self.lo).component_mul(&t)
    }

    pub fn attachment(&self, ix: usize, iy: usize, iz: usize) -> SurfaceAttachment {
        let r = self.resolution;
        let c = self.cells[(iz * r + iy) * r + ix];
        SurfaceAttachment {
            triangle: c.triangle,
            barycentric: c.barycentric.map(f64::from),
        }
    }

    /// Trilinear blend of the eight surrounding grid points' skin weights and
    /// displacement magnitudes. Points outside the bounds are clamped.
    pub fn query(&self, model: &MeshBlendshapeModel, p: &Vec3) -> GridSample {
        let mut s = GridSample {
            weights: vec![0.0; model.joint_count()],
            d: vec![0.0; model.blendshape_count()],
        };
        self.query_into(model, p, &mut s.weights, &mut s.d);
        s
    }

    pub fn query_into(
        &self,
        model: &MeshBlendshapeModel,
        p: &Vec3,
        weights: &mut [f64],
        d: &mut [f64],
    ) {
        let r = self.resolution;
        let s = (r - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let t = ((p[a] - self.lo[a]) / (self.hi[a] - self.lo[a]) * s).clamp(0.0, s);
            let rounded = t.round();
            // Snap to the grid point when the query lies on it up to rounding.
            let t = if (t - rounded).abs() < 1e-9 { rounded } else { t };
            let i = (t.floor() as usize).min(r - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        weights.fill(0.0);
        d.fill(0.0);
        let mut w_tmp = vec![0.0; weights.len()];
        let mut d_tmp = vec![0.0; d.len()];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let att = self.attachment(base[0] + off[0], base[1] + off[1], base[2] + off[2]);
            model.interpolated_skin_weights_into(&att, &mut w_tmp);
            model.displacement_magnitudes_into(&att, &mut d_tmp);
            for (o, x) in weights.iter_mut().zip(&w_tmp) {
                *o += w * x;
            }
            for (o, x) in d.iter_mut().zip(&d_tmp) {
                *o += w * x;
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            for x in weights.iter_mut() {
                *x /= sum;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::test_models::*;
    use crate::mesh::{MeshBlendshapeModel, MeshParts};

    #[test]
    fn rejects_small_resolution() {
        assert!(DisplacementGrid::build(&unit_square(1), 4).is_err());
    }

    #[test]
    fn bounds_have_margin() {
        let m = random_blob(2, 1);
        let g = DisplacementGrid::build(&m, 8).unwrap();
        let (lo, hi) = g.bounds();
        let (blo, bhi) = m.bounding_box();
        let ext = bhi - blo;
        for a in 0..3 {
            assert!(blo[a] - lo[a] >= 0.05 * ext[a]);
            assert!(hi[a] - bhi[a] >= 0.05 * ext[a]);
        }
    }

    #[test]
    fn grid_point_query_matches_exact_attachment() {
        let m = random_blob(4, 2);
        let g = DisplacementGrid::build(&m, 9).unwrap();
        for (ix, iy, iz) in [(0, 0, 0), (3, 4, 5), (8, 8, 8), (4, 4, 4)] {
            let p = g.point(ix, iy, iz);
            let exact = m.closest_attachment(&p);
            let s = g.query(&m, &p);
            let w = m.interpolated_skin_weights(&exact);
            for (a, b) in s.weights.iter().zip(&w) {
                assert!((a - b).abs() < 1e-6);
            }
            for k in 0..2 {
                let d = m.displacement_magnitude(&exact, k).unwrap();
                assert!((s.d[k] - d).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_triangle_grid_attaches_everything_to_it() {
        let m = MeshBlendshapeModel::new(MeshParts {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2]],
            deltas: vec![[0.0; 3]; 3],
            blendshape_count: 1,
            skeleton: single_joint(),
            skin_weights: vec![1.0; 3],
        })
        .unwrap();
        let g = DisplacementGrid::build(&m, 8).unwrap();
        assert!(g.cells.iter().all(|c| c.triangle == 0));
    }

    #[test]
    fn weights_sum_to_one_even_outside() {
        let m = random_blob(6, 1);
        let g = DisplacementGrid::build(&m, 8).unwrap();
        for p in [Vec3::new(5.0, -7.0, 0.1), Vec3::new(0.1, 0.2, 0.3)] {
            let s = g.query(&m, &p);
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}
