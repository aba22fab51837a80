//! Blue-noise sampling of the neutral mesh surface by dart throwing.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::{triangle_area, MeshBlendshapeModel, SurfaceAttachment};

/// Failed candidates allowed per requested sample before giving up.
const ATTEMPTS_PER_SAMPLE: usize = 60;

#[derive(Clone, Debug)]
pub struct SurfaceSamples {
    pub positions: Vec<Vec3>,
    pub attachments: Vec<SurfaceAttachment>,
    /// Minimum separation enforced between samples.
    pub radius: f64,
    /// Set when the attempt budget ran out before reaching the target.
    pub saturated: bool,
}

/// Poisson-disk radius for `target` samples over area `area`.
pub fn poisson_radius(area: f64, target: usize) -> f64 {
    (area / (2.0 * 3f64.sqrt() * target as f64)).sqrt()
}

/// Hash grid of points with cell size equal to the query radius.
pub(crate) struct PointHash {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<u32>>,
}

impl PointHash {
    pub fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    pub fn insert(&mut self, p: &Vec3, id: u32) {
        self.buckets.entry(self.key(p)).or_default().push(id);
    }

    /// Calls `f` with every stored id in cells within `ring` cells of `p`.
    pub fn for_each_near(&self, p: &Vec3, ring: i64, mut f: impl FnMut(u32)) {
        let k = self.key(p);
        for dz in -ring..=ring {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        b.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }
}

pub fn poisson_sample_surface(
    model: &MeshBlendshapeModel,
    target: usize,
    seed: u64,
) -> Result<SurfaceSamples> {
    if target == 0 {
        return Err(Error::invalid("target_count", "must be at least 1"));
    }
    let areas: Vec<f64> = (0..model.triangle_count())
        .map(|t| triangle_area(&model.triangle(t)))
        .collect();
    let total: f64 = areas.iter().sum();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc / total);
    }
    let radius = poisson_radius(total, target);
    let r2 = radius * radius;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hash = PointHash::new(radius);
    let mut positions: Vec<Vec3> = Vec::with_capacity(target);
    let mut attachments = Vec::with_capacity(target);
    let budget = ATTEMPTS_PER_SAMPLE * target;
    let mut attempts = 0;
    while positions.len() < target && attempts < budget {
        attempts += 1;
        let u: f64 = rng.gen();
        let t = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        let s = rng.gen::<f64>().sqrt();
        let v: f64 = rng.gen();
        let bary = [1.0 - s, s * (1.0 - v), s * v];
        let att = SurfaceAttachment {
            triangle: t as u32,
            barycentric: bary,
        };
        let p = model.attachment_point(&att);
        let mut ok = true;
        hash.for_each_near(&p, 1, |id| {
            if ok && (positions[id as usize] - p).norm_squared() < r2 {
                ok = false;
            }
        });
        if ok {
            hash.insert(&p, positions.len() as u32);
            positions.push(p);
            attachments.push(att);
        }
    }
    let saturated = positions.len() < target;
    if saturated {
        log::warn!(
            "poisson sampling saturated at {} of {} samples (radius {radius:e})",
            positions.len(),
            target
        );
    }
    Ok(SurfaceSamples {
        positions,
        attachments,
        radius,
        saturated,
    })
}

/// Root-mean-square distance from each point to its (up to) three nearest
/// neighbours; `fallback` for isolated points.
pub fn mean_neighbor_distance(points: &[Vec3], fallback: f64) -> Vec<f64> {
    if points.len() < 2 {
        return vec![fallback; points.len()];
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let vol = ext.x.max(1e-12) * ext.y.max(1e-12) * ext.z.max(1e-12);
    // Roughly a few points per cell for a surface sampling.
    let area_guess = (ext.x * ext.y + ext.y * ext.z + ext.x * ext.z).max(vol.powf(2.0 / 3.0));
    let cell = (area_guess / points.len() as f64).sqrt().max(1e-12) * 2.0;
    let mut hash = PointHash::new(cell);
    for (i, p) in points.iter().enumerate() {
        hash.insert(p, i as u32);
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut ring = 1;
            loop {
                let mut best = [f64::INFINITY; 3];
                hash.for_each_near(p, ring, |j| {
                    if j as usize != i {
                        let d = (points[j as usize] - p).norm_squared();
                        if d < best[2] {
                            best[2] = d;
                            best.sort_by(f64::total_cmp);
                        }
                    }
                });
                // Points within `ring·cell` are guaranteed to be found.
                let reach = ring as f64 * cell;
                let found = best.iter().filter(|d| d.is_finite()).count();
                let enough = found == 3 && best[2] <= reach * reach;
                if enough || ring as usize > points.len() || found == points.len() - 1 {
                    let vals: Vec<f64> = best.iter().copied().filter(|d| d.is_finite()).collect();
                    if vals.is_empty() {
                        return fallback;
                    }
                    return (vals.iter().sum::<f64>() / vals.len() as f64).sqrt();
                }
                ring *= 2;
            }
        })
        .collect()
}
