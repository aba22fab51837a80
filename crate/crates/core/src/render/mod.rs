//! Gaussian splatting: projection, depth-ordered compositing and its
//! analytic backward pass.

pub mod backward;
pub mod camera;
pub mod image;
pub mod project;
pub mod raster;

pub use backward::{
    render_backward, render_forward, render_reference_backward, OutputGrads, PosedGrads,
    RenderState,
};
pub use camera::Camera;
pub use image::LinearImage;
pub use project::{project, Projection, Splat2D};
pub use raster::{render_reference, render_tiled, RenderOutput, TileBins, DEFAULT_TILE_SIZE};

/// Random scenes for tests and benchmarks.
pub mod scenes {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::Camera;
    use crate::gaussians::{sh_coeff_count, PosedGaussians};
    use crate::math::{normalize_quat, Vec3};

    pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
        loop {
            let q = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
            if let Some(u) = normalize_quat(q) {
                return u;
            }
        }
    }

    /// Gaussians scattered around the origin, seen by [`camera`].
    pub fn random_scene(seed: u64, n: usize, sh_degree: usize, spread: f64) -> PosedGaussians {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 3 * sh_coeff_count(sh_degree);
        let mut g = PosedGaussians::with_capacity(n, sh_degree);
        for _ in 0..n {
            g.positions.extend([0; 3].map(|_| rng.gen_range(-spread..spread)));
            g.rotations.extend(random_quat(&mut rng));
            g.scales
                .extend([0; 3].map(|_| rng.gen_range(0.15..0.6) * spread));
            g.opacities.push(rng.gen_range(0.1..0.9));
            g.sh.extend((0..c).map(|_| rng.gen_range(-0.4..0.4)));
            g.sh_frames.extend(random_quat(&mut rng));
        }
        g
    }

    pub fn camera(w: u32, h: u32) -> Camera {
        Camera::orbit(Vec3::zeros(), 0.2, 0.1, 2.0, 0.6, w, h)
    }
}
