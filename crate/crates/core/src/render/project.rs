//! EWA projection of posed Gaussians to screen-space splats.

use rayon::prelude::*;

use super::Camera;
use crate::gaussians::PosedGaussians;
use crate::math::{quat_to_mat, Mat3, Vec3};
use crate::sh;

/// Added to both diagonal entries of every screen covariance (pixels²).
pub const DILATION: f64 = 0.3;
/// Gaussians closer than this to the camera plane are culled.
pub const NEAR: f64 = 0.01;
/// Contributions `α·G` below this are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Per-splat opacity cap.
pub const MAX_ALPHA: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian.
    pub index: u32,
    pub mean: [f64; 2],
    /// `[xx, xy, yy]` of the dilated screen covariance.
    pub cov: [f64; 3],
    /// `[xx, xy, yy]` of its inverse.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// The exponent below which `opacity·exp(power)` drops under
    /// [`MIN_ALPHA`]; lets the kernel reject without calling `exp`.
    pub power_cut: f64,
}

impl Splat2D {
    /// Half-extents (pixels) of the region where the splat can contribute.
    pub fn extent(&self) -> [f64; 2] {
        let r2 = -2.0 * self.power_cut;
        // Small pad so rounding at the ellipse boundary never drops a pixel
        // the kernel would accept.
        let r = r2.max(0.0).sqrt() * (1.0 + 1e-9) + 1e-6;
        [r * self.cov[0].sqrt(), r * self.cov[2].sqrt()]
    }
}

/// Visible splats in compositing order (depth ascending, index tie-break).
#[derive(Clone, Debug, Default)]
pub struct Projection {
    pub splats: Vec<Splat2D>,
}

/// Camera-space quantities shared by projection and its backward pass.
pub(crate) struct CameraSpace {
    pub pc: Vec3,
    pub jac: nalgebra::Matrix2x3<f64>,
    pub sigma_cam: Mat3,
}

pub(crate) fn camera_space(g: &PosedGaussians, i: usize, cam: &Camera) -> CameraSpace {
    let w = cam.world_to_camera.rotation_matrix();
    let p = Vec3::from(g.position(i));
    let pc = w * p + cam.world_to_camera.translation;
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let jac = nalgebra::Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let m = scaled_rotation(g.rotation(i), g.scale(i));
    let sigma = m * m.transpose();
    CameraSpace {
        pc,
        jac,
        sigma_cam: w * sigma * w.transpose(),
    }
}

/// `R·diag(s)`.
pub(crate) fn scaled_rotation(q: [f64; 4], s: [f64; 3]) -> Mat3 {
    let mut m = quat_to_mat(q);
    for c in 0..3 {
        for r in 0..3 {
            m[(r, c)] *= s[c];
        }
    }
    m
}

/// Unit view direction from the camera center to `p`, and the distance.
pub(crate) fn view_dir(p: Vec3, center: Vec3) -> (Vec3, f64) {
    let d = p - center;
    let n = d.norm();
    (d / n, n)
}

/// Direction in the Gaussian's canonical SH frame.
pub(crate) fn local_dir(g: &PosedGaussians, i: usize, dir: &Vec3) -> [f64; 3] {
    let r = quat_to_mat(g.sh_frame(i));
    let l = r.transpose() * dir;
    [l.x, l.y, l.z]
}

/// Unclamped SH color (offset by ½) of Gaussian `i` seen from `center`.
pub(crate) fn raw_color(g: &PosedGaussians, i: usize, center: Vec3) -> [f64; 3] {
    let (dir, _) = view_dir(Vec3::from(g.position(i)), center);
    let c = sh::eval(g.sh_of(i), g.sh_degree, local_dir(g, i, &dir));
    [c[0] + 0.5, c[1] + 0.5, c[2] + 0.5]
}

fn project_one(g: &PosedGaussians, i: usize, cam: &Camera, center: Vec3) -> Option<Splat2D> {
    let o = g.opacities[i];
    if !(o * 255.0 > 1.0) {
        return None;
    }
    let cs = camera_space(g, i, cam);
    let z = cs.pc.z;
    if !(z > NEAR) {
        return None;
    }
    let c2 = cs.jac * cs.sigma_cam * cs.jac.transpose();
    let cov = [c2[(0, 0)] + DILATION, c2[(0, 1)], c2[(1, 1)] + DILATION];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = [
        cam.fx * cs.pc.x / z + cam.cx,
        cam.fy * cs.pc.y / z + cam.cy,
    ];
    let raw = raw_color(g, i, center);
    let s = Splat2D {
        index: i as u32,
        mean,
        cov,
        conic,
        depth: z,
        color: raw.map(|c| c.max(0.0)),
        opacity: o,
        power_cut: -(255.0 * o).ln(),
    };
    let [ex, ey] = s.extent();
    let (w, h) = (cam.width as f64, cam.height as f64);
    // Pixel centers sit at half-integers.
    if mean[0] + ex < 0.5 || mean[0] - ex > w - 0.5 || mean[1] + ey < 0.5 || mean[1] - ey > h - 0.5
    {
        return None;
    }
    Some(s)
}

/// Projects every Gaussian, culls those that cannot touch the image and
/// sorts the rest front to back.
pub fn project(g: &PosedGaussians, cam: &Camera) -> Projection {
    let center = cam.center();
    let mut splats: Vec<Splat2D> = (0..g.len())
        .into_par_iter()
        .with_min_len(256)
        .filter_map(|i| project_one(g, i, cam, center))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    Projection { splats }
}
