//! Analytic gradients of a scalar loss through compositing and projection.
//!
//! Sort order, culling, early termination and the `α` clamps are treated as
//! constants, so gradients are exact almost everywhere.

use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;

use super::project::{
    camera_space, local_dir, project, scaled_rotation, view_dir, Projection, MAX_ALPHA,
};
use super::raster::{composite_tiled, splat_alpha, RenderOutput, TileBins, DEFAULT_TILE_SIZE};
use super::Camera;
use crate::error::{Error, Result};
use crate::gaussians::PosedGaussians;
use crate::math::{quat_to_mat, quat_to_mat_backward, Mat3, Vec3};
use crate::sh;

/// Gradients with respect to the activated, posed Gaussian parameters.
/// Rotations are differentiated with respect to the unit quaternion as
/// given; Gaussians that were culled get exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedGrads {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
    pub sh: Vec<f64>,
    /// Gradient with respect to the projected mean (pixels), used for
    /// density-control statistics.
    pub screen: Vec<[f64; 2]>,
}

impl PosedGrads {
    pub fn zeros(n: usize, sh_coeffs: usize) -> Self {
        Self {
            positions: vec![0.0; n * 3],
            rotations: vec![0.0; n * 4],
            scales: vec![0.0; n * 3],
            opacities: vec![0.0; n],
            sh: vec![0.0; n * 3 * sh_coeffs],
            screen: vec![[0.0; 2]; n],
        }
    }
}

/// Upstream gradients on the render output.
#[derive(Clone, Copy, Debug)]
pub struct OutputGrads<'a> {
    /// `H × W × 3`.
    pub color: &'a [f64],
    /// `H × W`.
    pub alpha: &'a [f64],
}

/// Screen-space gradient of one splat: mean (2), conic `[xx, xy, yy]` (3),
/// color (3), opacity (1).
type SplatGrad = [f64; 9];

struct Contribution {
    slot: usize,
    alpha: f64,
    g: f64,
    t: f64,
    dx: f64,
    dy: f64,
}

/// Forward render that keeps what the backward pass needs.
pub struct RenderState {
    pub output: RenderOutput,
    proj: Projection,
    bins: TileBins,
    background: [f64; 3],
}

impl RenderState {
    pub fn visible_count(&self) -> usize {
        self.proj.splats.len()
    }

    /// Indices of the Gaussians that survived culling.
    pub fn visible_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.proj.splats.iter().map(|s| s.index as usize)
    }
}

pub fn render_forward(
    g: &PosedGaussians,
    cam: &Camera,
    background: [f64; 3],
    tile_size: u32,
) -> Result<RenderState> {
    cam.validate()?;
    let proj = project(g, cam);
    let bins = TileBins::build(&proj, cam, tile_size)?;
    let output = composite_tiled(&proj, &bins, cam, background);
    Ok(RenderState {
        output,
        proj,
        bins,
        background,
    })
}

/// Backward pass for a forward state produced by [`render_forward`].
pub fn render_backward(
    g: &PosedGaussians,
    cam: &Camera,
    state: &RenderState,
    grads: OutputGrads,
) -> Result<PosedGrads> {
    let npix = cam.pixel_count();
    if grads.color.len() != npix * 3 || grads.alpha.len() != npix {
        return Err(Error::Dimension(format!(
            "output gradients have {} color and {} alpha entries for {npix} pixels",
            grads.color.len(),
            grads.alpha.len()
        )));
    }
    let splat_grads = composite_backward(state, cam, grads);
    Ok(project_backward(g, cam, &state.proj, &splat_grads))
}

/// Reference forward plus backward in one call, for gradient checks.
pub fn render_reference_backward(
    g: &PosedGaussians,
    cam: &Camera,
    background: [f64; 3],
    grads: OutputGrads,
) -> Result<PosedGrads> {
    let state = render_forward(g, cam, background, DEFAULT_TILE_SIZE)?;
    render_backward(g, cam, &state, grads)
}

/// Per-tile partials merged in tile order, so the result does not depend on
/// the thread count.
fn composite_backward(state: &RenderState, cam: &Camera, grads: OutputGrads) -> Vec<SplatGrad> {
    let bins = &state.bins;
    let proj = &state.proj;
    let out = &state.output;
    let bg = state.background;
    let w = cam.width as usize;
    let partials: Vec<Vec<SplatGrad>> = (0..bins.tile_count())
        .into_par_iter()
        .map(|t| {
            let list = bins.tile(t);
            let mut acc = vec![[0.0; 9]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let [x0, x1, y0, y1] = bins.tile_rect(t, cam);
            let mut contrib: Vec<Contribution> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * w + x;
                    let gc = [
                        grads.color[p * 3],
                        grads.color[p * 3 + 1],
                        grads.color[p * 3 + 2],
                    ];
                    let ga = grads.alpha[p];
                    if gc == [0.0; 3] && ga == 0.0 {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    // Replay the forward pass for this pixel.
                    contrib.clear();
                    let mut tr = 1.0;
                    for (slot, &si) in list.iter().enumerate() {
                        let s = &proj.splats[si as usize];
                        let Some((alpha, g)) = splat_alpha(s, px, py) else {
                            continue;
                        };
                        contrib.push(Contribution {
                            slot,
                            alpha,
                            g,
                            t: tr,
                            dx: px - s.mean[0],
                            dy: py - s.mean[1],
                        });
                        tr *= 1.0 - alpha;
                        if tr < super::project::MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    let t_final = 1.0 - out.alpha[p];
                    debug_assert!((t_final - tr).abs() < 1e-12);
                    let t_final = tr;
                    // Suffix sum: color added behind the current splat.
                    let mut behind = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
                    for c in contrib.iter().rev() {
                        let s = &proj.splats[list[c.slot] as usize];
                        let a = &mut acc[c.slot];
                        let one_minus = 1.0 - c.alpha;
                        let mut d_alpha = ga * t_final / one_minus;
                        for ch in 0..3 {
                            a[5 + ch] += gc[ch] * c.alpha * c.t;
                            d_alpha += gc[ch] * (c.t * s.color[ch] - behind[ch] / one_minus);
                            behind[ch] += s.color[ch] * c.alpha * c.t;
                        }
                        if s.opacity * c.g > MAX_ALPHA {
                            continue;
                        }
                        a[8] += d_alpha * c.g;
                        let d_power = d_alpha * s.opacity * c.g;
                        let (dx, dy) = (c.dx, c.dy);
                        // ∂power/∂mean = Q·Δ.
                        a[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                        a[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                        a[2] += d_power * (-0.5 * dx * dx);
                        a[3] += d_power * (-dx * dy);
                        a[4] += d_power * (-0.5 * dy * dy);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![[0.0; 9]; proj.splats.len()];
    for (t, acc) in partials.iter().enumerate() {
        for (slot, &si) in bins.tile(t).iter().enumerate() {
            let dst = &mut total[si as usize];
            for (d, v) in dst.iter_mut().zip(&acc[slot]) {
                *d += v;
            }
        }
    }
    total
}

fn project_backward(
    g: &PosedGaussians,
    cam: &Camera,
    proj: &Projection,
    splat_grads: &[SplatGrad],
) -> PosedGrads {
    let sc = g.sh_coeffs();
    let center = cam.center();
    let wrot = cam.world_to_camera.rotation_matrix();
    let per_splat: Vec<_> = proj
        .splats
        .par_iter()
        .zip(splat_grads)
        .map(|(s, sg)| {
            let i = s.index as usize;
            let cs = camera_space(g, i, cam);
            let (x, y, z) = (cs.pc.x, cs.pc.y, cs.pc.z);
            let (fx, fy) = (cam.fx, cam.fy);

            // Conic → covariance: dL/dΣ2 = −Q·G_Q·Q.
            let q2 = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
            let gq = Matrix2::new(sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4]);
            let gcov = -(q2 * gq * q2);
            let jac: Matrix2x3<f64> = cs.jac;
            let g_sigma_cam = jac.transpose() * gcov * jac;
            let g_jac = 2.0 * gcov * jac * cs.sigma_cam;
            let g_sigma = wrot.transpose() * g_sigma_cam * wrot;
            let q = g.rotation(i);
            let sc3 = g.scale(i);
            let m = scaled_rotation(q, sc3);
            let g_m = 2.0 * g_sigma * m;
            let r = quat_to_mat(q);
            let mut g_r = Mat3::zeros();
            let mut g_s = [0.0; 3];
            for a in 0..3 {
                for b in 0..3 {
                    g_r[(a, b)] = g_m[(a, b)] * sc3[b];
                    g_s[b] += g_m[(a, b)] * r[(a, b)];
                }
            }
            let g_q = quat_to_mat_backward(q, &g_r);

            // Camera-space position through the mean and the Jacobian.
            let (gu, gv) = (sg[0], sg[1]);
            let z2 = z * z;
            let z3 = z2 * z;
            let g_pc = Vec3::new(
                gu * fx / z - g_jac[(0, 2)] * fx / z2,
                gv * fy / z - g_jac[(1, 2)] * fy / z2,
                -gu * fx * x / z2 - gv * fy * y / z2 - g_jac[(0, 0)] * fx / z2
                    + g_jac[(0, 2)] * 2.0 * fx * x / z3
                    - g_jac[(1, 1)] * fy / z2
                    + g_jac[(1, 2)] * 2.0 * fy * y / z3,
            );
            let mut g_pos = wrot.transpose() * g_pc;

            // Color: SH coefficients and the view direction.
            let p = Vec3::from(g.position(i));
            let (dir, dist) = view_dir(p, center);
            let ld = local_dir(g, i, &dir);
            let mut val = [0.0; 16];
            let mut grad = [[0.0; 3]; 16];
            sh::basis_with_grad(g.sh_degree, ld, &mut val, &mut grad);
            let coeffs = g.sh_of(i);
            let mut g_sh = vec![0.0; 3 * sc];
            let mut g_ld = [0.0; 3];
            let raw = super::project::raw_color(g, i, center);
            for ch in 0..3 {
                if raw[ch] < 0.0 {
                    continue;
                }
                let gc = sg[5 + ch];
                if gc == 0.0 {
                    continue;
                }
                for mm in 0..sc {
                    g_sh[ch * sc + mm] = gc * val[mm];
                    let cv = coeffs[ch * sc + mm];
                    for a in 0..3 {
                        g_ld[a] += gc * cv * grad[mm][a];
                    }
                }
            }
            if g.sh_degree > 0 {
                let frame = quat_to_mat(g.sh_frame(i));
                let g_dir = frame * Vec3::from(g_ld);
                g_pos += (g_dir - dir * dir.dot(&g_dir)) / dist;
            }
            (i, g_pos, g_q, g_s, g_sh, [gu, gv], sg[8])
        })
        .collect();
    let mut out = PosedGrads::zeros(g.len(), sc);
    for (i, g_pos, g_q, g_s, g_sh, screen, g_o) in per_splat {
        out.positions[i * 3..i * 3 + 3].copy_from_slice(g_pos.as_slice());
        out.rotations[i * 4..i * 4 + 4].copy_from_slice(&g_q);
        out.scales[i * 3..i * 3 + 3].copy_from_slice(&g_s);
        out.opacities[i] = g_o;
        out.sh[i * 3 * sc..(i + 1) * 3 * sc].copy_from_slice(&g_sh);
        out.screen[i] = screen;
    }
    out
}
