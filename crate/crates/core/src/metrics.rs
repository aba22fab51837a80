//! Image quality metrics: PSNR and windowed SSIM (with its gradient).

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "images have {} and {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// PSNR in dB for signals in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same(a, b)?;
    if a.is_empty() {
        return Err(Error::Dimension("empty image".into()));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Zero-padded separable "same" filtering with the symmetric window; it is
/// its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW], tmp: &mut Vec<f64>, dst: &mut Vec<f64>) {
    let r = SSIM_WINDOW / 2;
    tmp.clear();
    tmp.resize(w * h, 0.0);
    dst.clear();
    dst.resize(w * h, 0.0);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut s = 0.0;
            for xx in lo..=hi {
                s += k[xx + r - x] * row[xx];
            }
            tmp[y * w + x] = s;
        }
    }
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut s = 0.0;
            for yy in lo..=hi {
                s += k[yy + r - y] * tmp[yy * w + x];
            }
            dst[y * w + x] = s;
        }
    }
}

/// Mean SSIM of interleaved images with `channels` channels, averaged over
/// pixels and channels (11×11 Gaussian window, σ = 1.5, zero padding).
/// With `grad`, also writes `∂SSIM/∂a`.
pub fn ssim(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_same(a, b)?;
    let n = width * height;
    if a.len() != n * channels || n == 0 {
        return Err(Error::Dimension(format!(
            "{} values for {width}×{height}×{channels}",
            a.len()
        )));
    }
    let k = gaussian_window();
    let mut tmp = Vec::new();
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut total = 0.0;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let norm = 1.0 / (n * channels) as f64;
    for c in 0..channels {
        for p in 0..n {
            x[p] = a[p * channels + c];
            y[p] = b[p * channels + c];
        }
        blur(&x, width, height, &k, &mut tmp, &mut mx);
        blur(&y, width, height, &k, &mut tmp, &mut my);
        for p in 0..n {
            buf[p] = x[p] * x[p];
        }
        blur(&buf, width, height, &k, &mut tmp, &mut sxx);
        for p in 0..n {
            buf[p] = y[p] * y[p];
        }
        blur(&buf, width, height, &k, &mut tmp, &mut syy);
        for p in 0..n {
            buf[p] = x[p] * y[p];
        }
        blur(&buf, width, height, &k, &mut tmp, &mut sxy);
        let mut d_mu = vec![0.0; n];
        let mut d_xx = vec![0.0; n];
        let mut d_xy = vec![0.0; n];
        for p in 0..n {
            let (ux, uy) = (mx[p], my[p]);
            let vx = sxx[p] - ux * ux;
            let vy = syy[p] - uy * uy;
            let cxy = sxy[p] - ux * uy;
            let aa = 2.0 * ux * uy + C1;
            let bb = 2.0 * cxy + C2;
            let cc = ux * ux + uy * uy + C1;
            let dd = vx + vy + C2;
            let s = aa * bb / (cc * dd);
            total += s;
            if grad.is_some() {
                let ds_dux = 2.0 * uy * bb / (cc * dd) - s * 2.0 * ux / cc;
                let ds_dvx = -s / dd;
                let ds_dcxy = 2.0 * aa / (cc * dd);
                d_mu[p] = ds_dux - 2.0 * ux * ds_dvx - uy * ds_dcxy;
                d_xx[p] = ds_dvx;
                d_xy[p] = ds_dcxy;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let mut b1 = Vec::new();
            let mut b2 = Vec::new();
            let mut b3 = Vec::new();
            blur(&d_mu, width, height, &k, &mut tmp, &mut b1);
            blur(&d_xx, width, height, &k, &mut tmp, &mut b2);
            blur(&d_xy, width, height, &k, &mut tmp, &mut b3);
            for p in 0..n {
                g[p * channels + c] = norm * (b1[p] + 2.0 * x[p] * b2[p] + y[p] * b3[p]);
            }
        }
    }
    Ok(total * norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 2-D windowed sums over the zero-padded image.
    fn ssim_oracle(a: &[f64], b: &[f64], w: usize, h: usize, ch: usize) -> f64 {
        let r = 5i64;
        let mut k2 = [[0.0; 11]; 11];
        let mut s = 0.0;
        for i in 0..11 {
            for j in 0..11 {
                let (dx, dy) = (i as f64 - 5.0, j as f64 - 5.0);
                k2[i][j] = (-(dx * dx + dy * dy) / 4.5).exp();
                s += k2[i][j];
            }
        }
        let mut total = 0.0;
        for c in 0..ch {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (px, py) = (x + dx, y + dy);
                            if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                                continue;
                            }
                            let kk = k2[(dx + r) as usize][(dy + r) as usize] / s;
                            let idx = (py as usize * w + px as usize) * ch + c;
                            let (u, v) = (a[idx], b[idx]);
                            mx += kk * u;
                            my += kk * v;
                            xx += kk * u * u;
                            yy += kk * v * v;
                            xy += kk * u * v;
                        }
                    }
                    let (vx, vy, cv) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    total += ((2.0 * mx * my + C1) * (2.0 * cv + C2))
                        / ((mx * mx + my * my + C1) * (vx + vy + C2));
                }
            }
        }
        total / (w * h * ch) as f64
    }

    fn random_image(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn identical_images() {
        let a = random_image(1, 12 * 10 * 3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a, 12, 10, 3, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_closed_form() {
        let a = vec![0.5; 30];
        let b = vec![0.6; 30];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_direct_windowed_sums() {
        let (w, h) = (17, 13);
        let a = random_image(2, w * h * 3);
        let b: Vec<f64> = a
            .iter()
            .zip(random_image(3, w * h * 3))
            .map(|(x, n)| x * 0.7 + 0.3 * n)
            .collect();
        let fast = ssim(&a, &b, w, h, 3, None).unwrap();
        let slow = ssim_oracle(&a, &b, w, h, 3);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn ssim_gradient_matches_fd() {
        let (w, h) = (16, 16);
        let a = random_image(4, w * h * 3);
        let b = random_image(5, w * h * 3);
        let mut g = vec![0.0; a.len()];
        ssim(&a, &b, w, h, 3, Some(&mut g)).unwrap();
        let step = 1e-6;
        for idx in [0, 17, 100, 383, 500, 767] {
            let mut p = a.clone();
            p[idx] += step;
            let mut m = a.clone();
            m[idx] -= step;
            let num = (ssim(&p, &b, w, h, 3, None).unwrap() - ssim(&m, &b, w, h, 3, None).unwrap())
                / (2.0 * step);
            assert!((num - g[idx]).abs() / num.abs().max(1e-8) < 1e-4, "{idx}: {num} vs {}", g[idx]);
        }
    }
}
