//! Real spherical harmonics up to degree 3 in the basis used by Gaussian
//! splatting (band 1 ordered `(-y, z, -x)`), plus per-band rotation.
//!
//! Coefficient blocks are laid out `[channel][coefficient]` with three color
//! channels. A rotation `R` maps a directional function `f` to
//! `f'(d) = f(R⁻¹ d)`.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::gaussians::sh_coeff_count;
use crate::math::{quat_to_mat, Mat3};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

/// Evaluates the `2l+1` basis functions of band `l` at unit direction `d`.
#[inline]
pub fn band_basis(l: usize, d: [f64; 3], out: &mut [f64]) {
    let [x, y, z] = d;
    match l {
        0 => out[0] = SH_C0,
        1 => {
            out[0] = -SH_C1 * y;
            out[1] = SH_C1 * z;
            out[2] = -SH_C1 * x;
        }
        2 => {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            out[0] = SH_C2[0] * x * y;
            out[1] = SH_C2[1] * y * z;
            out[2] = SH_C2[2] * (2.0 * zz - xx - yy);
            out[3] = SH_C2[3] * x * z;
            out[4] = SH_C2[4] * (xx - yy);
        }
        3 => {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            out[0] = SH_C3[0] * y * (3.0 * xx - yy);
            out[1] = SH_C3[1] * x * y * z;
            out[2] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            out[3] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            out[4] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            out[5] = SH_C3[5] * z * (xx - yy);
            out[6] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
        _ => panic!("SH band {l} not supported"),
    }
}

/// All `(L+1)²` basis values at `d`.
pub fn basis(degree: usize, d: [f64; 3], out: &mut [f64]) {
    for l in 0..=degree {
        band_basis(l, d, &mut out[l * l..(l + 1) * (l + 1)]);
    }
}

/// Basis values and their gradients with respect to the (unnormalized
/// polynomial) direction components.
pub fn basis_with_grad(degree: usize, d: [f64; 3], val: &mut [f64], grad: &mut [[f64; 3]]) {
    let [x, y, z] = d;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    val[0] = SH_C0;
    grad[0] = [0.0; 3];
    if degree >= 1 {
        val[1] = -SH_C1 * y;
        val[2] = SH_C1 * z;
        val[3] = -SH_C1 * x;
        grad[1] = [0.0, -SH_C1, 0.0];
        grad[2] = [0.0, 0.0, SH_C1];
        grad[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        val[4] = SH_C2[0] * x * y;
        val[5] = SH_C2[1] * y * z;
        val[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        val[7] = SH_C2[3] * x * z;
        val[8] = SH_C2[4] * (xx - yy);
        grad[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        grad[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        grad[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        grad[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        grad[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        val[9] = SH_C3[0] * y * (3.0 * xx - yy);
        val[10] = SH_C3[1] * x * y * z;
        val[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        val[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        val[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        val[14] = SH_C3[5] * z * (xx - yy);
        val[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        grad[9] = [
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ];
        grad[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        grad[11] = [
            SH_C3[2] * (-2.0 * x * y),
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ];
        grad[12] = [
            SH_C3[3] * (-6.0 * x * z),
            SH_C3[3] * (-6.0 * y * z),
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        grad[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * (-2.0 * x * y),
            SH_C3[4] * 8.0 * x * z,
        ];
        grad[14] = [
            SH_C3[5] * 2.0 * x * z,
            SH_C3[5] * (-2.0 * y * z),
            SH_C3[5] * (xx - yy),
        ];
        grad[15] = [
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            SH_C3[6] * (-6.0 * x * y),
            0.0,
        ];
    }
}

/// Evaluates the SH function of a `[channel][coefficient]` block at `d`
/// (no color offset applied).
pub fn eval(coeffs: &[f64], degree: usize, d: [f64; 3]) -> [f64; 3] {
    let c = sh_coeff_count(degree);
    let mut b = [0.0; 16];
    basis(degree, d, &mut b);
    let mut out = [0.0; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        *o = (0..c).map(|m| coeffs[ch * c + m] * b[m]).sum();
    }
    out
}

/// Number of sample directions used per band (oversampled for conditioning).
const fn samples_for_band(l: usize) -> usize {
    3 * (2 * l + 1)
}

#[derive(Default)]
struct BandTable {
    dirs: Vec<[f64; 3]>,
    /// `n × S` pseudo-inverse of the sampled basis, row-major.
    pinv: Vec<f64>,
}

/// Sample directions and basis pseudo-inverses for bands `1..=3`.
fn band_tables() -> &'static [BandTable; 3] {
    static TABLES: OnceLock<[BandTable; 3]> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut out: [BandTable; 3] = Default::default();
        for l in 1..=3 {
            let n = 2 * l + 1;
            let dirs = sample_dirs(l);
            let s_count = dirs.len();
            let mut b = DMatrix::<f64>::zeros(s_count, n);
            let mut row = [0.0; 7];
            for (s, d) in dirs.iter().enumerate() {
                band_basis(l, *d, &mut row);
                for m in 0..n {
                    b[(s, m)] = row[m];
                }
            }
            let pinv = b
                .pseudo_inverse(1e-12)
                .expect("SH sample directions are well posed");
            let mut flat = vec![0.0; n * s_count];
            for i in 0..n {
                for j in 0..s_count {
                    flat[i * s_count + j] = pinv[(i, j)];
                }
            }
            out[l - 1] = BandTable { dirs, pinv: flat };
        }
        out
    })
}

/// Fixed, well-spread sample directions for band `l` (Fibonacci lattice).
fn sample_dirs(l: usize) -> Vec<[f64; 3]> {
    let n = samples_for_band(l);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64 + 0.37 * l as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Per-band rotation matrices for SH coefficients.
///
/// For band `l` the rotated coefficients are `c' = M_l c`, obtained by
/// matching the rotated function at fixed sample directions `d_s` in the
/// least-squares sense: `B c' = B_r c` where `B_r` evaluates the basis at
/// `R⁻¹ d_s`. The fit is exact because each band is closed under rotation.
#[derive(Clone, Debug)]
pub struct ShRotation {
    degree: usize,
    m1: [f64; 9],
    m2: [f64; 25],
    m3: [f64; 49],
}

impl ShRotation {
    pub fn identity(degree: usize) -> Self {
        let mut r = Self {
            degree,
            m1: [0.0; 9],
            m2: [0.0; 25],
            m3: [0.0; 49],
        };
        for i in 0..3 {
            r.m1[i * 3 + i] = 1.0;
        }
        for i in 0..5 {
            r.m2[i * 5 + i] = 1.0;
        }
        for i in 0..7 {
            r.m3[i * 7 + i] = 1.0;
        }
        r
    }

    pub fn from_quat(degree: usize, q: [f64; 4]) -> Self {
        Self::new(degree, &quat_to_mat(q))
    }

    pub fn new(degree: usize, rot: &Mat3) -> Self {
        assert!(degree <= MAX_DEGREE);
        let mut r = Self::identity(degree);
        if degree == 0 {
            return r;
        }
        let tables = band_tables();
        let rt = rot.transpose();
        for l in 1..=degree {
            let n = 2 * l + 1;
            let table = &tables[l - 1];
            let dirs = &table.dirs;
            let s_count = dirs.len();
            // br[s][m] = Y_m(R^T d_s)
            let mut br = [0.0; 7 * samples_for_band(3)];
            for (s, d) in dirs.iter().enumerate() {
                let v = rt * nalgebra::Vector3::new(d[0], d[1], d[2]);
                band_basis(l, [v.x, v.y, v.z], &mut br[s * n..s * n + n]);
            }
            let pinv = &table.pinv;
            let m: &mut [f64] = match l {
                1 => &mut r.m1,
                2 => &mut r.m2,
                _ => &mut r.m3,
            };
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for s in 0..s_count {
                        acc += pinv[i * s_count + s] * br[s * n + j];
                    }
                    m[i * n + j] = acc;
                }
            }
        }
        r
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn band(&self, l: usize) -> &[f64] {
        match l {
            1 => &self.m1,
            2 => &self.m2,
            _ => &self.m3,
        }
    }

    /// Rotates a `[channel][coefficient]` block in place.
    pub fn apply(&self, coeffs: &mut [f64]) {
        self.apply_impl(coeffs, false);
    }

    /// Applies the transposed band matrices in place (used to pull
    /// gradients back through a rotation).
    pub fn apply_transpose(&self, coeffs: &mut [f64]) {
        self.apply_impl(coeffs, true);
    }

    fn apply_impl(&self, coeffs: &mut [f64], transpose: bool) {
        let c = sh_coeff_count(self.degree);
        debug_assert_eq!(coeffs.len(), 3 * c);
        let mut tmp = [0.0; 7];
        for ch in 0..3 {
            let block = &mut coeffs[ch * c..(ch + 1) * c];
            for l in 1..=self.degree {
                let n = 2 * l + 1;
                let m = self.band(l);
                let seg = &mut block[l * l..l * l + n];
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        let mij = if transpose { m[j * n + i] } else { m[i * n + j] };
                        acc += mij * seg[j];
                    }
                    tmp[i] = acc;
                }
                seg.copy_from_slice(&tmp[..n]);
            }
        }
    }

    /// Same as [`apply`](Self::apply) for single-precision blocks.
    pub fn apply_f32(&self, coeffs: &mut [f32]) {
        let c = sh_coeff_count(self.degree);
        let mut tmp = [0.0f32; 7];
        for ch in 0..3 {
            let block = &mut coeffs[ch * c..(ch + 1) * c];
            for l in 1..=self.degree {
                let n = 2 * l + 1;
                let m = self.band(l);
                let seg = &mut block[l * l..l * l + n];
                for i in 0..n {
                    let mut acc = 0.0f32;
                    for j in 0..n {
                        acc += m[i * n + j] as f32 * seg[j];
                    }
                    tmp[i] = acc;
                }
                seg.copy_from_slice(&tmp[..n]);
            }
        }
    }
}

/// Returns SH coefficients rotated by the unit quaternion `q`.
pub fn rotate_sh(coeffs: &[f64], degree: usize, q: [f64; 4]) -> Vec<f64> {
    let mut out = coeffs.to_vec();
    ShRotation::from_quat(degree, q).apply(&mut out);
    out
}
