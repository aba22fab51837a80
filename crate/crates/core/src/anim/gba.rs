//! `GBA1` avatar container.
//!
//! Sections (all little-endian `f32` unless noted), with `P = 11 + 3(L+1)²`
//! raw parameters per Gaussian in the row order
//! `[position 3, rotation 4, scale 3, opacity 1, sh 3(L+1)²]`:
//!
//! | name | shape |
//! |---|---|
//! | `b0_positions`, `b0_rotations`, `b0_scales`, `b0_opacities`, `b0_sh` | N×3, N×4, N×3, N, N×3(L+1)² |
//! | `skin_weights` | N×J |
//! | `delta_init`, `delta_hat` | K×N×P |
//! | `d` | N×K |
//! | `d_max` | K |
//! | `mouth_positions` … `mouth_sh` | as for `b0` with N_mouth rows |
//! | `mouth_skin_weights` | N_mouth×J |
//! | `mouth_labels` (u8: 0 upper, 1 lower) | N_mouth |
//! | `parents` (i32) | J |
//! | `rest_transforms` | J×4×4 row-major |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlendshapeAvatar, DeltaReparam};
use crate::container::{read_file, write_atomic, ContainerReader, SectionInfo, SectionWriter};
use crate::error::{Error, Result};
use crate::gaussians::{sh_coeff_count, GaussianSet};
use crate::init::MouthPart;
use crate::mesh::Skeleton;

pub const MAGIC: &[u8; 8] = b"GBAVATAR";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    #[serde(rename = "N")]
    n: u64,
    #[serde(rename = "K")]
    k: u64,
    #[serde(rename = "J")]
    j: u64,
    #[serde(rename = "L")]
    sh_degree: u64,
    #[serde(rename = "N_mouth")]
    n_mouth: u64,
    epsilon: f64,
    joint_names: Vec<String>,
    sections: Vec<SectionInfo>,
}

fn write_set(w: &mut SectionWriter, prefix: &str, g: &GaussianSet) {
    w.f32_from_f64(&format!("{prefix}_positions"), g.positions.iter().copied());
    w.f32_from_f64(&format!("{prefix}_rotations"), g.rotations.iter().copied());
    w.f32_from_f64(&format!("{prefix}_scales"), g.scales.iter().copied());
    w.f32_from_f64(&format!("{prefix}_opacities"), g.opacities.iter().copied());
    w.f32_from_f64(&format!("{prefix}_sh"), g.sh.iter().copied());
}

fn read_set(
    r: &ContainerReader,
    s: &[SectionInfo],
    prefix: &str,
    n: usize,
    degree: usize,
) -> Result<GaussianSet> {
    Ok(GaussianSet {
        sh_degree: degree,
        positions: r.f32_as_f64(s, &format!("{prefix}_positions"), n * 3)?,
        rotations: r.f32_as_f64(s, &format!("{prefix}_rotations"), n * 4)?,
        scales: r.f32_as_f64(s, &format!("{prefix}_scales"), n * 3)?,
        opacities: r.f32_as_f64(s, &format!("{prefix}_opacities"), n)?,
        sh: r.f32_as_f64(s, &format!("{prefix}_sh"), n * 3 * sh_coeff_count(degree))?,
    })
}

fn packed_rows(sets: &[GaussianSet]) -> Vec<f64> {
    let mut out = Vec::new();
    for s in sets {
        let p = s.params_per_gaussian();
        let mut row = vec![0.0; p];
        for i in 0..s.len() {
            s.pack_row(i, &mut row);
            out.extend_from_slice(&row);
        }
    }
    out
}

fn unpack_rows(data: &[f64], k: usize, n: usize, degree: usize) -> Vec<GaussianSet> {
    let mut sets = Vec::with_capacity(k);
    let mut it = data.chunks_exact(11 + 3 * sh_coeff_count(degree));
    for _ in 0..k {
        let mut s = GaussianSet::zeros(n, degree);
        for i in 0..n {
            s.unpack_row(i, it.next().expect("length checked"));
        }
        sets.push(s);
    }
    sets
}

pub fn to_bytes(a: &BlendshapeAvatar) -> Result<Vec<u8>> {
    a.validate()?;
    let mut w = SectionWriter::new();
    write_set(&mut w, "b0", &a.b0);
    w.f32_from_f64("skin_weights", a.skin_weights.iter().copied());
    w.f32_from_f64("delta_init", packed_rows(&a.reparam.delta_init).into_iter());
    w.f32_from_f64("delta_hat", packed_rows(&a.reparam.delta_hat).into_iter());
    w.f32_from_f64("d", a.reparam.d().iter().copied());
    w.f32_from_f64("d_max", a.reparam.d_max().iter().copied());
    write_set(&mut w, "mouth", &a.mouth);
    w.f32_from_f64("mouth_skin_weights", a.mouth_weights.iter().copied());
    let labels: Vec<u8> = a
        .mouth_labels
        .iter()
        .map(|l| match l {
            MouthPart::Upper => 0,
            MouthPart::Lower => 1,
        })
        .collect();
    w.u8("mouth_labels", &labels);
    w.i32("parents", a.skeleton.parents().iter().copied());
    w.f32_from_f64(
        "rest_transforms",
        a.skeleton
            .rest_matrices()
            .iter()
            .flatten()
            .copied()
            .collect::<Vec<_>>()
            .into_iter(),
    );
    let header = Header {
        version: 1,
        n: a.len() as u64,
        k: a.blendshape_count() as u64,
        j: a.joint_count() as u64,
        sh_degree: a.sh_degree() as u64,
        n_mouth: a.mouth_len() as u64,
        epsilon: a.reparam.epsilon(),
        joint_names: a.skeleton.names().to_vec(),
        sections: w.infos(),
    };
    w.finish(MAGIC, &header)
}

pub fn from_bytes(bytes: &[u8]) -> Result<BlendshapeAvatar> {
    let r = ContainerReader::parse(bytes, MAGIC)?;
    let h: Header = r.header()?;
    if h.version != 1 {
        return Err(Error::format(16, format!("unsupported version {}", h.version)));
    }
    if h.sh_degree > 3 {
        return Err(Error::format(16, format!("SH degree {} exceeds 3", h.sh_degree)));
    }
    if h.k == 0 || h.j == 0 {
        return Err(Error::format(16, "K and J must be at least 1"));
    }
    let (n, k, j, deg, nm) = (
        h.n as usize,
        h.k as usize,
        h.j as usize,
        h.sh_degree as usize,
        h.n_mouth as usize,
    );
    if h.joint_names.len() != j {
        return Err(Error::format(16, format!("{} joint names for J = {j}", h.joint_names.len())));
    }
    let s = &h.sections;
    let p = 11 + 3 * sh_coeff_count(deg);
    let b0 = read_set(&r, s, "b0", n, deg)?;
    let skin_weights = r.f32_as_f64(s, "skin_weights", n * j)?;
    let delta_init = unpack_rows(&r.f32_as_f64(s, "delta_init", k * n * p)?, k, n, deg);
    let delta_hat = unpack_rows(&r.f32_as_f64(s, "delta_hat", k * n * p)?, k, n, deg);
    let d = r.f32_as_f64(s, "d", n * k)?;
    let d_max = r.f32_as_f64(s, "d_max", k)?;
    let mouth = read_set(&r, s, "mouth", nm, deg)?;
    let mouth_weights = r.f32_as_f64(s, "mouth_skin_weights", nm * j)?;
    let labels = r.u8(s, "mouth_labels", nm)?;
    let mouth_labels = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| match l {
            0 => Ok(MouthPart::Upper),
            1 => Ok(MouthPart::Lower),
            _ => Err(Error::format(
                r.offset_of(s, "mouth_labels") + i as u64,
                format!("mouth label {l} is neither 0 nor 1"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    let parents = r.i32(s, "parents", j)?;
    let rest = r.f32_as_f64(s, "rest_transforms", j * 16)?;
    let skeleton = Skeleton::from_matrices(
        parents,
        rest.chunks_exact(16).map(|c| c.try_into().unwrap()).collect(),
        h.joint_names,
    )?;
    let reparam = DeltaReparam::new(delta_init, delta_hat, d, d_max, h.epsilon)?;
    let a = BlendshapeAvatar {
        b0,
        skin_weights,
        reparam,
        mouth,
        mouth_weights,
        mouth_labels,
        skeleton,
    };
    a.validate()?;
    Ok(a)
}

pub fn load_avatar(path: &Path) -> Result<BlendshapeAvatar> {
    from_bytes(&read_file(path)?)
}

pub fn save_avatar(a: &BlendshapeAvatar, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(a)?)
}
