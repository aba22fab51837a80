//! Training checkpoints: a regular avatar file plus a full-precision sidecar
//! holding the `f64` parameters, optimizer moments, density statistics and
//! RNG position.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamMoments, DensityStats, OptimizerState, Trainer};
use crate::anim::gba::{load_avatar, save_avatar};
use crate::anim::{BlendshapeAvatar, DeltaReparam};
use crate::container::{read_file, write_atomic, ContainerReader, SectionInfo, SectionWriter};
use crate::error::{Error, Result};
use crate::gaussians::{GaussianSet, PropertyClass};

const MAGIC: &[u8; 8] = b"GBCKPT01";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    iteration: u64,
    adam_step: u64,
    n: u64,
    k: u64,
    n_mouth: u64,
    sh_degree: u64,
    rng_seed: String,
    rng_stream: u64,
    /// Decimal string: the word position is a `u128`.
    rng_word_pos: String,
    sections: Vec<SectionInfo>,
}

pub struct Checkpoint {
    pub avatar: BlendshapeAvatar,
    pub opt: OptimizerState,
    pub stats: DensityStats,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
}

/// `<avatar path>.state`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".state");
    PathBuf::from(s)
}

fn write_set(w: &mut SectionWriter, prefix: &str, s: &GaussianSet) {
    for class in PropertyClass::ALL {
        w.f64(&format!("{prefix}.{}", class.name()), s.property(class));
    }
}

fn read_set(r: &ContainerReader, sec: &[SectionInfo], prefix: &str, n: usize, deg: usize) -> Result<GaussianSet> {
    let mut s = GaussianSet::zeros(n, deg);
    for class in PropertyClass::ALL {
        let len = s.property(class).len();
        *s.property_mut(class) = r.f64(sec, &format!("{prefix}.{}", class.name()), len)?;
    }
    Ok(s)
}

/// Writes `path` (avatar file) and its sidecar atomically.
pub fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    let a = &t.avatar;
    let mut w = SectionWriter::new();
    write_set(&mut w, "b0", &a.b0);
    write_set(&mut w, "mouth", &a.mouth);
    for (k, (init, hat)) in a.reparam.delta_init.iter().zip(&a.reparam.delta_hat).enumerate() {
        write_set(&mut w, &format!("delta_init{k}"), init);
        write_set(&mut w, &format!("delta_hat{k}"), hat);
    }
    w.f64("d", a.reparam.d());
    w.f64("d_max", a.reparam.d_max());
    w.f64("skin_weights", &a.skin_weights);
    w.f64("mouth_weights", &a.mouth_weights);
    let moments = std::iter::once(("b0".to_string(), &t.opt.b0))
        .chain(t.opt.hat.iter().enumerate().map(|(k, m)| (format!("hat{k}"), m)))
        .chain(std::iter::once(("mouth".to_string(), &t.opt.mouth)));
    for (name, m) in moments {
        write_set(&mut w, &format!("adam_m.{name}"), &m.m);
        write_set(&mut w, &format!("adam_v.{name}"), &m.v);
    }
    w.f64("stats.grad_accum", &t.stats.grad_accum);
    w.u32("stats.count", t.stats.count.iter().copied());
    let header = Header {
        version: 1,
        iteration: t.iteration as u64,
        adam_step: t.opt.step,
        n: a.len() as u64,
        k: a.blendshape_count() as u64,
        n_mouth: a.mouth_len() as u64,
        sh_degree: a.sh_degree() as u64,
        rng_seed: hex::encode(t.rng.get_seed()),
        rng_stream: t.rng.get_stream(),
        rng_word_pos: t.rng.get_word_pos().to_string(),
        sections: w.infos(),
    };
    let bytes = w.finish(MAGIC, &header)?;
    save_avatar(a, path)?;
    write_atomic(&sidecar_path(path), &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut avatar = load_avatar(path)?;
    let side = sidecar_path(path);
    let bytes = read_file(&side)?;
    let r = ContainerReader::parse(&bytes, MAGIC)?;
    let h: Header = r.header()?;
    if h.version != 1 {
        return Err(Error::format(16, format!("unsupported checkpoint version {}", h.version)));
    }
    let (n, k, nm, deg) = (h.n as usize, h.k as usize, h.n_mouth as usize, h.sh_degree as usize);
    if n != avatar.len() || k != avatar.blendshape_count() || nm != avatar.mouth_len() || deg != avatar.sh_degree() {
        return Err(Error::Dimension(format!(
            "checkpoint sidecar {} does not match its avatar file",
            side.display()
        )));
    }
    let s = &h.sections;
    let j = avatar.joint_count();
    avatar.b0 = read_set(&r, s, "b0", n, deg)?;
    avatar.mouth = read_set(&r, s, "mouth", nm, deg)?;
    let mut init = Vec::with_capacity(k);
    let mut hat = Vec::with_capacity(k);
    for kk in 0..k {
        init.push(read_set(&r, s, &format!("delta_init{kk}"), n, deg)?);
        hat.push(read_set(&r, s, &format!("delta_hat{kk}"), n, deg)?);
    }
    let d = r.f64(s, "d", n * k)?;
    let d_max = r.f64(s, "d_max", k)?;
    avatar.reparam = DeltaReparam::new(init, hat, d, d_max, avatar.reparam.epsilon())?;
    avatar.skin_weights = r.f64(s, "skin_weights", n * j)?;
    avatar.mouth_weights = r.f64(s, "mouth_weights", nm * j)?;
    avatar.validate()?;

    let moments = |name: &str, len: usize| -> Result<AdamMoments> {
        Ok(AdamMoments {
            m: read_set(&r, s, &format!("adam_m.{name}"), len, deg)?,
            v: read_set(&r, s, &format!("adam_v.{name}"), len, deg)?,
        })
    };
    let opt = OptimizerState {
        step: h.adam_step,
        b0: moments("b0", n)?,
        hat: (0..k).map(|kk| moments(&format!("hat{kk}"), n)).collect::<Result<_>>()?,
        mouth: moments("mouth", nm)?,
    };
    let stats = DensityStats {
        grad_accum: r.f64(s, "stats.grad_accum", n)?,
        count: r.u32(s, "stats.count", n)?,
    };
    let seed: [u8; 32] = hex::decode(&h.rng_seed)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| Error::format(16, "rng_seed must be 32 hex-encoded bytes"))?;
    let word_pos: u128 = h
        .rng_word_pos
        .parse()
        .map_err(|_| Error::format(16, "rng_word_pos is not an integer"))?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(h.rng_stream);
    rng.set_word_pos(word_pos);
    Ok(Checkpoint {
        avatar,
        opt,
        stats,
        iteration: h.iteration as usize,
        rng,
    })
}
