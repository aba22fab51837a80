//! `GBM1` container for mesh blendshape models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MeshBlendshapeModel, MeshParts, Skeleton};
use crate::container::{read_file, write_atomic, ContainerReader, SectionInfo, SectionWriter};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GBMODEL1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    #[serde(rename = "V")]
    vertex_count: u64,
    #[serde(rename = "T")]
    triangle_count: u64,
    #[serde(rename = "K")]
    blendshape_count: u64,
    #[serde(rename = "J")]
    joint_count: u64,
    joint_names: Vec<String>,
    sections: Vec<SectionInfo>,
}

pub fn to_bytes(model: &MeshBlendshapeModel) -> Result<Vec<u8>> {
    let sk = model.skeleton();
    let mut w = SectionWriter::new();
    w.f32_from_f64(
        "vertices0",
        model.vertices().iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>().into_iter(),
    );
    w.u32("faces", model.faces().iter().flatten().copied().collect::<Vec<_>>().into_iter());
    w.f32_from_f64(
        "deltas",
        model.all_deltas().iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>().into_iter(),
    );
    w.f32_from_f64(
        "rest_transforms",
        sk.rest_matrices().iter().flatten().copied().collect::<Vec<_>>().into_iter(),
    );
    w.i32("parents", sk.parents().iter().copied());
    w.f32_from_f64("skin_weights", model.skin_weights().iter().copied());
    let header = Header {
        version: 1,
        vertex_count: model.vertex_count() as u64,
        triangle_count: model.triangle_count() as u64,
        blendshape_count: model.blendshape_count() as u64,
        joint_count: model.joint_count() as u64,
        joint_names: sk.names().to_vec(),
        sections: w.infos(),
    };
    w.finish(MAGIC, &header)
}

pub fn from_bytes(bytes: &[u8]) -> Result<MeshBlendshapeModel> {
    let r = ContainerReader::parse(bytes, MAGIC)?;
    let h: Header = r.header()?;
    if h.version != 1 {
        return Err(Error::format(16, format!("unsupported version {}", h.version)));
    }
    let (v, t, k, j) = (
        h.vertex_count as usize,
        h.triangle_count as usize,
        h.blendshape_count as usize,
        h.joint_count as usize,
    );
    if h.joint_names.len() != j {
        return Err(Error::format(
            16,
            format!("{} joint names for J = {j}", h.joint_names.len()),
        ));
    }
    let s = &h.sections;
    let vertices = r.f32_as_f64(s, "vertices0", v * 3)?;
    let faces = r.u32(s, "faces", t * 3)?;
    let deltas = r.f32_as_f64(s, "deltas", k * v * 3)?;
    let rest = r.f32_as_f64(s, "rest_transforms", j * 16)?;
    let parents = r.i32(s, "parents", j)?;
    let skin_weights = r.f32_as_f64(s, "skin_weights", v * j)?;

    if let Some(pos) = faces.iter().position(|&i| i as usize >= v) {
        return Err(Error::format(
            r.offset_of(s, "faces") + 4 * pos as u64,
            format!("face index {} out of range (V = {v})", faces[pos]),
        ));
    }
    let rest_matrices = rest
        .chunks_exact(16)
        .map(|c| c.try_into().unwrap())
        .collect();
    let skeleton = Skeleton::from_matrices(parents, rest_matrices, h.joint_names)?;
    MeshBlendshapeModel::new(MeshParts {
        vertices: vertices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        faces: faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        deltas: deltas.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        blendshape_count: k,
        skeleton,
        skin_weights,
    })
}

pub fn load_mesh_model(path: &Path) -> Result<MeshBlendshapeModel> {
    from_bytes(&read_file(path)?)
}

pub fn save_mesh_model(model: &MeshBlendshapeModel, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}
