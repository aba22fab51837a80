//! Shared layout of the binary container files (`GBMODEL1`, `GBAVATAR`).
//!
//! ```text
//! [8 bytes magic][u64 LE header length][UTF-8 JSON header][data block]
//! ```
//!
//! The JSON header lists each binary section with its dtype, element count
//! and byte offset relative to the start of the data block. Every
//! multi-byte value is little-endian.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    U32,
    I32,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 | Dtype::U32 | Dtype::I32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub dtype: Dtype,
    pub offset: u64,
    pub count: u64,
}

/// Accumulates binary sections in write order.
#[derive(Default)]
pub struct SectionWriter {
    infos: Vec<SectionInfo>,
    data: Vec<u8>,
}

impl SectionWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, dtype: Dtype, count: usize) {
        self.infos.push(SectionInfo {
            name: name.to_string(),
            dtype,
            offset: self.data.len() as u64,
            count: count as u64,
        });
    }

    /// Writes `f64` values narrowed to little-endian `f32`.
    pub fn f32_from_f64(&mut self, name: &str, values: impl ExactSizeIterator<Item = f64>) {
        self.push(name, Dtype::F32, values.len());
        for v in values {
            self.data.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    pub fn f32(&mut self, name: &str, values: &[f32]) {
        self.push(name, Dtype::F32, values.len());
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn f64(&mut self, name: &str, values: &[f64]) {
        self.push(name, Dtype::F64, values.len());
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn u32(&mut self, name: &str, values: impl ExactSizeIterator<Item = u32>) {
        self.push(name, Dtype::U32, values.len());
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn i32(&mut self, name: &str, values: impl ExactSizeIterator<Item = i32>) {
        self.push(name, Dtype::I32, values.len());
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn u8(&mut self, name: &str, values: &[u8]) {
        self.push(name, Dtype::U8, values.len());
        self.data.extend_from_slice(values);
    }

    pub fn infos(&self) -> Vec<SectionInfo> {
        self.infos.clone()
    }

    /// Serializes `magic`, the header (which must embed [`infos`](Self::infos))
    /// and the data block.
    pub fn finish<H: Serialize>(self, magic: &[u8; 8], header: &H) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(header)?;
        let mut out = Vec::with_capacity(16 + json.len() + self.data.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.data);
        Ok(out)
    }
}

/// Parsed view of a container: header JSON plus the raw data block.
pub struct ContainerReader<'a> {
    pub header_json: &'a [u8],
    data: &'a [u8],
    data_offset: u64,
}

impl<'a> ContainerReader<'a> {
    pub fn parse(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(0, "file shorter than magic + header length"));
        }
        if &bytes[..8] != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&bytes[..8]),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let end = 16u64
            .checked_add(len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::format(8, format!("header length {len} exceeds file size")))?;
        Ok(Self {
            header_json: &bytes[16..end as usize],
            data: &bytes[end as usize..],
            data_offset: end,
        })
    }

    pub fn header<H: for<'de> Deserialize<'de>>(&self) -> Result<H> {
        serde_json::from_slice(self.header_json)
            .map_err(|e| Error::format(16, format!("malformed header: {e}")))
    }

    fn section_bytes(
        &self,
        sections: &[SectionInfo],
        name: &str,
        dtype: Dtype,
        expected: usize,
    ) -> Result<&'a [u8]> {
        let info = sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::format(16, format!("missing section `{name}`")))?;
        let abs = self.data_offset + info.offset;
        if info.dtype != dtype {
            return Err(Error::format(
                abs,
                format!("section `{name}` has dtype {:?}, expected {dtype:?}", info.dtype),
            ));
        }
        if info.count as usize != expected {
            return Err(Error::format(
                abs,
                format!(
                    "section `{name}` has {} elements, expected {expected}",
                    info.count
                ),
            ));
        }
        let start = info.offset as usize;
        let end = start + expected * dtype.size();
        if end > self.data.len() {
            return Err(Error::format(
                abs,
                format!("section `{name}` runs past end of file"),
            ));
        }
        Ok(&self.data[start..end])
    }

    pub fn f32_as_f64(
        &self,
        sections: &[SectionInfo],
        name: &str,
        expected: usize,
    ) -> Result<Vec<f64>> {
        let b = self.section_bytes(sections, name, Dtype::F32, expected)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn f32(&self, sections: &[SectionInfo], name: &str, expected: usize) -> Result<Vec<f32>> {
        let b = self.section_bytes(sections, name, Dtype::F32, expected)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64(&self, sections: &[SectionInfo], name: &str, expected: usize) -> Result<Vec<f64>> {
        let b = self.section_bytes(sections, name, Dtype::F64, expected)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32(&self, sections: &[SectionInfo], name: &str, expected: usize) -> Result<Vec<u32>> {
        let b = self.section_bytes(sections, name, Dtype::U32, expected)?;
        Ok(b.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn i32(&self, sections: &[SectionInfo], name: &str, expected: usize) -> Result<Vec<i32>> {
        let b = self.section_bytes(sections, name, Dtype::I32, expected)?;
        Ok(b.chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u8(&self, sections: &[SectionInfo], name: &str, expected: usize) -> Result<Vec<u8>> {
        Ok(self
            .section_bytes(sections, name, Dtype::U8, expected)?
            .to_vec())
    }

    /// Absolute byte offset of a section, for error messages.
    pub fn offset_of(&self, sections: &[SectionInfo], name: &str) -> u64 {
        sections
            .iter()
            .find(|s| s.name == name)
            .map(|s| self.data_offset + s.offset)
            .unwrap_or(16)
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
