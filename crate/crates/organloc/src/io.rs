//! Volume files: a raw little-endian payload next to a `<file>.json` sidecar
//! describing its geometry. Voxels are stored x-fastest, so the byte offset
//! of voxel `(i, j, k)` is `(i + nx * (j + ny * k)) * size_of(dtype)`.

use std::fs;
use std::path::{Path, PathBuf};

use organloc_core::{BoundingBox, Grid, LabelMap, Volume, Volume3D, VolumeKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ORDER: &str = "x-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
    U16,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub kind: VolumeKind,
    pub dtype: DType,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_min: Option<[i64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_max: Option<[i64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organ_id: Option<u16>,
}

impl Header {
    fn new(grid: &Grid, kind: VolumeKind, dtype: DType) -> Self {
        Header {
            dims: grid.dims,
            spacing: grid.spacing,
            origin: grid.origin,
            kind,
            dtype,
            order: ORDER.to_string(),
            box_min: None,
            box_max: None,
            organ_id: None,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::with_origin(self.dims, self.spacing, self.origin)?)
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.into(), source })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_payload(path: &Path, header: &Header, payload: Vec<u8>) -> Result<()> {
    write_bytes(path, &payload)?;
    write_json(&sidecar(path), header)
}

/// Write a floating-point volume with an f32 payload. Values are rounded to
/// f32, so a volume read from disk writes back byte-identically.
pub fn write_volume(path: &Path, vol: &Volume3D) -> Result<()> {
    write_volume_with(path, vol, Header::new(vol.grid(), vol.kind(), DType::F32))
}

/// Probability crop of one organ; the sidecar records its box on the parent grid.
pub fn write_crop(path: &Path, probs: &Volume3D, bbox: &BoundingBox, organ: u16) -> Result<()> {
    let mut h = Header::new(probs.grid(), probs.kind(), DType::F32);
    h.box_min = Some(bbox.min);
    h.box_max = Some(bbox.max);
    h.organ_id = Some(organ);
    write_volume_with(path, probs, h)
}

fn write_volume_with(path: &Path, vol: &Volume3D, header: Header) -> Result<()> {
    let mut payload = Vec::with_capacity(vol.len() * 4);
    for &v in vol.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::format(path, format!("value {v} does not fit an f32 payload")));
        }
        payload.extend_from_slice(&f.to_le_bytes());
    }
    write_payload(path, &header, payload)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let payload = labels.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_payload(path, &Header::new(labels.grid(), VolumeKind::Label, DType::U16), payload)
}

fn read_payload(path: &Path) -> Result<(Header, Vec<u8>)> {
    let header: Header = read_json(&sidecar(path))?;
    if header.order != ORDER {
        return Err(Error::format(path, format!("unsupported voxel order {:?}", header.order)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expect = header.dims.iter().product::<usize>() * header.dtype.size();
    if bytes.len() != expect {
        return Err(Error::format(path, format!("payload has {} bytes, header implies {expect}", bytes.len())));
    }
    Ok((header, bytes))
}

/// Read a floating-point volume (f32 or f64 payload).
pub fn read_volume(path: &Path) -> Result<Volume3D> {
    read_volume_with_header(path).map(|(_, v)| v)
}

pub fn read_volume_with_header(path: &Path) -> Result<(Header, Volume3D)> {
    let (header, bytes) = read_payload(path)?;
    let data: Vec<f64> = match header.dtype {
        DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        DType::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::U16 => return Err(Error::format(path, "expected a floating-point payload, found u16")),
    };
    let vol = Volume::new(header.grid()?, header.kind, data).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((header, vol))
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let (header, bytes) = read_payload(path)?;
    if header.dtype != DType::U16 || header.kind != VolumeKind::Label {
        return Err(Error::format(path, "expected a u16 label payload"));
    }
    let data = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    Ok(Volume::new(header.grid()?, VolumeKind::Label, data)?)
}
