//! On-disk formats for datasets and run manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::minidet::{BBox, LabeledScene, Reader};
use crate::Tensor;

const DATASET_MAGIC: &[u8; 4] = b"SCNS";
const DATASET_VERSION: u32 = 1;

/// `SCNS`, version, scene count, side (u32 LE); per scene an object count,
/// `(class u32, cx, cy, w, h f64)` per object, then `side * side * 3` bytes
/// quantised as `round(v * 255)`.
pub fn dataset_bytes(scenes: &[LabeledScene]) -> Result<Vec<u8>> {
    let side = scenes.first().map_or(0, |s| s.image.shape()[0]);
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, scenes.len() as u32, side as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in scenes {
        if s.image.shape() != [side, side, 3] {
            return Err(Error::shape(format!("scene {:?} differs from {side} x {side} x 3", s.image.shape())));
        }
        out.extend_from_slice(&(s.objects.len() as u32).to_le_bytes());
        for &(class, b) in &s.objects {
            out.extend_from_slice(&(class as u32).to_le_bytes());
            for v in [b.cx, b.cy, b.w, b.h] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend(s.image.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Vec<LabeledScene>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != DATASET_MAGIC {
        return Err(Error::format(0, "missing SCNS magic"));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::format(4, format!("unsupported dataset version {version}")));
    }
    let count = r.u32()? as usize;
    let side = r.u32()? as usize;
    if side == 0 && count > 0 {
        return Err(Error::format(12, "zero image side"));
    }
    let mut scenes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n_obj = r.u32()? as usize;
        let mut objects = Vec::with_capacity(n_obj.min(64));
        for _ in 0..n_obj {
            let class = r.u32()? as usize;
            let (cx, cy, w, h) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            objects.push((class, BBox::new(cx, cy, w, h)));
        }
        let pixels = r.take(side * side * 3)?;
        let image = Tensor::new([side, side, 3], pixels.iter().map(|&b| b as f64 / 255.0).collect())?;
        scenes.push(LabeledScene { image, objects });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after last scene"));
    }
    Ok(scenes)
}

pub fn write_dataset(scenes: &[LabeledScene], path: &Path) -> Result<()> {
    std::fs::write(path, dataset_bytes(scenes)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledScene>> {
    parse_dataset(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Record of one command run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 of the resolved configuration JSON.
    pub config_hash: String,
    pub seed: u64,
    /// Files written by the command, relative to the output directory.
    pub artifacts: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
