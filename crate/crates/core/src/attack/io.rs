use std::fmt::Write as _;
use std::path::Path;

use super::optimize::TraceRow;
use super::perturbation::{MaskShape, PerturbationSpec};
use crate::error::{Error, Result};
use crate::minidet::Reader;
use crate::Tensor;

const MAGIC: &[u8; 4] = b"PERT";
const VERSION: u32 = 1;

/// `PERT`, version, H, W, C, mask shape code (all u32 LE), then the mask and
/// delta as little-endian f64 in row-major order.
pub fn delta_dump_bytes(spec: &PerturbationSpec) -> Vec<u8> {
    let s = spec.delta.shape();
    let mut out = Vec::with_capacity(24 + 16 * spec.delta.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, s[0] as u32, s[1] as u32, s[2] as u32, spec.shape.code()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in spec.mask.data().iter().chain(spec.delta.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_delta_dump(bytes: &[u8]) -> Result<PerturbationSpec> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format(0, "missing PERT magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported perturbation version {version}")));
    }
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if h == 0 || w == 0 || c != 3 || h > 8192 || w > 8192 {
        return Err(Error::format(8, format!("bad dimensions {h} x {w} x {c}")));
    }
    let code_at = r.pos;
    let shape = MaskShape::from_code(r.u32()?).ok_or_else(|| Error::format(code_at, "unknown mask shape"))?;
    let n = h * w * c;
    let need = r.pos + 16 * n;
    if bytes.len() != need {
        return Err(Error::format(bytes.len().min(need), format!("expected {need} bytes, found {}", bytes.len())));
    }
    let mask = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let delta = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    PerturbationSpec::new(Tensor::new([h, w, c], mask)?, Tensor::new([h, w, c], delta)?, shape)
        .map_err(|e| Error::format(24, e.to_string()))
}

pub fn write_delta_dump(spec: &PerturbationSpec, path: &Path) -> Result<()> {
    std::fs::write(path, delta_dump_bytes(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_delta_dump(path: &Path) -> Result<PerturbationSpec> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_delta_dump(&bytes)
}

/// `epoch,J_term,TV_term,NPS_term,total`, values in shortest round-trip form.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("epoch,J_term,TV_term,NPS_term,total\n");
    for t in trace {
        let _ = writeln!(s, "{},{},{},{},{}", t.epoch, t.j, t.tv, t.nps, t.total);
    }
    s
}

pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(trace)).map_err(|e| Error::io(path, e))
}
