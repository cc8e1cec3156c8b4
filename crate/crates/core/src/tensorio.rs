//! Binary tensor container: raw little-endian 32-bit floats in row-major order,
//! next to a JSON sidecar that carries the shape and whatever metadata the
//! producing stage wants to record. Datasets, model checkpoints and scene dumps
//! all share this format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::{Error, Result};

/// Writes `values` as raw LE f32 bytes to `path`.
pub fn write_f32<P: AsRef<Path>>(path: P, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a raw LE f32 file. Errors if the byte count is not a multiple of 4.
pub fn read_f32<P: AsRef<Path>>(path: P) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(&path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::CorruptStream(format!(
            "{}: length {} is not a multiple of 4",
            path.as_ref().display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Convenience for f64 in-memory data: casts to f32 on disk.
pub fn write_f32_from_f64<P: AsRef<Path>>(path: P, values: &[f64]) -> Result<()> {
    let cast: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    write_f32(path, &cast)
}

pub fn read_f64<P: AsRef<Path>>(path: P) -> Result<Vec<f64>> {
    Ok(read_f32(path)?.into_iter().map(|v| v as f64).collect())
}

/// Writes a JSON sidecar with pretty, key-sorted formatting so that repeated
/// runs produce byte-identical files.
pub fn write_sidecar<P: AsRef<Path>, T: Serialize>(path: P, meta: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_sidecar<P: AsRef<Path>, T: DeserializeOwned>(path: P) -> Result<T> {
    let mut s = String::new();
    fs::File::open(path)?.read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}
