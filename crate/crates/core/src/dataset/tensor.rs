//! Binary tensor container.
//!
//! Layout: the 9-byte magic `DSCT-TSR1`, a little-endian `u32` header length,
//! a JSON header `{"dtype":"f32","shape":[...],"order":"row-major"}`, then the
//! raw little-endian payload. Image and sinogram files always use `f32`; the
//! `f64` and `u32` dtypes are only used by the system-matrix cache.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 9] = b"DSCT-TSR1";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
            TensorData::U32(_) => "u32",
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
}

fn tensor_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Tensor {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut fh = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        fh.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode(shape: &[usize], data: &TensorData) -> Result<Vec<u8>> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {count} values, got {}",
            data.len()
        )));
    }
    let header = serde_json::to_vec(&Header {
        dtype: data.dtype().to_string(),
        shape: shape.to_vec(),
        order: "row-major".to_string(),
    })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 8 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    match data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, TensorData)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(tensor_err(path, "bad magic, not a DSCT-TSR1 tensor file"));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(tensor_err(path, "truncated header length"));
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(tensor_err(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| tensor_err(path, format!("header parse failure: {e}")))?;
    if header.order != "row-major" {
        return Err(tensor_err(path, format!("unsupported order {:?}", header.order)));
    }
    let payload = &rest[header_len..];
    let count: usize = header.shape.iter().product();
    let width = match header.dtype.as_str() {
        "f32" | "u32" => 4,
        "f64" => 8,
        other => return Err(tensor_err(path, format!("unsupported dtype {other:?}"))),
    };
    if payload.len() != width * count {
        return Err(tensor_err(
            path,
            format!(
                "payload is {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                width * count
            ),
        ));
    }
    let data = match header.dtype.as_str() {
        "f32" => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        "u32" => TensorData::U32(
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok((header.shape, data))
}

pub fn write_any(path: &Path, shape: &[usize], data: &TensorData) -> Result<()> {
    let bytes = encode(shape, data)?;
    write_atomic(path, &bytes)
}

pub fn read_any(path: &Path) -> Result<(Vec<usize>, TensorData)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

pub fn write_tensor(path: &Path, shape: &[usize], values: &[f32]) -> Result<()> {
    write_any(path, shape, &TensorData::F32(values.to_vec()))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    match read_any(path)? {
        (shape, TensorData::F32(v)) => Ok((shape, v)),
        _ => Err(tensor_err(path, "expected dtype f32")),
    }
}

/// Writes an `f64` buffer as an `f32` tensor.
pub fn write_f64_as_f32(path: &Path, shape: &[usize], values: &[f64]) -> Result<()> {
    let v: Vec<f32> = values.iter().map(|&x| x as f32).collect();
    write_tensor(path, shape, &v)
}

pub fn read_as_f64(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let (shape, v) = read_tensor(path)?;
    Ok((shape, v.into_iter().map(f64::from).collect()))
}
