//! The `AETF` tensor file format.
//!
//! ```text
//! "AETF" | u32 version = 1 | u32 ndim | ndim * u32 dim | f32 data... (row-major)
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::encoder::AETensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AETF";
const VERSION: u32 = 1;
const MAX_NDIM: usize = 16;

/// A decoded tensor: dims plus row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::Shape(format!("dims {dims:?} do not match {} values", data.len())));
    }
    let mut buf = Vec::with_capacity(12 + 4 * dims.len() + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION).unwrap();
    buf.write_u32::<LittleEndian>(dims.len() as u32).unwrap();
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        buf.write_u32::<LittleEndian>(d).unwrap();
    }
    for &v in data {
        buf.write_f32::<LittleEndian>(v).unwrap();
    }
    Ok(buf)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<RawTensor> {
    let mut cur = Cursor::new(bytes);
    let eof = |cur: &Cursor<&[u8]>| Error::parse_at_byte(cur.position(), "truncated tensor file");
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| eof(&cur))?;
    if &magic != MAGIC {
        return Err(Error::parse_at_byte(0, "bad magic, expected \"AETF\""));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))?;
    if version != VERSION {
        return Err(Error::parse_at_byte(4, format!("unsupported tensor version {version}")));
    }
    let ndim = cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))? as usize;
    if ndim > MAX_NDIM {
        return Err(Error::parse_at_byte(8, format!("implausible ndim {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))? as usize);
    }
    let remaining = bytes.len() - cur.position() as usize;
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= remaining))
        .ok_or_else(|| eof(&cur))?;
    let mut data = vec![0.0f32; n];
    cur.read_f32_into::<LittleEndian>(&mut data).map_err(|_| eof(&cur))?;
    if cur.position() as usize != bytes.len() {
        return Err(Error::parse_at_byte(cur.position(), "trailing bytes after tensor data"));
    }
    Ok(RawTensor { dims, data })
}

pub fn save_tensor(path: impl AsRef<Path>, t: &AETensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(&t.dims(), &t.data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a 4-axis `C x M* x H x W` tensor.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<AETensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_tensor(&bytes)?;
    AETensor::from_dims(&raw.dims, raw.data)
}
