//! NumPy `.npy` v1.0 reading and writing for little-endian float arrays.
//!
//! CAMs travel as 2D `<f4` arrays; checkpoints use `<f8` so parameters
//! survive without rounding. Both are C-order only.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::cam::{CamError, RawMap};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("not an NPY file (bad magic)")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("malformed header: {0}")]
    HeaderParse(String),
    #[error("payload holds {actual} bytes, header promises {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("expected a {expected}-d array, found shape {shape:?}")]
    WrongRank { expected: usize, shape: Vec<usize> },
    #[error(transparent)]
    Map(#[from] CamError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

/// Decoded array: shape plus values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn header_text(dtype: Dtype, shape: &[usize]) -> String {
    let dims = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        dims
    );
    // magic(6) + version(2) + length(2) + header + '\n' is padded to ALIGN.
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');
    header
}

pub fn encode(dtype: Dtype, shape: &[usize], data: &[f64]) -> Vec<u8> {
    assert_eq!(
        shape.iter().product::<usize>(),
        data.len(),
        "npy shape does not match data length"
    );
    let header = header_text(dtype, shape);
    let mut out = Vec::with_capacity(10 + header.len() + data.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match dtype {
        Dtype::F4 => data
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F8 => data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Value of `'key': ...` inside the header dict, up to the next top-level
/// comma (or the closing paren for tuples).
fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str, NpyError> {
    let needle_sq = format!("'{key}'");
    let needle_dq = format!("\"{key}\"");
    let start = header
        .find(&needle_sq)
        .map(|i| i + needle_sq.len())
        .or_else(|| header.find(&needle_dq).map(|i| i + needle_dq.len()))
        .ok_or_else(|| NpyError::HeaderParse(format!("missing key {key:?}")))?;
    let rest = header[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| NpyError::HeaderParse(format!("no ':' after {key:?}")))?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')
            .map(|i| i + 1)
            .ok_or_else(|| NpyError::HeaderParse("unterminated shape tuple".into()))?
    } else {
        rest.find([',', '}'])
            .ok_or_else(|| NpyError::HeaderParse(format!("unterminated value for {key:?}")))?
    };
    Ok(rest[..end].trim())
}

fn parse_shape(text: &str) -> Result<Vec<usize>, NpyError> {
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| NpyError::HeaderParse(format!("shape {text:?} is not a tuple")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| NpyError::HeaderParse(format!("bad dimension {s:?}")))
        })
        .collect()
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray, NpyError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(NpyError::HeaderParse("file ends inside the preamble".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = 10 + header_len;
    if bytes.len() < body {
        return Err(NpyError::HeaderParse("file ends inside the header".into()));
    }
    let header = std::str::from_utf8(&bytes[10..body])
        .map_err(|_| NpyError::HeaderParse("header is not ASCII".into()))?;
    let header = header.trim();
    if !(header.starts_with('{') && header.ends_with('}')) {
        return Err(NpyError::HeaderParse("header is not a dict literal".into()));
    }

    let descr = dict_value(header, "descr")?.trim_matches(|c| c == '\'' || c == '"');
    let dtype = match descr {
        "<f4" => Dtype::F4,
        "<f8" => Dtype::F8,
        other => return Err(NpyError::UnsupportedDtype(other.to_string())),
    };
    match dict_value(header, "fortran_order")? {
        "False" => {}
        "True" => return Err(NpyError::HeaderParse("Fortran order is not supported".into())),
        other => return Err(NpyError::HeaderParse(format!("bad fortran_order {other:?}"))),
    }
    let shape = parse_shape(dict_value(header, "shape")?)?;

    let count: usize = shape.iter().product();
    let expected = count * dtype.size();
    let payload = &bytes[body..];
    if payload.len() != expected {
        return Err(NpyError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    let data = match dtype {
        Dtype::F4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F8 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(NpyArray { dtype, shape, data })
}

/// Reads a 2D float array as a raw map. Values are not range-checked here.
pub fn read_npy(path: impl AsRef<Path>) -> Result<RawMap, NpyError> {
    let arr = decode(&fs::read(path)?)?;
    if arr.shape.len() != 2 {
        return Err(NpyError::WrongRank {
            expected: 2,
            shape: arr.shape,
        });
    }
    Ok(RawMap::new(arr.shape[0], arr.shape[1], arr.data)?)
}

/// Writes a map as a 2D `<f4` array.
pub fn write_npy(path: impl AsRef<Path>, map: &RawMap) -> Result<(), NpyError> {
    let bytes = encode(Dtype::F4, &[map.height(), map.width()], map.values());
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
