//! Minimal NPY v1.0/v2.0 reader and writer.
//!
//! Only little-endian `<f4`/`<f8`, C-ordered arrays are accepted. The header
//! dict is parsed by hand; it is a Python literal with three known keys.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::Precision;

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Decoded array with values widened to `f64`.
#[derive(Debug, Clone)]
pub(crate) struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub precision: Precision,
}

#[derive(Debug, PartialEq)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub(crate) fn read_npy<R: Read>(reader: &mut R) -> Result<NpyArray> {
    let mut preamble = [0u8; 8];
    reader
        .read_exact(&mut preamble)
        .map_err(|_| Error::MalformedHeader("file shorter than the npy preamble".into()))?;
    if &preamble[..6] != MAGIC {
        return Err(Error::MalformedHeader("bad magic string".into()));
    }
    let header_len = match (preamble[6], preamble[7]) {
        (1, 0) => {
            let mut len = [0u8; 2];
            read_header_bytes(reader, &mut len)?;
            u16::from_le_bytes(len) as usize
        }
        (2, 0) => {
            let mut len = [0u8; 4];
            read_header_bytes(reader, &mut len)?;
            u32::from_le_bytes(len) as usize
        }
        (major, minor) => {
            return Err(Error::MalformedHeader(format!(
                "unsupported format version {major}.{minor}"
            )))
        }
    };
    let mut raw = vec![0u8; header_len];
    read_header_bytes(reader, &mut raw)?;
    let text = std::str::from_utf8(&raw).map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let dict = parse_header_dict(text)?;

    let precision = match dict.descr.as_str() {
        "<f4" => Precision::F32,
        "<f8" => Precision::F64,
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    if dict.fortran_order {
        return Err(Error::FortranOrder);
    }

    let expected: usize = dict.shape.iter().product();
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::Io {
        path: Default::default(),
        source: e,
    })?;
    let item = precision.item_size();
    if payload.len() != expected * item {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len() / item,
        });
    }

    let data: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect(),
    };
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData { index });
    }

    Ok(NpyArray {
        shape: dict.shape,
        data,
        precision,
    })
}

fn read_header_bytes<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::MalformedHeader("truncated header".into()))
}

pub(crate) fn write_npy<W: Write>(
    writer: &mut W,
    shape: &[usize],
    data: impl IntoIterator<Item = f64>,
    precision: Precision,
) -> std::io::Result<()> {
    let dims = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        precision.descr(),
        dims
    );
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of ALIGN.
    let unpadded = 10 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    writer.write_all(MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(dict.len() as u16).to_le_bytes())?;
    writer.write_all(dict.as_bytes())?;
    for v in data {
        match precision {
            Precision::F32 => writer.write_all(&(v as f32).to_le_bytes())?,
            Precision::F64 => writer.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

fn parse_header_dict(text: &str) -> Result<HeaderDict> {
    let bad = |msg: &str| Error::MalformedHeader(msg.to_string());
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| bad("header is not a dict literal"))?;

    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;

    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after_key) = take_quoted(rest).ok_or_else(|| bad("expected quoted key"))?;
        let after_colon = after_key
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| bad("expected ':' after key"))?
            .trim_start();
        let remaining = match key {
            "descr" => {
                let (value, tail) = take_quoted(after_colon).ok_or_else(|| bad("descr must be a string"))?;
                descr = Some(value.to_string());
                tail
            }
            "fortran_order" => {
                if let Some(tail) = after_colon.strip_prefix("False") {
                    fortran_order = Some(false);
                    tail
                } else if let Some(tail) = after_colon.strip_prefix("True") {
                    fortran_order = Some(true);
                    tail
                } else {
                    return Err(bad("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let inner = after_colon
                    .strip_prefix('(')
                    .ok_or_else(|| bad("shape must be a tuple"))?;
                let close = inner.find(')').ok_or_else(|| bad("unterminated shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| bad("non-integer dimension")))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(bad(&format!("unexpected key '{other}'"))),
        };
        rest = remaining.trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }

    Ok(HeaderDict {
        descr: descr.ok_or_else(|| bad("missing 'descr'"))?,
        fortran_order: fortran_order.ok_or_else(|| bad("missing 'fortran_order'"))?,
        shape: shape.ok_or_else(|| bad("missing 'shape'"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}
