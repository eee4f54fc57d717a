//! Grid file formats.
//!
//! `GRD1`: one JSON header line
//! `{"magic":"GRD1","dims":[...],"channels":N,"dtype":"u16"|"f32","order":"C"}`
//! terminated by `\n`, then the raw little-endian payload in C order with
//! channels last.
//!
//! 2D single-channel integer maps can also be stored as binary PGM (`P5`,
//! maxval 65535, big-endian samples).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, GridIoError, Result};
use crate::grid::{GridShape, InstanceMap, LogitField, ProbabilityField, SemanticMap};

const MAGIC: &str = "GRD1";
const MAX_HEADER: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    U16(Vec<u16>),
    F32(Vec<f32>),
}

/// Untyped grid as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub shape: GridShape,
    pub channels: usize,
    pub data: GridData,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    magic: String,
    dims: Vec<usize>,
    channels: usize,
    dtype: String,
    order: String,
}

impl RawGrid {
    fn dtype(&self) -> &'static str {
        match self.data {
            GridData::U16(_) => "u16",
            GridData::F32(_) => "f32",
        }
    }

    fn check(&self) -> std::result::Result<(), GridIoError> {
        let n = self.shape.len() * self.channels;
        let len = match &self.data {
            GridData::U16(v) => v.len(),
            GridData::F32(v) => v.len(),
        };
        if len != n || self.channels == 0 {
            return Err(GridIoError::DimMismatch(format!(
                "{len} values for {:?} x {} channels",
                self.shape.dims(),
                self.channels
            )));
        }
        Ok(())
    }
}

pub fn encode_grd1(grid: &RawGrid) -> Result<Vec<u8>> {
    grid.check()?;
    let header = Header {
        magic: MAGIC.into(),
        dims: grid.shape.dims().to_vec(),
        channels: grid.channels,
        dtype: grid.dtype().into(),
        order: "C".into(),
    };
    let mut out = serde_json::to_vec(&header)
        .map_err(|e| GridIoError::MalformedHeader(e.to_string()))?;
    out.push(b'\n');
    match &grid.data {
        GridData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        GridData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode_grd1(bytes: &[u8]) -> std::result::Result<RawGrid, GridIoError> {
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| GridIoError::MalformedHeader("no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| GridIoError::MalformedHeader(e.to_string()))?;
    if header.magic != MAGIC {
        return Err(GridIoError::MalformedHeader(format!("bad magic {:?}", header.magic)));
    }
    if header.order != "C" {
        return Err(GridIoError::MalformedHeader(format!("unsupported order {:?}", header.order)));
    }
    if header.channels == 0 {
        return Err(GridIoError::MalformedHeader("zero channels".into()));
    }
    let shape = GridShape::new(&header.dims)
        .map_err(|_| GridIoError::DimMismatch(format!("unsupported dims {:?}", header.dims)))?;
    let count = shape.len() * header.channels;
    let payload = &bytes[nl + 1..];
    let width = match header.dtype.as_str() {
        "u16" => 2,
        "f32" => 4,
        other => return Err(GridIoError::MalformedHeader(format!("unknown dtype {other:?}"))),
    };
    let expected = count * width;
    if payload.len() < expected {
        return Err(GridIoError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(GridIoError::DimMismatch(format!(
            "payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let data = if width == 2 {
        GridData::U16(
            payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect(),
        )
    } else {
        GridData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
    };
    Ok(RawGrid {
        shape,
        channels: header.channels,
        data,
    })
}

pub fn encode_pgm(grid: &RawGrid) -> Result<Vec<u8>> {
    grid.check()?;
    let GridData::U16(v) = &grid.data else {
        return Err(GridIoError::Unsupported("PGM holds integer grids only".into()).into());
    };
    if grid.shape.ndim() != 2 || grid.channels != 1 {
        return Err(GridIoError::Unsupported("PGM holds 2D single-channel grids only".into()).into());
    }
    let (h, w) = (grid.shape.dims()[0], grid.shape.dims()[1]);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes()));
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<RawGrid, GridIoError> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GridIoError::MalformedHeader("incomplete PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(GridIoError::MalformedHeader(format!("bad PGM magic {:?}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| GridIoError::MalformedHeader(format!("bad PGM field {s:?}")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(GridIoError::MalformedHeader(format!("bad PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let shape = GridShape::new(&[h, w])
        .map_err(|_| GridIoError::DimMismatch(format!("bad PGM size {w}x{h}")))?;
    let width = if maxval < 256 { 1 } else { 2 };
    let expected = shape.len() * width;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < expected {
        return Err(GridIoError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = if width == 1 {
        payload[..expected].iter().map(|&b| b as u16).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    };
    Ok(RawGrid {
        shape,
        channels: 1,
        data: GridData::U16(data),
    })
}

/// Reads a GRD1 or PGM file, detected from its first bytes.
pub fn read_grid(path: &Path) -> Result<RawGrid> {
    let bytes = fs::read(path).map_err(|source| GridIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let grid = if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)?
    } else {
        decode_grd1(&bytes)?
    };
    Ok(grid)
}

/// Writes GRD1, or PGM when the path ends in `.pgm`.
pub fn write_grid(grid: &RawGrid, path: &Path) -> Result<()> {
    let pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if pgm { encode_pgm(grid)? } else { encode_grd1(grid)? };
    fs::write(path, bytes).map_err(|source| {
        GridIoError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

impl TryFrom<&InstanceMap> for RawGrid {
    type Error = Error;

    fn try_from(g: &InstanceMap) -> Result<Self> {
        let data = g
            .labels()
            .iter()
            .map(|&l| {
                u16::try_from(l)
                    .map_err(|_| Error::InvalidValue(format!("label {l} does not fit in u16")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RawGrid {
            shape: g.shape().clone(),
            channels: 1,
            data: GridData::U16(data),
        })
    }
}

impl From<&SemanticMap> for RawGrid {
    fn from(h: &SemanticMap) -> Self {
        RawGrid {
            shape: h.shape().clone(),
            channels: 1,
            data: GridData::U16(h.classes().iter().map(|&c| c as u16).collect()),
        }
    }
}

impl From<&ProbabilityField> for RawGrid {
    fn from(z: &ProbabilityField) -> Self {
        RawGrid {
            shape: z.shape().clone(),
            channels: z.channels(),
            data: GridData::F32(z.values().iter().map(|&x| x as f32).collect()),
        }
    }
}

impl From<&LogitField> for RawGrid {
    fn from(t: &LogitField) -> Self {
        RawGrid {
            shape: t.shape().clone(),
            channels: t.channels(),
            data: GridData::F32(t.values().iter().map(|&x| x as f32).collect()),
        }
    }
}

impl RawGrid {
    fn integers(&self, what: &str) -> Result<&[u16]> {
        match (&self.data, self.channels) {
            (GridData::U16(v), 1) => Ok(v),
            _ => Err(GridIoError::Unsupported(format!(
                "{what} must be a single-channel u16 grid"
            ))
            .into()),
        }
    }

    fn reals(&self, what: &str) -> Result<Vec<f64>> {
        match &self.data {
            GridData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            GridData::U16(_) => {
                Err(GridIoError::Unsupported(format!("{what} must be an f32 grid")).into())
            }
        }
    }

    pub fn into_instance_map(self) -> Result<InstanceMap> {
        let labels = self.integers("instance map")?.iter().map(|&x| x as u32).collect();
        InstanceMap::new(self.shape, labels)
    }

    pub fn into_semantic_map(self) -> Result<SemanticMap> {
        let classes = self
            .integers("semantic map")?
            .iter()
            .map(|&x| u8::try_from(x).unwrap_or(u8::MAX))
            .collect();
        SemanticMap::new(self.shape, classes)
    }

    pub fn into_probability_field(self) -> Result<ProbabilityField> {
        let values = self.reals("probability field")?;
        ProbabilityField::new(self.shape, self.channels, values)
    }

    pub fn into_logit_field(self) -> Result<LogitField> {
        let values = self.reals("logit field")?;
        LogitField::new(self.shape, self.channels, values)
    }
}
