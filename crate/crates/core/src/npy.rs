//! Reading and writing the numpy `.npy` format.
//!
//! Only what the interchange format needs is supported: little-endian `f4`/`f8`
//! element types in C order. Files are always written as version 1.0; version
//! 2.0 headers are accepted on read.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Element types that can be stored in an npy file.
pub trait Element: Copy {
    const DESCR: &'static str;
    const SIZE: usize;
    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
}

impl Element for f32 {
    const DESCR: &'static str = "<f4";
    const SIZE: usize = 4;
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Element for f64 {
    const DESCR: &'static str = "<f8";
    const SIZE: usize = 8;
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// A dense C-order array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Npy(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Array { shape, data })
    }
}

fn header_string(descr: &str, shape: &[usize]) -> String {
    let shape_str = match shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}");
    // magic(6) + version(2) + len(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    format!("{dict}{}\n", " ".repeat(pad))
}

/// Serializes an array to npy v1.0 bytes.
pub fn to_bytes<T: Element>(shape: &[usize], data: &[T]) -> Result<Vec<u8>> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::Npy(format!(
            "shape {shape:?} holds {n} values but {} were given",
            data.len()
        )));
    }
    let header = header_string(T::DESCR, shape);
    let header_len = u16::try_from(header.len())
        .map_err(|_| Error::Npy("header too long for format version 1.0".into()))?;
    let mut out = Vec::with_capacity(10 + header.len() + data.len() * T::SIZE);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &v in data {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn write_file<T: Element>(path: &Path, shape: &[usize], data: &[T]) -> Result<()> {
    let bytes = to_bytes(shape, data)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| Error::Npy(format!("header lacks key `{key}`")))?
        + pat.len();
    Ok(dict[start..].trim_start())
}

fn parse_header(dict: &str) -> Result<Header> {
    let descr_raw = dict_value(dict, "descr")?;
    let descr = descr_raw
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| Error::Npy("cannot parse descr".into()))?
        .to_string();

    let fo = dict_value(dict, "fortran_order")?;
    let fortran_order = if fo.starts_with("True") {
        true
    } else if fo.starts_with("False") {
        false
    } else {
        return Err(Error::Npy("cannot parse fortran_order".into()));
    };

    let sh = dict_value(dict, "shape")?;
    let inner = sh
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Npy("cannot parse shape".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::Npy(format!("bad shape entry `{s}`"))))
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        descr,
        fortran_order,
        shape,
    })
}

/// Parses npy bytes holding elements of type `T`.
pub fn from_bytes<T: Element>(bytes: &[u8]) -> Result<Array<T>> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Npy("missing magic string".into()));
    }
    let (header_len, offset) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Npy("truncated header".into()));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(Error::Npy(format!("unsupported format version {v}"))),
    };
    let body_start = offset + header_len;
    if bytes.len() < body_start {
        return Err(Error::Npy("truncated header".into()));
    }
    let dict = std::str::from_utf8(&bytes[offset..body_start])
        .map_err(|_| Error::Npy("header is not valid text".into()))?;
    let header = parse_header(dict)?;
    if header.fortran_order {
        return Err(Error::Npy("Fortran-order arrays are not supported".into()));
    }
    if header.descr != T::DESCR {
        return Err(Error::Npy(format!(
            "expected dtype {}, file has {}",
            T::DESCR,
            header.descr
        )));
    }
    let n: usize = header.shape.iter().product();
    let body = &bytes[body_start..];
    if body.len() != n * T::SIZE {
        return Err(Error::Npy(format!(
            "shape {:?} needs {} bytes of data, found {}",
            header.shape,
            n * T::SIZE,
            body.len()
        )));
    }
    let data = body.chunks_exact(T::SIZE).map(T::read_le).collect();
    Ok(Array {
        shape: header.shape,
        data,
    })
}

pub fn read_file<T: Element>(path: &Path) -> Result<Array<T>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Npy(m) => Error::Npy(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes an f64 matrix as a 2-D C-order array.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let rows: Vec<f64> = m.transpose().as_slice().to_vec();
    write_file(path, &[m.nrows(), m.ncols()], &rows)
}

/// Reads a 2-D f64 array into a matrix.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let a = read_file::<f64>(path)?;
    if a.shape.len() != 2 {
        return Err(Error::Npy(format!(
            "{}: expected a 2-D array, got shape {:?}",
            path.display(),
            a.shape
        )));
    }
    Ok(DMatrix::from_row_slice(a.shape[0], a.shape[1], &a.data))
}
