//! Binary tensor files used for masks, beamformer weights, features, and
//! intermediate dumps.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size      | field                                              |
//! |--------|-----------|----------------------------------------------------|
//! | 0      | 4         | magic `b"FFTN"`                                    |
//! | 4      | 4 (u32)   | version, currently 1                               |
//! | 8      | 4 (u32)   | dtype: 0 = f32, 1 = f64, 2 = complex f32, 3 = complex f64 |
//! | 12     | 4 (u32)   | ndim                                               |
//! | 16     | 8·ndim    | dims, u64 each, outermost first                    |
//! | …      | 4 (u32)   | metadata length in bytes                           |
//! | …      | meta_len  | UTF-8 metadata, `key=value` lines                  |
//! | …      | …         | payload, row-major; complex values interleaved re, im |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FFTN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C32(Vec<Complex32>),
    C64(Vec<Complex64>),
}

impl TensorData {
    fn code(&self) -> u32 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::C32(_) => 2,
            TensorData::C64(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::C32(v) => v.len(),
            TensorData::C64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
    pub meta: Vec<(String, String)>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::TensorFormat(format!(
                "dims {dims:?} describe {n} elements, payload has {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            meta: Vec::new(),
        })
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.data.code().to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::TensorFormat(format!("bad metadata entry {k:?}")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        match &self.data {
            TensorData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            TensorData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            TensorData::C32(v) => v.iter().try_for_each(|x| {
                w.write_all(&x.re.to_le_bytes())?;
                w.write_all(&x.im.to_le_bytes())
            })?,
            TensorData::C64(v) => v.iter().try_for_each(|x| {
                w.write_all(&x.re.to_le_bytes())?;
                w.write_all(&x.im.to_le_bytes())
            })?,
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::TensorFormat("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::TensorFormat(format!("unsupported version {version}")));
        }
        let code = read_u32(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            dims.push(u64::from_le_bytes(b) as usize);
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta_text =
            String::from_utf8(meta_bytes).map_err(|_| Error::TensorFormat("metadata is not UTF-8".into()))?;
        let meta = meta_text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let n: usize = dims.iter().product();
        let data = match code {
            0 => TensorData::F32(read_vec(&mut r, n, f32::from_le_bytes)?),
            1 => TensorData::F64(read_vec(&mut r, n, f64::from_le_bytes)?),
            2 => {
                let v: Vec<f32> = read_vec(&mut r, 2 * n, f32::from_le_bytes)?;
                TensorData::C32(v.chunks_exact(2).map(|c| Complex32::new(c[0], c[1])).collect())
            }
            3 => {
                let v: Vec<f64> = read_vec(&mut r, 2 * n, f64::from_le_bytes)?;
                TensorData::C64(v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
            }
            other => return Err(Error::TensorFormat(format!("unknown dtype {other}"))),
        };
        Ok(Self { dims, data, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_vec<const N: usize, T>(r: &mut impl Read, n: usize, conv: impl Fn([u8; N]) -> T) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; N];
    for _ in 0..n {
        r.read_exact(&mut b)
            .map_err(|_| Error::TensorFormat("truncated payload".into()))?;
        out.push(conv(b));
    }
    Ok(out)
}
