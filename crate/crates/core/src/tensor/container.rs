//! Binary checkpoint container shared by the autoencoder and the classifiers.
//!
//! Layout: magic `VCAE1`, a `u8` format version, then records
//! `[name_len u16][name][rank u8][dims u32 x rank][dtype u8][payload]`, and a
//! trailing CRC32 of everything before it. All integers are little-endian.

use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"VCAE1";
pub const FORMAT_VERSION: u8 = 1;

const DTYPE_F32: u8 = 0;
/// Opaque bytes (rank 1, dims = [byte count]); used for JSON metadata.
const DTYPE_BYTES: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Tensor<f32>),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub payload: Payload,
}

impl Record {
    pub fn tensor(name: impl Into<String>, t: Tensor<f32>) -> Self {
        Self {
            name: name.into(),
            payload: Payload::F32(t),
        }
    }

    pub fn bytes(name: impl Into<String>, b: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            payload: Payload::Bytes(b),
        }
    }
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    for r in records {
        let name = r.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("record name too long: {}", r.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let (dims, dtype): (Vec<usize>, u8) = match &r.payload {
            Payload::F32(t) => (t.shape().to_vec(), DTYPE_F32),
            Payload::Bytes(b) => (vec![b.len()], DTYPE_BYTES),
        };
        let rank = u8::try_from(dims.len())
            .map_err(|_| Error::Shape(format!("rank {} too large", dims.len())))?;
        out.push(rank);
        for d in dims {
            let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(dtype);
        match &r.payload {
            Payload::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Payload::Bytes(b) => out.extend_from_slice(b),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity(format!("record truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < MAGIC.len() + 1 + 4 {
        return Err(Error::Integrity("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("CRC mismatch".into()));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(Error::Integrity("bad magic".into()));
    }
    let version = body[MAGIC.len()];
    if version != FORMAT_VERSION {
        return Err(Error::Integrity(format!("unsupported format version {version}")));
    }
    let mut cur = Cursor {
        buf: body,
        pos: MAGIC.len() + 1,
    };
    let mut records = Vec::new();
    while cur.pos < body.len() {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Integrity("record name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let payload = match cur.u8()? {
            DTYPE_F32 => {
                let raw = cur.take(count.checked_mul(4).ok_or_else(|| Error::Integrity("size overflow".into()))?)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Payload::F32(Tensor::new(dims, data)?)
            }
            DTYPE_BYTES if rank == 1 => Payload::Bytes(cur.take(count)?.to_vec()),
            other => return Err(Error::Integrity(format!("record {name}: unknown dtype {other}"))),
        };
        records.push(Record { name, payload });
    }
    Ok(records)
}

pub fn write(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Tensor records for every parameter, in name order.
pub fn param_records(store: &ParamStore<f32>) -> Vec<Record> {
    store
        .iter()
        .map(|(name, t)| Record::tensor(name, t.clone()))
        .collect()
}

/// Splits decoded records into a parameter store and the named byte records.
pub fn split_records(records: Vec<Record>) -> Result<(ParamStore<f32>, Vec<(String, Vec<u8>)>)> {
    let mut store = ParamStore::new();
    let mut blobs = Vec::new();
    for r in records {
        match r.payload {
            Payload::F32(t) => store
                .insert(r.name.clone(), t)
                .map_err(|_| Error::Integrity(format!("duplicate record {}", r.name)))?,
            Payload::Bytes(b) => blobs.push((r.name, b)),
        }
    }
    Ok((store, blobs))
}
