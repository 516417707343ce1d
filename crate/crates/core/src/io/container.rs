use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::IoError;

// Layout: MAGIC, u32 version, u64 header length, header JSON (meta +
// blob directory), blob payloads back to back, u32 CRC32 of everything
// before the checksum itself.
const MAGIC: &[u8; 8] = b"DRAPEBIN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    F32,
    F64,
    U32,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

/// One named, shaped, little-endian binary payload.
#[derive(Debug, Clone)]
pub struct Blob {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl Blob {
    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, data: &[f32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name: name.into(),
            dtype: Dtype::F32,
            shape,
            bytes,
        }
    }

    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut bytes = Vec::with_capacity(data.len() * 8);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name: name.into(),
            dtype: Dtype::F64,
            shape,
            bytes,
        }
    }

    pub fn from_u32(name: impl Into<String>, shape: Vec<usize>, data: &[u32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name: name.into(),
            dtype: Dtype::U32,
            shape,
            bytes,
        }
    }

    pub fn from_u8(name: impl Into<String>, shape: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            dtype: Dtype::U8,
            shape,
            bytes: data,
        }
    }

    pub fn to_f32(&self) -> Result<Vec<f32>, IoError> {
        self.expect(Dtype::F32)?;
        Ok(self
            .bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_f64(&self) -> Result<Vec<f64>, IoError> {
        self.expect(Dtype::F64)?;
        Ok(self
            .bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_u32(&self) -> Result<Vec<u32>, IoError> {
        self.expect(Dtype::U32)?;
        Ok(self
            .bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_u8(&self) -> Result<&[u8], IoError> {
        self.expect(Dtype::U8)?;
        Ok(&self.bytes)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn expect(&self, want: Dtype) -> Result<(), IoError> {
        if self.dtype == want {
            Ok(())
        } else {
            Err(IoError::DtypeMismatch {
                name: self.name.clone(),
                actual: self.dtype,
                requested: want,
            })
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    meta: serde_json::Value,
    blobs: Vec<BlobEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BlobEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: u64,
}

/// Writes a container file. Blob order is preserved and part of the file's
/// identity; callers wanting byte-identical outputs must pass identical
/// meta and blobs.
pub fn write_container(
    path: &Path,
    meta: &serde_json::Value,
    blobs: &[Blob],
) -> Result<(), IoError> {
    let header = Header {
        meta: meta.clone(),
        blobs: blobs
            .iter()
            .map(|b| BlobEntry {
                name: b.name.clone(),
                dtype: b.dtype,
                shape: b.shape.clone(),
                bytes: b.bytes.len() as u64,
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut crc = Crc32::new();
    let mut out = BufWriter::new(File::create(path)?);
    let emit = |out: &mut BufWriter<File>, crc: &mut Crc32, data: &[u8]| -> Result<(), IoError> {
        crc.update(data);
        out.write_all(data)?;
        Ok(())
    };
    emit(&mut out, &mut crc, MAGIC)?;
    emit(&mut out, &mut crc, &VERSION.to_le_bytes())?;
    emit(
        &mut out,
        &mut crc,
        &(header_bytes.len() as u64).to_le_bytes(),
    )?;
    emit(&mut out, &mut crc, &header_bytes)?;
    for b in blobs {
        emit(&mut out, &mut crc, &b.bytes)?;
    }
    out.write_all(&crc.finish().to_le_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(serde_json::Value, Vec<Blob>), IoError> {
    let mut data = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut data)?;
    if data.len() < MAGIC.len() + 4 + 8 + 4 {
        return Err(IoError::Truncated("shorter than fixed fields".into()));
    }
    let (body, stored_crc) = data.split_at(data.len() - 4);
    let stored = u32::from_le_bytes(stored_crc.try_into().unwrap());
    let mut crc = Crc32::new();
    crc.update(body);
    let computed = crc.finish();
    if stored != computed {
        return Err(IoError::ChecksumMismatch { stored, computed });
    }
    if &body[..8] != MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| IoError::Truncated("header".into()))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])?;
    let mut offset = header_end;
    let mut blobs = Vec::with_capacity(header.blobs.len());
    for e in header.blobs {
        let end = offset
            .checked_add(e.bytes as usize)
            .filter(|&x| x <= body.len())
            .ok_or_else(|| IoError::Truncated(format!("blob {:?}", e.name)))?;
        if e.shape.iter().product::<usize>() * e.dtype.width() != e.bytes as usize {
            return Err(IoError::Truncated(format!(
                "blob {:?}: shape/bytes disagree",
                e.name
            )));
        }
        blobs.push(Blob {
            name: e.name,
            dtype: e.dtype,
            shape: e.shape,
            bytes: body[offset..end].to_vec(),
        });
        offset = end;
    }
    if offset != body.len() {
        return Err(IoError::Truncated("trailing bytes after last blob".into()));
    }
    Ok((header.meta, blobs))
}

/// Looks a blob up by name.
pub fn find_blob<'a>(blobs: &'a [Blob], name: &str) -> Result<&'a Blob, IoError> {
    blobs
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| IoError::BlobMissing(name.to_string()))
}

/// CRC-32 (IEEE 802.3, reflected 0xEDB88320), the common zip/PNG variant.
struct Crc32 {
    state: u32,
    table: [u32; 256],
}

impl Crc32 {
    fn new() -> Self {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 {
                    0xEDB8_8320 ^ (c >> 1)
                } else {
                    c >> 1
                };
            }
            *slot = c;
        }
        Self {
            state: 0xFFFF_FFFF,
            table,
        }
    }

    fn update(&mut self, data: &[u8]) {
        for &b in data {
            self.state = self.table[((self.state ^ b as u32) & 0xFF) as usize] ^ (self.state >> 8);
        }
    }

    fn finish(&self) -> u32 {
        self.state ^ 0xFFFF_FFFF
    }
}
