//! Little-endian binary formats for codebooks (`VQCB`) and index tensors (`VQIX`).
//!
//! ```text
//! VQCB: magic[4] version:u8 L:u32 block_w:u16 block_h:u16 sorted:u8
//!       L*(w*h) x f32, then (if sorted) L x u32 permutation
//! VQIX: magic[4] version:u8 s:u16 t:u16 C:u8 L:u32 codebook_hash[32]
//!       s*t*C x u16 in (row, col, channel) order
//! ```

use super::{Codebook, CodebookId, CodecError, IndexTensor, Permutation};

const CODEBOOK_MAGIC: &[u8; 4] = b"VQCB";
const INDEX_MAGIC: &[u8; 4] = b"VQIX";
const VERSION: u8 = 1;

pub fn write_codebook(cb: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + cb.as_flat().len() * 4 + cb.len() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(cb.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.block_w() as u16).to_le_bytes());
    out.extend_from_slice(&(cb.block_h() as u16).to_le_bytes());
    out.push(cb.is_sorted() as u8);
    for v in cb.as_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(perm) = cb.permutation() {
        for v in perm.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_codebook(bytes: &[u8]) -> Result<Codebook, CodecError> {
    let mut r = Reader::new(bytes);
    r.magic(CODEBOOK_MAGIC, "VQCB")?;
    let len = r.u32()? as usize;
    let block_w = r.u16()? as usize;
    let block_h = r.u16()? as usize;
    let sorted = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(CodecError::InvalidCodebook(format!(
                "sorted flag must be 0 or 1, got {other}"
            )))
        }
    };
    let values = len
        .checked_mul(block_w * block_h)
        .ok_or_else(|| CodecError::InvalidCodebook("codebook size overflows".into()))?;
    let expected = r.pos + values * 4 + if sorted { len * 4 } else { 0 };
    if bytes.len() != expected {
        return Err(CodecError::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let flat = (0..values).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    let cb = Codebook::new(block_w, block_h, flat)?;
    if sorted {
        let perm = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        cb.with_permutation(Permutation::new(perm)?)
    } else {
        Ok(cb)
    }
}

pub fn write_indices(idx: &IndexTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(46 + idx.indices().len() * 2);
    out.extend_from_slice(INDEX_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(idx.rows() as u16).to_le_bytes());
    out.extend_from_slice(&(idx.cols() as u16).to_le_bytes());
    out.push(idx.channels() as u8);
    out.extend_from_slice(&(idx.codebook_len() as u32).to_le_bytes());
    out.extend_from_slice(&idx.codebook_id().0);
    for v in idx.indices() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_indices(bytes: &[u8]) -> Result<IndexTensor, CodecError> {
    let mut r = Reader::new(bytes);
    r.magic(INDEX_MAGIC, "VQIX")?;
    let rows = r.u16()? as usize;
    let cols = r.u16()? as usize;
    let channels = r.u8()? as usize;
    let len = r.u32()? as usize;
    let mut hash = [0u8; 32];
    hash.copy_from_slice(r.take(32)?);
    let count = rows * cols * channels;
    let expected = r.pos + count * 2;
    if bytes.len() != expected {
        return Err(CodecError::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let indices = (0..count).map(|_| r.u16()).collect::<Result<Vec<_>, _>>()?;
    IndexTensor::new(rows, cols, channels, len, CodebookId(hash), indices)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos + n;
        let slice = self.bytes.get(self.pos..end).ok_or(CodecError::LengthMismatch {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(slice)
    }

    fn magic(&mut self, magic: &[u8; 4], name: &'static str) -> Result<(), CodecError> {
        if self.bytes.get(..4) != Some(magic.as_slice()) {
            return Err(CodecError::BadMagic { expected: name });
        }
        self.pos = 4;
        match self.u8()? {
            VERSION => Ok(()),
            other => Err(CodecError::UnsupportedVersion(other)),
        }
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
