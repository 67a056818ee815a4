//! Block vector quantization: codebooks, index tensors, encode and decode.
//!
//! One codebook is shared by every channel. Each channel is cut into
//! `block_h × block_w` blocks; every block becomes the index of its
//! Euclidean-nearest codeword, yielding an `s × t × C` index tensor.

mod format;
mod lbg;

pub use format::{read_codebook, read_indices, write_codebook, write_indices};
pub use lbg::{train_codebook_lbg, LbgConfig, LbgRun, LbgStage};

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image_io::ImageTensor;

/// Largest codebook the 16-bit index format can address.
pub const MAX_CODEBOOK_LEN: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("invalid index tensor: {0}")]
    InvalidIndices(String),
    #[error("image {height}x{width} is not divisible into {block_h}x{block_w} blocks")]
    NonDivisible {
        height: usize,
        width: usize,
        block_h: usize,
        block_w: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index tensor was encoded with codebook {expected}, got {found}")]
    CodebookMismatch {
        expected: CodebookId,
        found: CodebookId,
    },
    #[error("index {index} out of range for codebook of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{vectors} training vectors cannot support {required} codewords")]
    InsufficientTrainingData { vectors: usize, required: usize },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

/// SHA-256 of a codebook's geometry and codeword values.
///
/// The sorting permutation is not part of the identity: two codebooks with the
/// same codewords in the same order decode identically.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodebookId(pub [u8; 32]);

impl fmt::Display for CodebookId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for CodebookId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CodebookId({self})")
    }
}

/// A bijection on `[0, L)` mapping old codeword index to new codeword index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(Vec<u32>);

impl Permutation {
    pub fn new(map: Vec<u32>) -> Result<Self, CodecError> {
        let mut seen = vec![false; map.len()];
        for &target in &map {
            let slot = seen.get_mut(target as usize).ok_or_else(|| {
                CodecError::InvalidPermutation(format!(
                    "target {target} out of range for length {}",
                    map.len()
                ))
            })?;
            if *slot {
                return Err(CodecError::InvalidPermutation(format!(
                    "target {target} appears twice"
                )));
            }
            *slot = true;
        }
        Ok(Self(map))
    }

    pub fn identity(len: usize) -> Self {
        Self((0..len as u32).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn apply(&self, old: usize) -> usize {
        self.0[old] as usize
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.0.len()];
        for (old, &new) in self.0.iter().enumerate() {
            inv[new as usize] = old as u32;
        }
        Self(inv)
    }

    /// `other ∘ self`: first apply `self`, then `other`.
    pub fn then(&self, other: &Permutation) -> Self {
        Self(self.0.iter().map(|&mid| other.0[mid as usize]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i == v as usize)
    }
}

/// `L` codewords of dimension `block_w · block_h`, stored as 32-bit floats in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    block_w: usize,
    block_h: usize,
    codewords: Vec<f32>,
    permutation: Option<Permutation>,
    rounded: Vec<u8>,
    id: CodebookId,
}

impl Codebook {
    /// Builds an unsorted codebook from row-major flattened codewords.
    pub fn new(block_w: usize, block_h: usize, codewords: Vec<f32>) -> Result<Self, CodecError> {
        if block_w == 0 || block_h == 0 || block_w > u16::MAX as usize || block_h > u16::MAX as usize
        {
            return Err(CodecError::InvalidCodebook(format!(
                "block dimensions {block_w}x{block_h} out of range"
            )));
        }
        let dim = block_w * block_h;
        if codewords.len() % dim != 0 {
            return Err(CodecError::InvalidCodebook(format!(
                "{} values do not form codewords of dimension {dim}",
                codewords.len()
            )));
        }
        let len = codewords.len() / dim;
        if !(2..=MAX_CODEBOOK_LEN).contains(&len) {
            return Err(CodecError::InvalidCodebook(format!(
                "codebook length {len} outside [2, {MAX_CODEBOOK_LEN}]"
            )));
        }
        if let Some(bad) = codewords
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0)
        {
            return Err(CodecError::InvalidCodebook(format!(
                "component {bad} outside [0, 255]"
            )));
        }
        let rounded = codewords.iter().map(|&v| round_half_up(v as f64)).collect();
        let id = content_hash(block_w, block_h, &codewords);
        Ok(Self {
            block_w,
            block_h,
            codewords,
            permutation: None,
            rounded,
            id,
        })
    }

    /// Convenience constructor from one vector per codeword.
    pub fn from_rows(block_w: usize, block_h: usize, rows: &[Vec<f32>]) -> Result<Self, CodecError> {
        let dim = block_w * block_h;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(CodecError::InvalidCodebook(format!(
                "codeword of dimension {} (expected {dim})",
                bad.len()
            )));
        }
        Self::new(block_w, block_h, rows.concat())
    }

    /// Marks the codebook as sorted, recording the old → new index map.
    pub fn with_permutation(mut self, permutation: Permutation) -> Result<Self, CodecError> {
        if permutation.len() != self.len() {
            return Err(CodecError::InvalidPermutation(format!(
                "length {} does not match codebook length {}",
                permutation.len(),
                self.len()
            )));
        }
        self.permutation = Some(permutation);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.codewords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.block_w * self.block_h
    }

    pub fn block_w(&self) -> usize {
        self.block_w
    }

    pub fn block_h(&self) -> usize {
        self.block_h
    }

    pub fn codeword(&self, i: usize) -> &[f32] {
        let dim = self.dim();
        &self.codewords[i * dim..(i + 1) * dim]
    }

    pub fn codewords(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.codewords.chunks_exact(self.dim())
    }

    /// All codewords flattened row-major.
    pub fn as_flat(&self) -> &[f32] {
        &self.codewords
    }

    /// The codeword as the decoder writes it: rounded half-up and clamped.
    pub fn rounded_codeword(&self, i: usize) -> &[u8] {
        let dim = self.dim();
        &self.rounded[i * dim..(i + 1) * dim]
    }

    pub fn is_sorted(&self) -> bool {
        self.permutation.is_some()
    }

    pub fn permutation(&self) -> Option<&Permutation> {
        self.permutation.as_ref()
    }

    pub fn id(&self) -> CodebookId {
        self.id
    }

    /// Reconstructs the codebook in its pre-sorting order.
    ///
    /// Returns `self` unchanged (cloned) when the codebook is not sorted.
    pub fn unsorted(&self) -> Codebook {
        let Some(perm) = &self.permutation else {
            return self.clone();
        };
        let dim = self.dim();
        let mut flat = Vec::with_capacity(self.codewords.len());
        for old in 0..self.len() {
            flat.extend_from_slice(&self.codewords[perm.apply(old) * dim..][..dim]);
        }
        Codebook::new(self.block_w, self.block_h, flat).expect("reordering preserves validity")
    }

    /// Index of the Euclidean-nearest codeword and its squared distance.
    ///
    /// Exhaustive scan with partial-distance early exit; ties go to the
    /// smallest index.
    pub fn nearest(&self, block: &[f64]) -> (usize, f64) {
        debug_assert_eq!(block.len(), self.dim());
        let mut best = (0usize, f64::INFINITY);
        for (i, cw) in self.codewords().enumerate() {
            let mut acc = 0.0;
            let mut pruned = false;
            for (x, &c) in block.iter().zip(cw) {
                let d = x - c as f64;
                acc += d * d;
                if acc >= best.1 {
                    pruned = true;
                    break;
                }
            }
            if !pruned {
                best = (i, acc);
            }
        }
        best
    }
}

fn content_hash(block_w: usize, block_h: usize, codewords: &[f32]) -> CodebookId {
    let mut hasher = Sha256::new();
    hasher.update(b"VQCB-ID");
    hasher.update(((codewords.len() / (block_w * block_h)) as u32).to_le_bytes());
    hasher.update((block_w as u16).to_le_bytes());
    hasher.update((block_h as u16).to_le_bytes());
    for v in codewords {
        hasher.update(v.to_le_bytes());
    }
    CodebookId(hasher.finalize().into())
}

/// Rounds half-up and clamps to `[0, 255]`.
#[inline]
pub fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// An `s × t × C` grid of codeword indices, bound to one codebook by its id.
///
/// Indices are stored in (row, col, channel) order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexTensor {
    rows: usize,
    cols: usize,
    channels: usize,
    codebook_len: usize,
    codebook_id: CodebookId,
    indices: Vec<u16>,
}

impl IndexTensor {
    pub fn new(
        rows: usize,
        cols: usize,
        channels: usize,
        codebook_len: usize,
        codebook_id: CodebookId,
        indices: Vec<u16>,
    ) -> Result<Self, CodecError> {
        if rows == 0 || cols == 0 || rows > u16::MAX as usize || cols > u16::MAX as usize {
            return Err(CodecError::InvalidIndices(format!(
                "grid {rows}x{cols} out of range"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(CodecError::InvalidIndices(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if !(2..=MAX_CODEBOOK_LEN).contains(&codebook_len) {
            return Err(CodecError::InvalidIndices(format!(
                "codebook length {codebook_len} out of range"
            )));
        }
        if indices.len() != rows * cols * channels {
            return Err(CodecError::InvalidIndices(format!(
                "{} indices for a {rows}x{cols}x{channels} grid",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= codebook_len) {
            return Err(CodecError::IndexOutOfRange {
                index: bad as usize,
                len: codebook_len,
            });
        }
        Ok(Self {
            rows,
            cols,
            channels,
            codebook_len,
            codebook_id,
            indices,
        })
    }

    /// Grid height `s`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Grid width `t`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn codebook_len(&self) -> usize {
        self.codebook_len
    }

    pub fn codebook_id(&self) -> CodebookId {
        self.codebook_id
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> u16 {
        self.indices[(row * self.cols + col) * self.channels + channel]
    }

    /// The `C` channel indices stored at one grid cell.
    pub fn cell(&self, row: usize, col: usize) -> &[u16] {
        let at = (row * self.cols + col) * self.channels;
        &self.indices[at..at + self.channels]
    }

    pub(crate) fn cell_mut(&mut self, row: usize, col: usize) -> &mut [u16] {
        let at = (row * self.cols + col) * self.channels;
        &mut self.indices[at..at + self.channels]
    }

    /// Grid cells `(row, col)` where `self` and `other` differ in any channel.
    pub fn differing_cells(&self, other: &IndexTensor) -> Vec<(usize, usize)> {
        assert_eq!(
            (self.rows, self.cols, self.channels),
            (other.rows, other.cols, other.channels),
            "grids must share a shape"
        );
        let mut out = Vec::new();
        for row in 0..self.rows {
            for col in 0..self.cols {
                if self.cell(row, col) != other.cell(row, col) {
                    out.push((row, col));
                }
            }
        }
        out
    }

    /// Copy of `self` with every index mapped through `permutation` and
    /// rebound to `target`.
    pub(crate) fn remapped(&self, permutation: &Permutation, target: &Codebook) -> Self {
        Self {
            indices: self
                .indices
                .iter()
                .map(|&i| permutation.apply(i as usize) as u16)
                .collect(),
            codebook_len: target.len(),
            codebook_id: target.id(),
            ..self.clone()
        }
    }
}

/// Maps every block of every channel to its nearest codeword.
pub fn encode(img: &ImageTensor, cb: &Codebook) -> Result<IndexTensor, CodecError> {
    let (height, width, channels) = img.shape();
    let (bh, bw) = (cb.block_h(), cb.block_w());
    if height % bh != 0 || width % bw != 0 {
        return Err(CodecError::NonDivisible {
            height,
            width,
            block_h: bh,
            block_w: bw,
        });
    }
    let (rows, cols) = (height / bh, width / bw);
    let mut indices = Vec::with_capacity(rows * cols * channels);
    let mut block = vec![0.0f64; cb.dim()];
    for row in 0..rows {
        for col in 0..cols {
            for ch in 0..channels {
                gather_block(img, row, col, ch, bh, bw, &mut block);
                indices.push(cb.nearest(&block).0 as u16);
            }
        }
    }
    IndexTensor::new(rows, cols, channels, cb.len(), cb.id(), indices)
}

pub(crate) fn gather_block(
    img: &ImageTensor,
    row: usize,
    col: usize,
    channel: usize,
    bh: usize,
    bw: usize,
    out: &mut [f64],
) {
    for dy in 0..bh {
        for dx in 0..bw {
            out[dy * bw + dx] = img.get(row * bh + dy, col * bw + dx, channel) as f64;
        }
    }
}

/// Writes each cell's codeword into its block, per channel.
pub fn decode(idx: &IndexTensor, cb: &Codebook) -> Result<ImageTensor, CodecError> {
    if idx.codebook_id() != cb.id() {
        return Err(CodecError::CodebookMismatch {
            expected: idx.codebook_id(),
            found: cb.id(),
        });
    }
    if idx.codebook_len() != cb.len() {
        return Err(CodecError::DimensionMismatch(format!(
            "index tensor expects {} codewords, codebook has {}",
            idx.codebook_len(),
            cb.len()
        )));
    }
    let (bh, bw) = (cb.block_h(), cb.block_w());
    let (height, width, channels) = (idx.rows() * bh, idx.cols() * bw, idx.channels());
    let mut data = vec![0u8; height * width * channels];
    for row in 0..idx.rows() {
        for col in 0..idx.cols() {
            for ch in 0..channels {
                let code = idx.get(row, col, ch) as usize;
                if code >= cb.len() {
                    return Err(CodecError::IndexOutOfRange {
                        index: code,
                        len: cb.len(),
                    });
                }
                let cw = cb.rounded_codeword(code);
                for dy in 0..bh {
                    let y = row * bh + dy;
                    for dx in 0..bw {
                        let x = col * bw + dx;
                        data[(y * width + x) * channels + ch] = cw[dy * bw + dx];
                    }
                }
            }
        }
    }
    Ok(ImageTensor::new(height, width, channels, data).expect("decoded geometry is valid"))
}

/// Mean squared error over every pixel and channel.
pub fn distortion(a: &ImageTensor, b: &ImageTensor) -> Result<f64, CodecError> {
    if a.shape() != b.shape() {
        return Err(CodecError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sse / a.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
        let data = (0..h * w * c).map(|_| rng.random()).collect();
        ImageTensor::new(h, w, c, data).unwrap()
    }

    fn random_codebook(rng: &mut ChaCha8Rng, len: usize, bw: usize, bh: usize) -> Codebook {
        let flat = (0..len * bw * bh)
            .map(|_| rng.random_range(0.0f32..=255.0))
            .collect();
        Codebook::new(bw, bh, flat).unwrap()
    }

    /// Exhaustive scan kept deliberately naive: full distances, then first minimum.
    fn brute_force_nearest(cb: &Codebook, block: &[f64]) -> usize {
        let dists: Vec<f64> = (0..cb.len())
            .map(|i| {
                let mut s = 0.0;
                for (k, x) in block.iter().enumerate() {
                    let d = x - cb.codeword(i)[k] as f64;
                    s += d * d;
                }
                s
            })
            .collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        dists.iter().position(|&d| d == min).unwrap()
    }

    #[test]
    fn codebook_invariants() {
        assert!(Codebook::new(2, 2, vec![0.0; 4]).is_err(), "L = 1 rejected");
        assert!(Codebook::new(2, 2, vec![0.0; 7]).is_err());
        assert!(Codebook::new(2, 2, vec![256.0; 8]).is_err());
        assert!(Codebook::new(2, 2, vec![f32::NAN; 8]).is_err());
        assert!(Codebook::new(0, 2, vec![]).is_err());
        let cb = Codebook::new(2, 2, vec![0.0; 8]).unwrap();
        assert_eq!((cb.len(), cb.dim()), (2, 4));
        assert!(!cb.is_sorted());
    }

    #[test]
    fn exact_codeword_blocks_encode_to_that_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows: Vec<Vec<f32>> = (0..8)
            .map(|_| (0..4).map(|_| rng.random_range(0..=255) as f32).collect())
            .collect();
        rows[3] = vec![10.0, 20.0, 30.0, 40.0];
        let cb = Codebook::from_rows(2, 2, &rows).unwrap();
        let mut img = ImageTensor::filled(4, 6, 3, 0).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                for c in 0..3 {
                    img.set(y, x, c, rows[3][(y % 2) * 2 + x % 2] as u8);
                }
            }
        }
        let idx = encode(&img, &cb).unwrap();
        assert_eq!((idx.rows(), idx.cols(), idx.channels()), (2, 3, 3));
        assert!(idx.indices().iter().all(|&i| i == 3));
        assert_eq!(decode(&idx, &cb).unwrap(), img);
    }

    #[test]
    fn decode_single_block() {
        let cb = Codebook::from_rows(2, 2, &[vec![100.0; 4], vec![0.0; 4]]).unwrap();
        let idx = IndexTensor::new(1, 1, 1, 2, cb.id(), vec![0]).unwrap();
        let img = decode(&idx, &cb).unwrap();
        assert_eq!(img.shape(), (2, 2, 1));
        assert_eq!(img.data(), &[100; 4]);
    }

    #[test]
    fn decode_rounds_half_up_and_is_deterministic() {
        let cb = Codebook::from_rows(2, 1, &[vec![0.5, 254.5], vec![1.49, 10.0]]).unwrap();
        let idx = IndexTensor::new(1, 2, 1, 2, cb.id(), vec![0, 1]).unwrap();
        let a = decode(&idx, &cb).unwrap();
        assert_eq!(a.data(), &[1, 255, 1, 10]);
        assert_eq!(decode(&idx, &cb).unwrap(), a);
    }

    #[test]
    fn decode_rejects_foreign_codebook() {
        let a = Codebook::from_rows(1, 1, &[vec![0.0], vec![1.0]]).unwrap();
        let b = Codebook::from_rows(1, 1, &[vec![0.0], vec![2.0]]).unwrap();
        let idx = IndexTensor::new(1, 1, 1, 2, a.id(), vec![1]).unwrap();
        assert!(matches!(
            decode(&idx, &b),
            Err(CodecError::CodebookMismatch { .. })
        ));
    }

    #[test]
    fn index_tensor_rejects_out_of_range() {
        let cb = Codebook::from_rows(1, 1, &[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(
            IndexTensor::new(1, 1, 1, 2, cb.id(), vec![2]),
            Err(CodecError::IndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn encode_rejects_non_divisible_image() {
        let cb = Codebook::new(2, 2, vec![0.0; 8]).unwrap();
        let img = ImageTensor::filled(3, 4, 1, 0).unwrap();
        assert!(matches!(
            encode(&img, &cb),
            Err(CodecError::NonDivisible { .. })
        ));
    }

    #[test]
    fn encode_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let cb = random_codebook(&mut rng, 16, 2, 2);
            let img = random_image(&mut rng, 8, 8, 3);
            let idx = encode(&img, &cb).unwrap();
            let mut block = vec![0.0; 4];
            for r in 0..4 {
                for c in 0..4 {
                    for ch in 0..3 {
                        gather_block(&img, r, c, ch, 2, 2, &mut block);
                        assert_eq!(idx.get(r, c, ch) as usize, brute_force_nearest(&cb, &block));
                    }
                }
            }
        }
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let cb = Codebook::from_rows(1, 1, &[vec![10.0], vec![0.0], vec![20.0]]).unwrap();
        assert_eq!(cb.nearest(&[15.0]).0, 0);
        assert_eq!(cb.nearest(&[5.0]).0, 0);
        let dup = Codebook::from_rows(1, 1, &[vec![3.0], vec![3.0]]).unwrap();
        assert_eq!(dup.nearest(&[3.0]).0, 0);
    }

    #[test]
    fn encode_inverts_decode_for_distinct_integer_codewords() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f32>> = (0..32)
            .map(|i| {
                let mut v: Vec<f32> = (0..4).map(|_| rng.random_range(0..=255) as f32).collect();
                v[0] = (i * 8) as f32;
                v
            })
            .collect();
        let cb = Codebook::from_rows(2, 2, &rows).unwrap();
        let indices = (0..4 * 4 * 3).map(|_| rng.random_range(0..32u16)).collect();
        let idx = IndexTensor::new(4, 4, 3, 32, cb.id(), indices).unwrap();
        let again = encode(&decode(&idx, &cb).unwrap(), &cb).unwrap();
        assert_eq!(again, idx);
    }

    #[test]
    fn distortion_basics() {
        let a = ImageTensor::filled(1, 1, 1, 0).unwrap();
        let b = ImageTensor::filled(1, 1, 1, 255).unwrap();
        assert_eq!(distortion(&a, &a).unwrap(), 0.0);
        assert_eq!(distortion(&a, &b).unwrap(), 65025.0);
        let c = ImageTensor::filled(1, 2, 1, 0).unwrap();
        assert!(distortion(&a, &c).is_err());
    }

    #[test]
    fn distortion_matches_straightforward_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_image(&mut rng, 7, 5, 3);
        let b = random_image(&mut rng, 7, 5, 3);
        let mut total = 0i64;
        for y in 0..7 {
            for x in 0..5 {
                for c in 0..3 {
                    let d = a.get(y, x, c) as i64 - b.get(y, x, c) as i64;
                    total += d * d;
                }
            }
        }
        let expected = total as f64 / 105.0;
        assert!((distortion(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn permutation_algebra() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert!(p.then(&p.inverse()).is_identity());
        assert!(p.inverse().then(&p).is_identity());
        assert_eq!(p.apply(0), 2);
    }

    #[test]
    fn unsorted_view_restores_original_order() {
        let cb = Codebook::from_rows(1, 1, &[vec![30.0], vec![10.0], vec![20.0]]).unwrap();
        // old 0 -> new 2, old 1 -> new 0, old 2 -> new 1
        let sorted = Codebook::from_rows(1, 1, &[vec![10.0], vec![20.0], vec![30.0]])
            .unwrap()
            .with_permutation(Permutation::new(vec![2, 0, 1]).unwrap())
            .unwrap();
        assert_eq!(sorted.unsorted(), cb);
    }
}
