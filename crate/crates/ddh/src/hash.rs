//! Sign binarization into 128-bit codes and Hamming-distance matching
//! over a persistent gallery.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CODE_BITS: usize = 128;
pub const CODE_BYTES: usize = CODE_BITS / 8;

/// A 128-bit binary code packed into 16 bytes. Bit `k` of byte `j`
/// (least significant first) holds feature index `8j + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashCode(pub [u8; CODE_BYTES]);

impl HashCode {
    pub fn as_bytes(&self) -> &[u8; CODE_BYTES] {
        &self.0
    }

    pub fn bit(&self, index: usize) -> bool {
        debug_assert!(index < CODE_BITS);
        self.0[index / 8] >> (index % 8) & 1 == 1
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<HashCode> {
        if s.len() != CODE_BYTES * 2 {
            return Err(Error::Format(format!(
                "hex code must be {} characters, got {}",
                CODE_BYTES * 2,
                s.len()
            )));
        }
        let mut bytes = [0u8; CODE_BYTES];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|e| Error::Format(format!("bad hex code: {e}")))?;
        }
        Ok(HashCode(bytes))
    }
}

/// Sign-binarizes a 128-component feature vector: bit `i` is set when
/// component `i` is nonnegative (sign(0) maps to +1).
pub fn binarize(feature: &Tensor) -> Result<HashCode> {
    if feature.len() != CODE_BITS {
        return Err(Error::Input(format!(
            "feature length {} is not {CODE_BITS}",
            feature.len()
        )));
    }
    let mut bytes = [0u8; CODE_BYTES];
    for (i, &v) in feature.data().iter().enumerate() {
        if v >= 0.0 {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    Ok(HashCode(bytes))
}

/// Binarizes one row of a rank-2 feature batch.
pub fn binarize_row(features: &Tensor, row: usize) -> Result<HashCode> {
    let slice = features.row(row);
    if slice.len() != CODE_BITS {
        return Err(Error::Input(format!(
            "feature width {} is not {CODE_BITS}",
            slice.len()
        )));
    }
    let mut bytes = [0u8; CODE_BYTES];
    for (i, &v) in slice.iter().enumerate() {
        if v >= 0.0 {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    Ok(HashCode(bytes))
}

/// Population count of the XOR of two codes, in [0, 128].
#[inline]
pub fn hamming(a: &HashCode, b: &HashCode) -> u32 {
    let a0 = u64::from_le_bytes(a.0[0..8].try_into().unwrap());
    let a1 = u64::from_le_bytes(a.0[8..16].try_into().unwrap());
    let b0 = u64::from_le_bytes(b.0[0..8].try_into().unwrap());
    let b1 = u64::from_le_bytes(b.0[8..16].try_into().unwrap());
    (a0 ^ b0).count_ones() + (a1 ^ b1).count_ones()
}

/// One enrolled template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GalleryEntry {
    pub entry_id: usize,
    pub label: String,
    pub code: HashCode,
}

/// An ordered collection of enrolled (label, code) templates. Entry ids
/// are dense insertion indices; iteration order is insertion order.
#[derive(Debug, Clone, Default)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
}

/// Result of a one-to-many search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identification {
    pub label: String,
    pub distance: u32,
    pub entry_id: usize,
}

impl Gallery {
    pub fn new() -> Self {
        Gallery::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    /// Appends an entry; duplicates are allowed and get distinct ids.
    pub fn enroll(&mut self, label: impl Into<String>, code: HashCode) -> usize {
        let entry_id = self.entries.len();
        self.entries.push(GalleryEntry {
            entry_id,
            label: label.into(),
            code,
        });
        entry_id
    }

    /// Nearest entry by Hamming distance; ties break to the smallest
    /// entry id.
    pub fn identify(&self, probe: &HashCode) -> Result<Identification> {
        let best = self
            .entries
            .iter()
            .map(|e| (hamming(&e.code, probe), e))
            .min_by_key(|(d, e)| (*d, e.entry_id))
            .ok_or_else(|| Error::State("identify on an empty gallery".to_string()))?;
        Ok(Identification {
            label: best.1.label.clone(),
            distance: best.0,
            entry_id: best.1.entry_id,
        })
    }
}

/// One-to-one comparison: accept iff the Hamming distance is at most
/// `threshold` (inclusive).
pub fn verify(a: &HashCode, b: &HashCode, threshold: u32) -> Result<(bool, u32)> {
    if threshold > CODE_BITS as u32 {
        return Err(Error::Input(format!(
            "threshold {threshold} out of range 0..={CODE_BITS}"
        )));
    }
    let d = hamming(a, b);
    Ok((d <= threshold, d))
}

const GALLERY_MAGIC: &[u8; 4] = b"DDHG";
const GALLERY_VERSION: u8 = 1;

/// Writes the gallery: magic "DDHG", version byte, code length (u32 LE),
/// entry count (u64 LE), then per entry a u32 label length, the UTF-8
/// label, and 16 code bytes.
pub fn save_gallery(gallery: &Gallery, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GALLERY_MAGIC)?;
    w.write_all(&[GALLERY_VERSION])?;
    w.write_all(&(CODE_BITS as u32).to_le_bytes())?;
    w.write_all(&(gallery.len() as u64).to_le_bytes())?;
    for e in gallery.entries() {
        let label = e.label.as_bytes();
        w.write_all(&(label.len() as u32).to_le_bytes())?;
        w.write_all(label)?;
        w.write_all(&e.code.0)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_gallery(path: impl AsRef<Path>) -> Result<Gallery> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != GALLERY_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {GALLERY_MAGIC:?}"
        )));
    }
    let mut version = [0u8; 1];
    read_exact(&mut r, &mut version)?;
    if version[0] != GALLERY_VERSION {
        return Err(Error::Format(format!(
            "unsupported gallery version {}",
            version[0]
        )));
    }
    let mut len4 = [0u8; 4];
    read_exact(&mut r, &mut len4)?;
    let code_len = u32::from_le_bytes(len4);
    if code_len != CODE_BITS as u32 {
        return Err(Error::Format(format!(
            "gallery code length {code_len}, expected {CODE_BITS}"
        )));
    }
    let mut len8 = [0u8; 8];
    read_exact(&mut r, &mut len8)?;
    let count = u64::from_le_bytes(len8) as usize;
    let mut gallery = Gallery::new();
    for _ in 0..count {
        read_exact(&mut r, &mut len4)?;
        let label_len = u32::from_le_bytes(len4) as usize;
        let mut label = vec![0u8; label_len];
        read_exact(&mut r, &mut label)?;
        let label = String::from_utf8(label)
            .map_err(|e| Error::Format(format!("label is not UTF-8: {e}")))?;
        let mut code = [0u8; CODE_BYTES];
        read_exact(&mut r, &mut code)?;
        gallery.enroll(label, HashCode(code));
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(Error::Format("trailing bytes after gallery".to_string()));
    }
    Ok(gallery)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated gallery file".to_string()))
}
