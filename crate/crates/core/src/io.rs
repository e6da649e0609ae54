//! Shared file-format plumbing: a checksummed little-endian binary envelope
//! and serde helpers for digests.
//!
//! Binary artifacts (datasets, checkpoints) share one envelope: a 4-byte
//! magic, a u32 version, the payload, and a trailing SHA-256 of everything
//! before it. Readers verify magic, version, and checksum before any payload
//! is interpreted.

use std::io::{Read, Write};

use thiserror::Error;

use crate::hashing::{Digest32, Hasher};

#[derive(Debug, Error)]
pub enum FileFormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("unsupported version {got} (expected {expected})")]
    BadVersion { expected: u32, got: u32 },
    #[error("file checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("file truncated or malformed: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serialize a file: magic, version, payload produced by `write_payload`,
/// then a SHA-256 trailer over all preceding bytes.
pub fn write_envelope<F>(
    magic: [u8; 4],
    version: u32,
    mut write_payload: F,
) -> Result<Vec<u8>, FileFormatError>
where
    F: FnMut(&mut BinWriter) -> Result<(), FileFormatError>,
{
    let mut w = BinWriter::new();
    w.bytes(&magic);
    w.u32(version);
    write_payload(&mut w)?;
    Ok(w.finish_with_checksum())
}

/// Open a file buffer, verifying magic, version, and trailing checksum.
/// Returns a reader positioned at the start of the payload.
pub fn read_envelope(
    data: &[u8],
    magic: [u8; 4],
    version: u32,
) -> Result<BinReader<'_>, FileFormatError> {
    if data.len() < 4 + 4 + 32 {
        return Err(FileFormatError::Truncated("shorter than header + checksum".into()));
    }
    let (body, trailer) = data.split_at(data.len() - 32);
    let computed = crate::hashing::sha256(body);
    if trailer != computed {
        return Err(FileFormatError::ChecksumMismatch {
            stored: hex::encode(trailer),
            computed: hex::encode(computed),
        });
    }
    let mut r = BinReader::new(body);
    let got_magic = r.bytes(4)?;
    if got_magic != magic {
        return Err(FileFormatError::BadMagic { expected: magic });
    }
    let got_version = r.u32()?;
    if got_version != version {
        return Err(FileFormatError::BadVersion { expected: version, got: got_version });
    }
    Ok(r)
}

pub struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new() -> Self {
        BinWriter { buf: Vec::new() }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    /// Length-prefixed byte block.
    pub fn block(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }

    pub fn finish_with_checksum(self) -> Vec<u8> {
        let mut buf = self.buf;
        let mut h = Hasher::new();
        h.update(&buf);
        buf.extend_from_slice(&h.finish());
        buf
    }
}

impl Default for BinWriter {
    fn default() -> Self {
        Self::new()
    }
}

pub struct BinReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BinReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BinReader { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], FileFormatError> {
        if self.remaining() < n {
            return Err(FileFormatError::Truncated(format!(
                "wanted {n} bytes, only {} left",
                self.remaining()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, FileFormatError> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FileFormatError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FileFormatError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, FileFormatError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, FileFormatError> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn digest(&mut self) -> Result<Digest32, FileFormatError> {
        Ok(self.bytes(32)?.try_into().unwrap())
    }

    pub fn block(&mut self) -> Result<&'a [u8], FileFormatError> {
        let len = self.u32()? as usize;
        self.bytes(len)
    }
}

/// Atomic-ish file write: write to a sibling temp path, then rename.
pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), FileFormatError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>, FileFormatError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Serde adapter storing a 32-byte digest as lowercase hex.
pub mod digest_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::hashing::Digest32;

    pub fn serialize<Ser: Serializer>(d: &Digest32, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Digest32, D::Error> {
        let s = String::deserialize(d)?;
        crate::hashing::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad digest hex"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip() {
        let bytes = write_envelope(*b"TEST", 3, |w| {
            w.u64(7);
            w.f64(1.5);
            w.block(b"hello");
            Ok(())
        })
        .unwrap();
        let mut r = read_envelope(&bytes, *b"TEST", 3).unwrap();
        assert_eq!(r.u64().unwrap(), 7);
        assert_eq!(r.f64().unwrap(), 1.5);
        assert_eq!(r.block().unwrap(), b"hello");
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn envelope_detects_corruption() {
        let bytes = write_envelope(*b"TEST", 1, |w| {
            w.u64(42);
            Ok(())
        })
        .unwrap();

        // truncation
        assert!(matches!(
            read_envelope(&bytes[..bytes.len() - 1], *b"TEST", 1),
            Err(FileFormatError::ChecksumMismatch { .. })
        ));
        // bit flip
        let mut flipped = bytes.clone();
        flipped[9] ^= 1;
        assert!(matches!(
            read_envelope(&flipped, *b"TEST", 1),
            Err(FileFormatError::ChecksumMismatch { .. })
        ));
        // wrong magic / version
        assert!(read_envelope(&bytes, *b"NOPE", 1).is_err());
        assert!(read_envelope(&bytes, *b"TEST", 2).is_err());
    }
}
