//! Shared on-disk framing used by every artifact the pipeline writes.
//!
//! ```text
//! magic            8 bytes
//! format_version   u32, little-endian
//! metadata_length  u64, little-endian
//! metadata         UTF-8 JSON object, `metadata_length` bytes
//! payload          raw little-endian binary, length implied by metadata
//! ```

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{PerceptError, Result};

pub const HEADER_FIXED_LEN: u64 = 8 + 4 + 8;

/// Magic bytes identifying each artifact type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Activations,
    Histograms,
    Bank,
    Codes,
    Atlas,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::Activations,
        ArtifactKind::Histograms,
        ArtifactKind::Bank,
        ArtifactKind::Codes,
        ArtifactKind::Atlas,
    ];

    pub fn magic(self) -> &'static [u8; 8] {
        match self {
            ArtifactKind::Activations => b"PCODEACT",
            ArtifactKind::Histograms => b"PCODEHST",
            ArtifactKind::Bank => b"PCODEBNK",
            ArtifactKind::Codes => b"PCODECOD",
            ArtifactKind::Atlas => b"PCODEATL",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ArtifactKind::Activations => "pcact",
            ArtifactKind::Histograms => "pchist",
            ArtifactKind::Bank => "pcbank",
            ArtifactKind::Codes => "pccode",
            ArtifactKind::Atlas => "pcatlas",
        }
    }

    pub fn from_magic(magic: &[u8]) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.magic() == magic)
    }
}

/// Writer adapter that tracks the number of bytes written so far, so sink
/// failures can be reported with an offset.
pub struct CountingWriter<W> {
    inner: W,
    offset: u64,
}

impl<W: Write> CountingWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| PerceptError::io(self.offset, e))?;
        self.offset += bytes.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        self.inner
            .flush()
            .map_err(|e| PerceptError::io(self.offset, e))?;
        Ok(self.offset)
    }
}

/// Writes the fixed header plus metadata, returning the writer positioned at
/// the start of the payload.
pub fn write_header<W: Write, M: Serialize>(
    sink: W,
    kind: ArtifactKind,
    version: u32,
    metadata: &M,
) -> Result<CountingWriter<W>> {
    let meta = serde_json::to_vec(metadata)
        .map_err(|e| PerceptError::Format(format!("cannot serialize metadata: {e}")))?;
    let mut w = CountingWriter::new(sink);
    w.put(kind.magic())?;
    w.put(&version.to_le_bytes())?;
    w.put(&(meta.len() as u64).to_le_bytes())?;
    w.put(&meta)?;
    Ok(w)
}

/// A parsed artifact: header fields, raw metadata and the payload bytes.
#[derive(Debug)]
pub struct RawArtifact {
    pub kind: ArtifactKind,
    pub version: u32,
    pub metadata: serde_json::Value,
    pub payload: Vec<u8>,
}

impl RawArtifact {
    pub fn metadata_as<M: DeserializeOwned>(&self) -> Result<M> {
        serde_json::from_value(self.metadata.clone())
            .map_err(|e| PerceptError::Format(format!("malformed metadata: {e}")))
    }

    pub fn expect_kind(&self, kind: ArtifactKind, version: u32) -> Result<()> {
        if self.kind != kind {
            return Err(PerceptError::Format(format!(
                "expected a .{} file, found .{}",
                kind.extension(),
                self.kind.extension()
            )));
        }
        if self.version != version {
            return Err(PerceptError::Format(format!(
                "unsupported format version {} (expected {version})",
                self.version
            )));
        }
        Ok(())
    }

    pub fn expect_payload_len(&self, expected: u64) -> Result<()> {
        let found = self.payload.len() as u64;
        if found != expected {
            return Err(PerceptError::LengthMismatch { expected, found });
        }
        Ok(())
    }
}

fn read_exact_at<R: Read>(source: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            PerceptError::Format(format!("truncated {what} at byte offset {offset}"))
        } else {
            PerceptError::io(offset, e)
        }
    })
}

/// Reads any artifact, checking only the magic bytes.
pub fn read_artifact<R: Read>(mut source: R) -> Result<RawArtifact> {
    let mut magic = [0u8; 8];
    read_exact_at(&mut source, &mut magic, 0, "magic")?;
    let kind = ArtifactKind::from_magic(&magic).ok_or_else(|| {
        PerceptError::Format(format!(
            "bad magic bytes {:?}",
            String::from_utf8_lossy(&magic)
        ))
    })?;
    let mut version = [0u8; 4];
    read_exact_at(&mut source, &mut version, 8, "format version")?;
    let mut meta_len = [0u8; 8];
    read_exact_at(&mut source, &mut meta_len, 12, "metadata length")?;
    let meta_len = u64::from_le_bytes(meta_len);
    let mut meta = Vec::new();
    let got = (&mut source)
        .take(meta_len)
        .read_to_end(&mut meta)
        .map_err(|e| PerceptError::io(HEADER_FIXED_LEN, e))?;
    if got as u64 != meta_len {
        return Err(PerceptError::Format(format!(
            "truncated metadata: expected {meta_len} bytes, found {got}"
        )));
    }
    let metadata: serde_json::Value = serde_json::from_slice(&meta)
        .map_err(|e| PerceptError::Format(format!("metadata is not valid JSON: {e}")))?;
    let mut payload = Vec::new();
    source
        .read_to_end(&mut payload)
        .map_err(|e| PerceptError::io(HEADER_FIXED_LEN + meta_len, e))?;
    Ok(RawArtifact {
        kind,
        version: u32::from_le_bytes(version),
        metadata,
        payload,
    })
}

/// Little-endian cursor over a payload slice.
pub struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or(PerceptError::LengthMismatch {
            expected: end as u64,
            found: self.bytes.len() as u64,
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(PerceptError::LengthMismatch {
                expected: self.pos as u64,
                found: self.bytes.len() as u64,
            });
        }
        Ok(())
    }
}
