//! "MDLC" v1 logits container consumed by `loss-check`.
//!
//! `b"MDLC" | u32 version=1 | u32 n_pixels | u32 n_classes | f32 logits[n_pixels * n_classes] | u32 targets[n_pixels]`,
//! little-endian, no padding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::store::write_atomic;

pub const LOGITS_MAGIC: &[u8; 4] = b"MDLC";
pub const LOGITS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitsFile {
    pub n_classes: usize,
    /// `[n_pixels × n_classes]`, row-major.
    pub logits: Vec<f32>,
    pub targets: Vec<u32>,
}

impl LogitsFile {
    pub fn n_pixels(&self) -> usize {
        self.targets.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.n_classes == 0 || self.logits.len() != self.n_pixels() * self.n_classes {
            return Err(Error::validation(format!(
                "logits: {} values for {} pixels x {} classes",
                self.logits.len(),
                self.n_pixels(),
                self.n_classes
            )));
        }
        let mut out = Vec::with_capacity(16 + 4 * (self.logits.len() + self.targets.len()));
        out.extend_from_slice(LOGITS_MAGIC);
        for v in [LOGITS_VERSION, self.n_pixels() as u32, self.n_classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.logits {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.targets {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != LOGITS_MAGIC {
            return Err(Error::format("logits: missing MDLC magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != LOGITS_VERSION {
            return Err(Error::format(format!("logits: unsupported version {}", word(1))));
        }
        let (n, c) = (word(2) as usize, word(3) as usize);
        let expected = n
            .checked_mul(c)
            .and_then(|nc| nc.checked_add(n))
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(16));
        if expected != Some(bytes.len()) {
            return Err(Error::corruption(format!(
                "logits: {} bytes do not match {n} pixels x {c} classes",
                bytes.len()
            )));
        }
        let body = &bytes[16..];
        let logits = body[..4 * n * c]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let targets = body[4 * n * c..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(LogitsFile {
            n_classes: c,
            logits,
            targets,
        })
    }
}

pub fn read_logits(path: impl AsRef<Path>) -> Result<LogitsFile> {
    LogitsFile::from_bytes(&std::fs::read(path)?)
}

pub fn write_logits(file: &LogitsFile, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &file.to_bytes()?)
}
