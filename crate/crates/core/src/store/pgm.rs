//! 8-bit binary PGM (P5) label images and the JSON-lines index that maps
//! image ids to them.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::write_atomic;

/// A decoded 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.height * img.width {
        return Err(Error::validation(format!(
            "pgm: {} pixels for a {}x{} image",
            img.pixels.len(),
            img.height,
            img.width
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("pgm: missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n')) {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pgm: malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("pgm: header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("pgm: malformed header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(format!("pgm: unsupported maxval {maxval}")));
    }
    let data = &bytes[pos..];
    if data.len() != width * height {
        return Err(Error::corruption(format!(
            "pgm: {} data bytes for a {}x{} image",
            data.len(),
            width,
            height
        )));
    }
    Ok(GrayImage {
        height,
        width,
        pixels: data.to_vec(),
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(img)?)
}

/// One line of a label-image index. `path` is relative to the index file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub image_id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_clusters: Option<u32>,
}

pub fn read_index(path: impl AsRef<Path>) -> Result<Vec<IndexEntry>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: IndexEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("index line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_index(entries: &[IndexEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).map_err(|e| Error::format(e.to_string()))?);
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Resolves an entry's path against the directory of its index file.
pub fn resolve_entry(index_path: &Path, entry: &IndexEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        index_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}
