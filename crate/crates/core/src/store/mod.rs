//! On-disk formats: feature packs, candidate manifests, RLE masks, label images
//! and the logits container used by the loss checker.

pub mod logits;
pub mod manifest;
pub mod pack;
pub mod pgm;
pub mod rle;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to a temp file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
