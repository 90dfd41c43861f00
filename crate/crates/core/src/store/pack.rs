//! The "MDFP" v1 feature-pack container.
//!
//! Layout (all little-endian, no padding):
//!
//! ```text
//! b"MDFP" | u32 version=1
//! u32 img_h, img_w, patch_size, grid_h, grid_w, heads, head_dim, embed_dim
//! f32 q_cls[heads * head_dim]
//! f32 k_patch[heads * N * head_dim]      N = grid_h * grid_w, patch j = row * grid_w + col
//! f32 cls_embed[embed_dim]               embed_dim = 0 when absent
//! ```
//!
//! The image id is not stored in the file; it is the file stem.

use std::path::Path;

use crate::error::{Error, Result};
use crate::store::write_atomic;

pub const PACK_MAGIC: &[u8; 4] = b"MDFP";
pub const PACK_VERSION: u32 = 1;
pub const PACK_EXTENSION: &str = "mdfp";
const HEADER_LEN: usize = 4 + 4 * 9;

/// Per-image transformer features from the final attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    pub image_id: String,
    pub img_h: usize,
    pub img_w: usize,
    pub patch_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// `[heads × head_dim]`
    pub q_cls: Vec<f32>,
    /// `[heads × N × head_dim]`
    pub k_patch: Vec<f32>,
    /// Output CLS token of the full or masked image.
    pub cls_embed: Option<Vec<f32>>,
}

impl FeaturePack {
    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn embed_dim(&self) -> usize {
        self.cls_embed.as_ref().map_or(0, Vec::len)
    }

    /// Query vector of the CLS token for one head.
    pub fn q_cls_head(&self, head: usize) -> &[f32] {
        &self.q_cls[head * self.head_dim..(head + 1) * self.head_dim]
    }

    /// Key vector of patch `j` for one head.
    pub fn key(&self, head: usize, j: usize) -> &[f32] {
        let start = (head * self.num_patches() + j) * self.head_dim;
        &self.k_patch[start..start + self.head_dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::validation(format!(
                "pack {}: grid, heads and head_dim must be positive",
                self.image_id
            )));
        }
        if self.patch_size == 0 {
            return Err(Error::validation(format!(
                "pack {}: patch_size must be positive",
                self.image_id
            )));
        }
        if self.img_h != self.grid_h * self.patch_size || self.img_w != self.grid_w * self.patch_size
        {
            return Err(Error::validation(format!(
                "pack {}: image {}x{} is not grid {}x{} times patch size {}",
                self.image_id, self.img_h, self.img_w, self.grid_h, self.grid_w, self.patch_size
            )));
        }
        if self.q_cls.len() != self.heads * self.head_dim {
            return Err(Error::validation(format!(
                "pack {}: q_cls has {} values, expected {}",
                self.image_id,
                self.q_cls.len(),
                self.heads * self.head_dim
            )));
        }
        let n_keys = self.heads * self.num_patches() * self.head_dim;
        if self.k_patch.len() != n_keys {
            return Err(Error::validation(format!(
                "pack {}: k_patch has {} values, expected {}",
                self.image_id,
                self.k_patch.len(),
                n_keys
            )));
        }
        if matches!(&self.cls_embed, Some(e) if e.is_empty()) {
            return Err(Error::validation(format!(
                "pack {}: cls_embed present but empty",
                self.image_id
            )));
        }
        let header = [
            self.img_h,
            self.img_w,
            self.patch_size,
            self.grid_h,
            self.grid_w,
            self.heads,
            self.head_dim,
            self.embed_dim(),
        ];
        if header.iter().any(|&v| v > u32::MAX as usize) {
            return Err(Error::validation(format!(
                "pack {}: dimension exceeds u32 range",
                self.image_id
            )));
        }
        let all = self
            .q_cls
            .iter()
            .chain(&self.k_patch)
            .chain(self.cls_embed.iter().flatten());
        if let Some(v) = all.into_iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "pack {}: non-finite value {v}",
                self.image_id
            )));
        }
        Ok(())
    }

    /// Serializes to the MDFP byte layout. Fails if the pack is invalid.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let n_floats = self.q_cls.len() + self.k_patch.len() + self.embed_dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n_floats);
        out.extend_from_slice(PACK_MAGIC);
        out.extend_from_slice(&PACK_VERSION.to_le_bytes());
        for v in [
            self.img_h,
            self.img_w,
            self.patch_size,
            self.grid_h,
            self.grid_w,
            self.heads,
            self.head_dim,
            self.embed_dim(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let floats = self
            .q_cls
            .iter()
            .chain(&self.k_patch)
            .chain(self.cls_embed.iter().flatten());
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses MDFP bytes; `image_id` is supplied by the caller.
    pub fn from_bytes(image_id: &str, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != PACK_MAGIC {
            return Err(Error::format(format!("{image_id}: missing MDFP magic")));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != PACK_VERSION {
            return Err(Error::format(format!(
                "{image_id}: unsupported MDFP version {version}"
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::corruption(format!("{image_id}: truncated header")));
        }
        let mut header = [0usize; 8];
        for (i, h) in header.iter_mut().enumerate() {
            let at = 8 + 4 * i;
            *h = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        let [img_h, img_w, patch_size, grid_h, grid_w, heads, head_dim, embed_dim] = header;
        let n_q = heads.checked_mul(head_dim);
        let n_k = grid_h
            .checked_mul(grid_w)
            .and_then(|n| n.checked_mul(heads))
            .and_then(|n| n.checked_mul(head_dim));
        let (n_q, n_k) = match (n_q, n_k) {
            (Some(q), Some(k)) => (q, k),
            _ => return Err(Error::corruption(format!("{image_id}: dimensions overflow"))),
        };
        let expected = n_q
            .checked_add(n_k)
            .and_then(|n| n.checked_add(embed_dim))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::corruption(format!("{image_id}: dimensions overflow")))?;
        if bytes.len() != expected {
            return Err(Error::corruption(format!(
                "{image_id}: payload is {} bytes, header implies {}",
                bytes.len(),
                expected
            )));
        }
        let mut floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let q_cls: Vec<f32> = floats.by_ref().take(n_q).collect();
        let k_patch: Vec<f32> = floats.by_ref().take(n_k).collect();
        let cls_embed: Vec<f32> = floats.collect();
        let pack = FeaturePack {
            image_id: image_id.to_string(),
            img_h,
            img_w,
            patch_size,
            grid_h,
            grid_w,
            heads,
            head_dim,
            q_cls,
            k_patch,
            cls_embed: if embed_dim == 0 { None } else { Some(cls_embed) },
        };
        pack.validate()?;
        Ok(pack)
    }
}

/// Reads a pack; the image id is the file stem.
pub fn read_feature_pack(path: impl AsRef<Path>) -> Result<FeaturePack> {
    let path = path.as_ref();
    let image_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(format!("{}: no usable file stem", path.display())))?;
    let bytes = std::fs::read(path)?;
    FeaturePack::from_bytes(image_id, &bytes)
}

/// Writes a pack atomically (temp file in the same directory, then rename).
pub fn write_feature_pack(pack: &FeaturePack, path: impl AsRef<Path>) -> Result<()> {
    let bytes = pack.to_bytes()?;
    write_atomic(path.as_ref(), &bytes)
}
