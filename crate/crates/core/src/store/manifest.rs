//! Line-delimited JSON candidate manifests.
//!
//! One object per line:
//! `{"image_id":"..","score":0.97,"label":3,"bbox":[x,y,w,h],"rle":{"size":[h,w],"counts":[..]}}`
//! with `label` nullable.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_to_bbox, BBox, BinaryMask};
use crate::store::rle::{decode_rle, encode_rle, Rle};
use crate::store::write_atomic;

/// An object mask candidate: pixel mask, box, confidence and optional cluster label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub image_id: String,
    pub score: f64,
    pub label: Option<u32>,
    pub bbox: BBox,
    pub rle: Rle,
}

impl Candidate {
    /// Encodes `mask` and derives its tight box (`[0,0,0,0]` for an empty mask).
    pub fn from_mask(image_id: impl Into<String>, mask: &BinaryMask, score: f64, label: Option<u32>) -> Self {
        Candidate {
            image_id: image_id.into(),
            score,
            label,
            bbox: mask_to_bbox(mask).unwrap_or(BBox::EMPTY),
            rle: encode_rle(mask),
        }
    }

    pub fn mask(&self) -> Result<BinaryMask> {
        decode_rle(&self.rle)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rle.height(), self.rle.width())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::validation(format!(
                "{}: score {} outside [0, 1]",
                self.image_id, self.score
            )));
        }
        if self.label == Some(0) {
            return Err(Error::validation(format!(
                "{}: label 0 is reserved for background",
                self.image_id
            )));
        }
        let mask = self.mask()?;
        let tight = mask_to_bbox(&mask).unwrap_or(BBox::EMPTY);
        if tight != self.bbox {
            return Err(Error::validation(format!(
                "{}: bbox {:?} is not the tight box {:?} of the mask",
                self.image_id, self.bbox, tight
            )));
        }
        Ok(())
    }
}

pub fn parse_manifest(reader: impl Read) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Candidate = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("manifest line {}: {e}", i + 1)))?;
        rec.validate().map_err(|e| match e {
            Error::Validation(m) => Error::validation(format!("manifest line {}: {m}", i + 1)),
            Error::Format(m) => Error::format(format!("manifest line {}: {m}", i + 1)),
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Candidate>> {
    parse_manifest(std::fs::File::open(path)?)
}

/// Serializes records in the given order, one line each.
pub fn manifest_to_string(records: &[Candidate]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        r.validate()?;
        let line = serde_json::to_string(r)
            .map_err(|e| Error::format(format!("{}: {e}", r.image_id)))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(records: &[Candidate], path: impl AsRef<Path>) -> Result<()> {
    let text = manifest_to_string(records)?;
    write_atomic(path.as_ref(), text.as_bytes())
}
