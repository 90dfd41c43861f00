//! Uncompressed COCO run-length encoding: column-major, counts start with a zero-run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn height(&self) -> usize {
        self.size[0] as usize
    }

    pub fn width(&self) -> usize {
        self.size[1] as usize
    }

    /// Sum of all runs; must equal `height * width` for a well-formed encoding.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Number of foreground pixels without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn encode_rle(mask: &BinaryMask) -> Rle {
    let (h, w) = mask.shape();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get(y, x);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    if h * w > 0 {
        counts.push(run);
    }
    Rle {
        size: [h as u32, w as u32],
        counts,
    }
}

pub fn decode_rle(rle: &Rle) -> Result<BinaryMask> {
    let (h, w) = (rle.height(), rle.width());
    let expected = h as u64 * w as u64;
    if rle.total() != expected {
        return Err(Error::format(format!(
            "rle counts sum to {} but size {}x{} needs {}",
            rle.total(),
            h,
            w,
            expected
        )));
    }
    let mut bits = vec![false; h * w];
    let mut pos = 0usize;
    let mut value = false;
    for &c in &rle.counts {
        if value {
            for p in pos..pos + c as usize {
                // column-major position p -> (row, col)
                bits[(p % h) * w + p / h] = true;
            }
        }
        pos += c as usize;
        value = !value;
    }
    BinaryMask::from_bits(h, w, bits)
}
