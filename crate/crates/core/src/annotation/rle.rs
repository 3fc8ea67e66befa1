use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Column-major run lengths, alternating background and foreground and
/// always starting with a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleCounts {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl RleCounts {
    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if total != (self.width * self.height) as u64 {
            return Err(Error::data(format!(
                "RLE counts sum to {total}, expected {}x{}={}",
                self.width,
                self.height,
                self.width * self.height
            )));
        }
        if let Some(pos) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::data(format!(
                "RLE count {} is zero; only the first run may be empty",
                pos + 1
            )));
        }
        Ok(())
    }

    /// COCO's compressed string form of the counts.
    pub fn to_compressed(&self) -> String {
        let mut out = Vec::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut chunk = x & 0x1f;
                x >>= 5;
                let more = if chunk & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    chunk |= 0x20;
                }
                out.push((chunk + 48) as u8);
                if !more {
                    break;
                }
            }
        }
        String::from_utf8(out).expect("compressed RLE is ASCII")
    }

    /// Parses COCO's compressed string form.
    pub fn from_compressed(width: usize, height: usize, s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0;
            loop {
                let b = *bytes.get(p).ok_or_else(|| {
                    Error::data("compressed RLE string ends inside a run")
                })?;
                if !(48..48 + 64).contains(&b) || k > 10 {
                    return Err(Error::data(format!(
                        "invalid byte {b:#x} in compressed RLE"
                    )));
                }
                let c = (b - 48) as i64;
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            let run = u32::try_from(x)
                .map_err(|_| Error::data(format!("negative run {x} in compressed RLE")))?;
            counts.push(run);
        }
        let rle = RleCounts {
            width,
            height,
            counts,
        };
        rle.validate()?;
        Ok(rle)
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleCounts {
    let (w, h) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let bit = mask.get(x, y);
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleCounts {
        width: w,
        height: h,
        counts,
    }
}

pub fn rle_decode(rle: &RleCounts) -> Result<BinaryMask> {
    rle.validate()?;
    let (w, h) = (rle.width, rle.height);
    let mut mask = BinaryMask::empty(w, h);
    let mut pos = 0usize;
    for (i, &c) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            for k in pos..pos + c as usize {
                mask.set(k / h, k % h, true);
            }
        }
        pos += c as usize;
    }
    Ok(mask)
}
